//! Dialogue/summary corpus ingestion, dataset statistics and few-shot sampling.
//!
//! Files are either RFC-4180 CSV or JSON-lines. Columns are resolved through a
//! [`ColumnMap`] whose defaults match the public MTS-DIALOG release
//! (`ID`, `section_header`, `section_text`, `dialogue`).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub section_header: String,
    pub dialogue: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub id: String,
    pub section_header: String,
    pub summary: String,
    pub dialogue: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            id: "ID".into(),
            section_header: "section_header".into(),
            summary: "section_text".into(),
            dialogue: "dialogue".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

impl SplitSet {
    pub fn splits(&self) -> [(&'static str, &[Example]); 3] {
        [
            ("Training", &self.train),
            ("Validation", &self.validation),
            ("Test", &self.test),
        ]
    }

    /// Checks that no id is shared between splits.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (_, split) in self.splits() {
            let ids: HashSet<&str> = split.iter().map(|e| e.id.as_str()).collect();
            for id in &ids {
                if !seen.insert(*id) {
                    return Err(Error::SplitOverlap(id.to_string()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sample_count: usize,
    pub avg_dialogue_words: f64,
    pub avg_summary_words: f64,
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("json") | Some("ndjson")
    )
}

/// Reads one split file. Rows whose mapped fields are all blank are skipped.
pub fn load_split(path: &Path, columns: &ColumnMap) -> Result<Vec<Example>> {
    let rows = if is_jsonl(path) {
        read_jsonl_rows(path, columns)?
    } else {
        read_csv_rows(path, columns)?
    };

    let mut ids = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for [id, header, summary, dialogue] in rows {
        if id.trim().is_empty() && header.trim().is_empty() && summary.trim().is_empty() && dialogue.trim().is_empty() {
            continue;
        }
        if id.trim().is_empty() {
            return Err(Error::EmptyField {
                id: String::new(),
                field: "id",
            });
        }
        if dialogue.trim().is_empty() {
            return Err(Error::EmptyField { id, field: "dialogue" });
        }
        if summary.trim().is_empty() {
            return Err(Error::EmptyField { id, field: "summary" });
        }
        if !ids.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        out.push(Example {
            id,
            section_header: header,
            dialogue,
            summary,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptySplit(path.display().to_string()));
    }
    Ok(out)
}

fn read_csv_rows(path: &Path, columns: &ColumnMap) -> Result<Vec<[String; 4]>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
    let headers = reader.headers()?.clone();
    let index_of = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let idx = [
        index_of(&columns.id)?,
        index_of(&columns.section_header)?,
        index_of(&columns.summary)?,
        index_of(&columns.dialogue)?,
    ];
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(idx.map(|i| record.get(i).unwrap_or("").to_string()));
    }
    Ok(rows)
}

fn read_jsonl_rows(path: &Path, columns: &ColumnMap) -> Result<Vec<[String; 4]>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let names = [
        &columns.id,
        &columns.section_header,
        &columns.summary,
        &columns.dialogue,
    ];
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)?;
        let mut row: [String; 4] = Default::default();
        for (slot, name) in row.iter_mut().zip(names) {
            *slot = match value.get(name.as_str()) {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(serde_json::Value::Null) => String::new(),
                Some(other) => other.to_string(),
                None => {
                    return Err(Error::MissingColumn {
                        path: path.to_path_buf(),
                        column: name.to_string(),
                    })
                }
            };
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Loads the three splits.
///
/// The public MTS-DIALOG files number each split from zero, so raw ids collide
/// across splits. A validation or test id already used by an earlier split is
/// qualified as `<split>:<id>`.
pub fn load_dataset(
    train_path: &Path,
    validation_path: &Path,
    test_path: &Path,
    columns: &ColumnMap,
) -> Result<SplitSet> {
    let train = load_split(train_path, columns)?;
    let mut validation = load_split(validation_path, columns)?;
    let mut test = load_split(test_path, columns)?;

    let mut seen: HashSet<String> = train.iter().map(|e| e.id.clone()).collect();
    for (name, split) in [("validation", &mut validation), ("test", &mut test)] {
        for ex in split.iter_mut() {
            if seen.contains(&ex.id) {
                ex.id = format!("{name}:{}", ex.id);
            }
        }
        seen.extend(split.iter().map(|e| e.id.clone()));
    }

    let set = SplitSet {
        train,
        validation,
        test,
    };
    set.validate()?;
    Ok(set)
}

/// Writes examples as CSV with the default MTS-DIALOG column names.
pub fn write_csv(path: &Path, examples: &[Example]) -> Result<()> {
    let cols = ColumnMap::default();
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([&cols.id, &cols.section_header, &cols.summary, &cols.dialogue])?;
    for e in examples {
        writer.write_record([&e.id, &e.section_header, &e.summary, &e.dialogue])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn corpus_stats(examples: &[Example]) -> Result<CorpusStats> {
    if examples.is_empty() {
        return Err(Error::EmptySplit("no examples to measure".into()));
    }
    let n = examples.len() as f64;
    let dialogue: usize = examples.iter().map(|e| word_count(&e.dialogue)).sum();
    let summary: usize = examples.iter().map(|e| word_count(&e.summary)).sum();
    Ok(CorpusStats {
        sample_count: examples.len(),
        avg_dialogue_words: dialogue as f64 / n,
        avg_summary_words: summary as f64 / n,
    })
}

/// Section headers ordered by descending frequency, ties broken lexicographically.
pub fn headers_by_frequency(examples: &[Example]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in examples {
        *counts.entry(e.section_header.as_str()).or_default() += 1;
    }
    let mut headers: Vec<(String, usize)> = counts.into_iter().map(|(h, c)| (h.to_string(), c)).collect();
    headers.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    headers
}

/// Full stratified draw order for `seed`. Every prefix of this order is a
/// stratified sample, which makes samples of increasing size nested.
pub fn stratified_order(examples: &[Example], seed: u64) -> Vec<usize> {
    let headers = headers_by_frequency(examples);
    let mut by_header: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, e) in examples.iter().enumerate() {
        by_header.entry(e.section_header.as_str()).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues: Vec<std::vec::IntoIter<usize>> = headers
        .iter()
        .map(|(h, _)| {
            let mut members = by_header.remove(h.as_str()).unwrap_or_default();
            members.shuffle(&mut rng);
            members.into_iter()
        })
        .collect();

    let mut order = Vec::with_capacity(examples.len());
    while order.len() < examples.len() {
        for queue in queues.iter_mut() {
            if let Some(i) = queue.next() {
                order.push(i);
            }
        }
    }
    order
}

/// Round-robin sample over section headers, most frequent header first.
pub fn stratified_sample(examples: &[Example], n: usize, seed: u64) -> Result<Vec<Example>> {
    if n == 0 || n > examples.len() {
        return Err(Error::SampleSize {
            requested: n,
            available: examples.len(),
        });
    }
    Ok(stratified_order(examples, seed)
        .into_iter()
        .take(n)
        .map(|i| examples[i].clone())
        .collect())
}

/// Aligned text rendering of per-split statistics.
pub fn format_stats_table(dataset: &str, rows: &[(&str, CorpusStats)]) -> String {
    let mut out = format!(
        "{:<12} {:<11} {:>13} {:>28} {:>27}\n",
        "", "Datasets", "Sample Number", "Dialogue Average Word Count", "Summary Average Word Count"
    );
    for (i, (name, s)) in rows.iter().enumerate() {
        let label = if i == 0 { dataset } else { "" };
        out.push_str(&format!(
            "{:<12} {:<11} {:>13} {:>28.2} {:>27.2}\n",
            label, name, s.sample_count, s.avg_dialogue_words, s.avg_summary_words
        ));
    }
    out
}
