//! ROUGE-1/2/L F1, corpus BLEU-4, the Overall aggregate, and an external
//! BERTScore hook.

use std::collections::HashMap;
use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Score {
    fn from_counts(overlap: usize, cand: usize, refr: usize) -> Self {
        if cand == 0 || refr == 0 || overlap == 0 {
            return Score {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            };
        }
        let p = overlap as f64 / cand as f64;
        let r = overlap as f64 / refr as f64;
        Score {
            precision: p,
            recall: r,
            f1: 2.0 * p * r / (p + r),
        }
    }
}

/// Lowercases, replaces every non-alphanumeric character with a space, and
/// splits on whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_overlap(cand: &HashMap<&[String], usize>, refr: &HashMap<&[String], usize>) -> usize {
    cand.iter()
        .map(|(g, &c)| c.min(refr.get(g).copied().unwrap_or(0)))
        .sum()
}

fn ngram_total(tokens: &[String], n: usize) -> usize {
    (tokens.len() + 1).saturating_sub(n)
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Score {
    assert!(n >= 1, "rouge_n needs n >= 1");
    let c = normalize(candidate);
    let r = normalize(reference);
    let overlap = clipped_overlap(&ngram_counts(&c, n), &ngram_counts(&r, n));
    Score::from_counts(overlap, ngram_total(&c, n), ngram_total(&r, n))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> Score {
    let c = normalize(candidate);
    let r = normalize(reference);
    Score::from_counts(lcs_len(&c, &r), c.len(), r.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuBreakdown {
    /// Pooled clipped precisions for n = 1..=4.
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
    pub bleu: f64,
}

pub fn bleu_breakdown<C: AsRef<str>, R: AsRef<str>>(candidates: &[C], references: &[R]) -> Result<BleuBreakdown> {
    if candidates.len() != references.len() {
        return Err(Error::LengthMismatch(candidates.len(), references.len()));
    }
    let mut matched = [0usize; 4];
    let mut possible = [0usize; 4];
    let (mut c_len, mut r_len) = (0, 0);
    for (c, r) in candidates.iter().zip(references) {
        let c = normalize(c.as_ref());
        let r = normalize(r.as_ref());
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            matched[n - 1] += clipped_overlap(&ngram_counts(&c, n), &ngram_counts(&r, n));
            possible[n - 1] += ngram_total(&c, n);
        }
    }
    let mut precisions = [0.0; 4];
    for i in 0..4 {
        if possible[i] > 0 {
            precisions[i] = matched[i] as f64 / possible[i] as f64;
        }
    }
    let brevity_penalty = if c_len == 0 {
        0.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp().min(1.0)
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        brevity_penalty * (precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp()
    };
    Ok(BleuBreakdown {
        precisions,
        brevity_penalty,
        candidate_len: c_len,
        reference_len: r_len,
        bleu,
    })
}

/// Corpus-level BLEU-4, uniform weights, no smoothing.
pub fn bleu<C: AsRef<str>, R: AsRef<str>>(candidates: &[C], references: &[R]) -> Result<f64> {
    Ok(bleu_breakdown(candidates, references)?.bleu)
}

/// Arithmetic mean of the metrics present.
pub fn aggregate(rouge1: f64, rouge2: f64, rouge_l: f64, bleu: f64, bertscore: Option<f64>) -> f64 {
    match bertscore {
        Some(b) => (rouge1 + rouge2 + rouge_l + bleu + b) / 5.0,
        None => (rouge1 + rouge2 + rouge_l + bleu) / 4.0,
    }
}

pub const FOUR_METRIC_MEAN: &str = "4-metric mean";
pub const FIVE_METRIC_MEAN: &str = "5-metric mean";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "Rouge-1")]
    pub rouge1: f64,
    #[serde(rename = "Rouge-2")]
    pub rouge2: f64,
    #[serde(rename = "Rouge-L")]
    pub rouge_l: f64,
    #[serde(rename = "BLEU")]
    pub bleu: f64,
    #[serde(rename = "BERTScore")]
    pub bertscore: Option<f64>,
    #[serde(rename = "Overall")]
    pub overall: f64,
    pub n_examples: usize,
    pub overall_basis: String,
}

impl MetricReport {
    pub fn new(rouge1: f64, rouge2: f64, rouge_l: f64, bleu: f64, bertscore: Option<f64>, n_examples: usize) -> Self {
        Self {
            rouge1,
            rouge2,
            rouge_l,
            bleu,
            bertscore,
            overall: aggregate(rouge1, rouge2, rouge_l, bleu, bertscore),
            n_examples,
            overall_basis: if bertscore.is_some() {
                FIVE_METRIC_MEAN
            } else {
                FOUR_METRIC_MEAN
            }
            .into(),
        }
    }

    pub fn with_bertscore(&self, bertscore: f64) -> Self {
        Self::new(
            self.rouge1,
            self.rouge2,
            self.rouge_l,
            self.bleu,
            Some(bertscore),
            self.n_examples,
        )
    }

    pub fn to_text(&self) -> String {
        let bert = self.bertscore.map_or_else(|| "-".to_string(), |b| format!("{b:.4}"));
        format!(
            "{:<8} {:<8} {:<8} {:<8} {:<10} {:<8}\n{:<8.4} {:<8.4} {:<8.4} {:<8.4} {:<10} {:<8.4}\n({} examples, {})\n",
            "Rouge-1",
            "Rouge-2",
            "Rouge-L",
            "BLEU",
            "BERTScore",
            "Overall",
            self.rouge1,
            self.rouge2,
            self.rouge_l,
            self.bleu,
            bert,
            self.overall,
            self.n_examples,
            self.overall_basis
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub candidate: String,
    pub reference: String,
}

impl Pair {
    pub fn new(candidate: impl Into<String>, reference: impl Into<String>) -> Self {
        Self {
            candidate: candidate.into(),
            reference: reference.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Program and arguments of an external BERTScore scorer.
    pub scorer: Option<Vec<String>>,
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

/// Macro-averaged ROUGE, corpus BLEU, optional external BERTScore.
pub fn evaluate(pairs: &[Pair], options: &EvalOptions) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("evaluate needs at least one pair"));
    }
    let n = pairs.len();
    let r1 = mean(pairs.iter().map(|p| rouge_n(&p.candidate, &p.reference, 1).f1), n);
    let r2 = mean(pairs.iter().map(|p| rouge_n(&p.candidate, &p.reference, 2).f1), n);
    let rl = mean(pairs.iter().map(|p| rouge_l(&p.candidate, &p.reference).f1), n);
    let cands: Vec<&str> = pairs.iter().map(|p| p.candidate.as_str()).collect();
    let refs: Vec<&str> = pairs.iter().map(|p| p.reference.as_str()).collect();
    let b = bleu(&cands, &refs)?;
    let bert = match &options.scorer {
        Some(cmd) => Some(run_external_scorer(cmd, pairs)?),
        None => None,
    };
    Ok(MetricReport::new(r1, r2, rl, b, bert, n))
}

/// Pipes JSON-lines `{candidate, reference}` to `command` and reads back a
/// single `{"bertscore": x}` object.
pub fn run_external_scorer(command: &[String], pairs: &[Pair]) -> Result<f64> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| Error::ScorerFailed("empty scorer command".into()))?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::ScorerFailed(format!("cannot start `{program}`: {e}")))?;

    let mut payload = Vec::new();
    for p in pairs {
        serde_json::to_writer(&mut payload, p)?;
        payload.push(b'\n');
    }
    {
        let mut stdin = child.stdin.take().expect("stdin is piped");
        // A scorer may exit without draining its input; the exit status and
        // output decide the outcome.
        let _ = stdin.write_all(&payload);
    }
    let out = child
        .wait_with_output()
        .map_err(|e| Error::ScorerFailed(format!("waiting on `{program}`: {e}")))?;
    if !out.status.success() {
        return Err(Error::ScorerFailed(format!(
            "`{program}` exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let value: serde_json::Value =
        serde_json::from_str(text.trim()).map_err(|_| Error::MalformedScorerOutput(text.trim().to_string()))?;
    let score = value
        .get("bertscore")
        .and_then(serde_json::Value::as_f64)
        .ok_or_else(|| Error::MalformedScorerOutput(text.trim().to_string()))?;
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::MalformedScorerOutput(format!(
            "bertscore {score} outside [0, 1]"
        )));
    }
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_is_idempotent() {
        let once = normalize("The Cat, sat! ÉTÉ");
        assert_eq!(once, ["the", "cat", "sat", "été"]);
        assert_eq!(normalize(&once.join(" ")), once);
    }

    #[test]
    fn empty_sets_score_zero() {
        assert_eq!(rouge_n("", "a b", 1).f1, 0.0);
        assert_eq!(rouge_n("a", "a", 2).f1, 0.0);
        assert_eq!(rouge_l("", "").f1, 0.0);
    }

    #[test]
    fn bleu_length_mismatch() {
        assert!(matches!(bleu(&["a"], &["a", "b"]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn evaluate_rejects_empty() {
        assert!(evaluate(&[], &EvalOptions::default()).is_err());
    }

    #[test]
    fn report_flags_basis() {
        let r = MetricReport::new(0.2, 0.2, 0.2, 0.2, None, 1);
        assert_eq!(r.overall_basis, FOUR_METRIC_MEAN);
        assert_eq!(r.with_bertscore(0.7).overall_basis, FIVE_METRIC_MEAN);
    }
}
