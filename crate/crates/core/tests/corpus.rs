use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use proptest::prelude::*;
use softprompt::corpus::*;
use softprompt::synthetic::{balanced_examples, SECTION_HEADERS};
use softprompt::Error;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn expected_rows() -> Vec<Example> {
    let ex = |id: &str, h: &str, s: &str, d: &str| Example {
        id: id.into(),
        section_header: h.into(),
        summary: s.into(),
        dialogue: d.into(),
    };
    vec![
        ex(
            "0",
            "GENHX",
            "The patient is a 45-year-old male with knee pain, worse on stairs.",
            "Doctor: What brings you in today?\nPatient: My right knee hurts, especially on stairs.",
        ),
        ex(
            "1",
            "ALLERGY",
            "No known drug allergies.",
            "Doctor: Any allergies to medications?\nPatient: None that I know of.",
        ),
        ex(
            "2",
            "FAM/SOCHX",
            "Mother had \"type 2\" diabetes.",
            "Doctor: Any family history?\nPatient: My mom had diabetes, she called it \"type 2\".",
        ),
    ]
}

#[test]
fn three_row_csv_matches_hand_written_cells() {
    let rows = load_split(&fixture("three_rows.csv"), &ColumnMap::default()).unwrap();
    assert_eq!(rows, expected_rows());
}

#[test]
fn jsonl_matches_csv() {
    let rows = load_split(&fixture("three_rows.jsonl"), &ColumnMap::default()).unwrap();
    assert_eq!(rows, expected_rows());
}

#[test]
fn column_map_renames() {
    let cols = ColumnMap {
        id: "note_id".into(),
        section_header: "header".into(),
        summary: "summary_text".into(),
        dialogue: "conversation".into(),
    };
    let rows = load_split(&fixture("renamed_columns.csv"), &cols).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].id.as_str(), rows[0].summary.as_str()), ("7", "Cough."));
}

#[test]
fn loader_errors() {
    let cols = ColumnMap::default();
    assert!(matches!(load_split(&fixture("nope.csv"), &cols), Err(Error::Io { .. })));
    assert!(matches!(
        load_split(&fixture("header_only.csv"), &cols),
        Err(Error::EmptySplit(_))
    ));
    assert!(matches!(load_split(&fixture("duplicate_id.csv"), &cols), Err(Error::DuplicateId(id)) if id == "0"));
    assert!(matches!(
        load_split(&fixture("empty_summary.csv"), &cols),
        Err(Error::EmptyField { field: "summary", .. })
    ));
    assert!(matches!(
        load_split(&fixture("missing_column.csv"), &cols),
        Err(Error::MissingColumn { column, .. }) if column == "section_text"
    ));
}

#[test]
fn colliding_ids_across_splits_are_qualified() {
    let p = fixture("three_rows.csv");
    let set = load_dataset(&p, &p, &p, &ColumnMap::default()).unwrap();
    assert_eq!(set.validation[0].id, "validation:0");
    assert_eq!(set.test[2].id, "test:2");
    set.validate().unwrap();
}

#[test]
fn stats_hand_counts() {
    let mk = |d: &str| Example {
        id: d.into(),
        section_header: "H".into(),
        summary: "s".into(),
        dialogue: d.into(),
    };
    let s = corpus_stats(&[mk("a b"), mk("a b c d")]).unwrap();
    assert_eq!(s.sample_count, 2);
    assert_eq!(s.avg_dialogue_words, 3.0);
    assert!(corpus_stats(&[]).is_err());

    let rows = load_split(&fixture("three_rows.csv"), &ColumnMap::default()).unwrap();
    let s = corpus_stats(&rows).unwrap();
    // 14 + 11 + 14 dialogue words, 12 + 4 + 5 summary words.
    assert_eq!(s.avg_dialogue_words, 13.0);
    assert_eq!(s.avg_summary_words, 7.0);
    assert_eq!(s, corpus_stats(&rows).unwrap());
}

#[test]
fn twenty_of_twenty_headers_one_each() {
    let ex = balanced_examples(3, 11, "b-");
    let s = stratified_sample(&ex, 20, 4).unwrap();
    let headers: HashSet<&str> = s.iter().map(|e| e.section_header.as_str()).collect();
    assert_eq!(headers.len(), SECTION_HEADERS.len());
}

#[test]
fn full_draw_is_whole_set() {
    let ex = balanced_examples(2, 3, "w-");
    let s = stratified_sample(&ex, ex.len(), 9).unwrap();
    let a: HashSet<&Example> = s.iter().collect();
    let b: HashSet<&Example> = ex.iter().collect();
    assert_eq!(a, b);
    assert!(stratified_sample(&ex, 0, 9).is_err());
    assert!(stratified_sample(&ex, ex.len() + 1, 9).is_err());
}

fn header_pool() -> impl Strategy<Value = Vec<Example>> {
    prop::collection::vec(0usize..6, 1..40).prop_map(|hs| {
        hs.into_iter()
            .enumerate()
            .map(|(i, h)| Example {
                id: format!("e{i}"),
                section_header: format!("H{h}"),
                summary: "s".into(),
                dialogue: "d".into(),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn samples_are_nested(ex in header_pool(), seed in any::<u64>(), a in 1usize..40, b in 1usize..40) {
        let (n1, n2) = (a.min(b).min(ex.len()), a.max(b).min(ex.len()));
        let s1: HashSet<String> = stratified_sample(&ex, n1, seed).unwrap().into_iter().map(|e| e.id).collect();
        let s2: HashSet<String> = stratified_sample(&ex, n2, seed).unwrap().into_iter().map(|e| e.id).collect();
        prop_assert!(s1.is_subset(&s2));
    }

    #[test]
    fn every_header_gets_its_share(ex in header_pool(), seed in any::<u64>(), n in 1usize..40) {
        let n = n.min(ex.len());
        let mut available: HashMap<&str, usize> = HashMap::new();
        for e in &ex {
            *available.entry(e.section_header.as_str()).or_default() += 1;
        }
        let h = available.len();
        let s = stratified_sample(&ex, n, seed).unwrap();
        prop_assert_eq!(s.len(), n);
        let mut got: HashMap<&str, usize> = HashMap::new();
        for e in &s {
            *got.entry(e.section_header.as_str()).or_default() += 1;
        }
        for (header, &avail) in &available {
            let g = got.get(header).copied().unwrap_or(0);
            prop_assert!(g >= (n / h).min(avail), "{} got {} of {}", header, g, avail);
        }
    }

    #[test]
    fn sampling_is_deterministic(ex in header_pool(), seed in any::<u64>()) {
        let n = ex.len().div_ceil(2);
        prop_assert_eq!(stratified_sample(&ex, n, seed).unwrap(), stratified_sample(&ex, n, seed).unwrap());
    }
}
