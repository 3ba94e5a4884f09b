//! Synthetic doctor-patient dialogues with note-section summaries, and a
//! multi-task pretraining corpus built from them.
//!
//! Every pretraining document is `{cue}\nInput: {source}\n Output:{target}`.
//! The summarization cue is the only thing telling the model to summarize, so
//! a soft prompt placed where the cue would be has a real job to do.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Example, SplitSet};
use crate::prompt::frame_text;

pub const SECTION_HEADERS: [&str; 20] = [
    "genhx",
    "medications",
    "pastmedicalhx",
    "cc",
    "fam/sochx",
    "allergy",
    "ros",
    "pastsurgical",
    "assessment",
    "exam",
    "diagnosis",
    "plan",
    "disposition",
    "edconsult",
    "immunizations",
    "imaging",
    "gynhx",
    "procedures",
    "other_history",
    "labs",
];

pub const SUMMARY_CUE: &str = "Summarize:";
pub const SECTION_CUE: &str = "Section:";

const SYMPTOMS: &[&str] = &[
    "headache",
    "cough",
    "fever",
    "back pain",
    "nausea",
    "dizziness",
    "chest pain",
    "rash",
    "fatigue",
    "sore throat",
];
const DURATIONS: &[&str] = &["two days", "one week", "three weeks", "a month", "six months", "a year"];
const CONDITIONS: &[&str] = &[
    "diabetes",
    "asthma",
    "hypertension",
    "migraine",
    "arthritis",
    "anemia",
    "gout",
    "reflux",
];
const RELATIVES: &[&str] = &["mother", "father", "sister", "brother", "grandmother"];
const DRUGS: &[&str] = &[
    "aspirin",
    "metformin",
    "lisinopril",
    "ibuprofen",
    "insulin",
    "penicillin",
    "albuterol",
    "omeprazole",
];
const SURGERIES: &[&str] = &[
    "appendectomy",
    "knee surgery",
    "a c-section",
    "gallbladder removal",
    "hernia repair",
];
const WHEN: &[&str] = &["last year", "in 2010", "as a child", "two years ago", "last month"];
const BODY_PARTS: &[&str] = &["lungs", "heart", "abdomen", "throat", "knee", "skin"];
const FINDINGS: &[&str] = &["normal", "clear", "swollen", "tender", "mildly abnormal"];
const PLACES: &[&str] = &["home", "to rehab", "to the ward"];
const SPECIALISTS: &[&str] = &["cardiologist", "neurologist", "surgeon", "dermatologist"];
const VACCINES: &[&str] = &["flu", "tetanus", "hepatitis b", "covid"];
const SCANS: &[&str] = &["x-ray", "ct scan", "mri", "ultrasound"];
const PROCEDURES: &[&str] = &["biopsy", "blood draw", "wound repair", "joint injection"];
const JOBS: &[&str] = &["teacher", "nurse", "driver", "cook", "farmer"];
/// (first person, third person).
const HABITS: &[(&str, &str)] = &[
    ("smoke daily", "smokes daily"),
    ("do not drink", "does not drink"),
    ("walk every day", "walks every day"),
    ("drink on weekends", "drinks on weekends"),
];
const LABS: &[&str] = &["blood sugar", "cholesterol", "potassium", "hemoglobin"];
const OPENERS: &[&str] = &[
    "",
    "Doctor: Hello, good to see you.\n",
    "Doctor: Hi, please have a seat.\n",
];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty slot list")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// (doctor line, patient line, summary) for one header.
fn render(header: &str, rng: &mut ChaCha8Rng) -> (String, String, String) {
    let mut p = |xs: &[&'static str]| pick(rng, xs);
    match header {
        "genhx" => {
            let (s, d) = (p(SYMPTOMS), p(DURATIONS));
            (
                "What brings you in today?".into(),
                format!("I have had {s} for {d}."),
                format!("The patient reports {s} for {d}."),
            )
        }
        "medications" => {
            let (m, c) = (p(DRUGS), p(CONDITIONS));
            (
                "Are you taking any medications?".into(),
                format!("Yes, I take {m} for my {c}."),
                format!("Takes {m} for {c}."),
            )
        }
        "pastmedicalhx" => {
            let c = p(CONDITIONS);
            (
                "Any past medical problems?".into(),
                format!("I was told I have {c}."),
                format!("History of {c}."),
            )
        }
        "cc" => {
            let s = p(SYMPTOMS);
            (
                "What is bothering you the most?".into(),
                format!("Mostly the {s}."),
                capitalize(&format!("{s}.")),
            )
        }
        "fam/sochx" => {
            let (r, c) = (p(RELATIVES), p(CONDITIONS));
            (
                "Does anyone in your family have health problems?".into(),
                format!("My {r} has {c}."),
                format!("Family history of {c} in {r}."),
            )
        }
        "allergy" => {
            let m = p(DRUGS);
            (
                "Do you have any allergies?".into(),
                format!("I am allergic to {m}."),
                format!("Allergic to {m}."),
            )
        }
        "ros" => {
            let (a, b) = (p(SYMPTOMS), p(SYMPTOMS));
            (
                "Any other symptoms?".into(),
                format!("I have {a} but no {b}."),
                format!("Positive for {a}, negative for {b}."),
            )
        }
        "pastsurgical" => {
            let (s, w) = (p(SURGERIES), p(WHEN));
            (
                "Have you had any surgeries?".into(),
                format!("I had {s} {w}."),
                format!("Prior {s} {w}."),
            )
        }
        "assessment" => {
            let c = p(CONDITIONS);
            (
                format!("I think this is {c}."),
                "Okay, what does that mean?".into(),
                format!("Likely {c}."),
            )
        }
        "exam" => {
            let (b, f) = (p(BODY_PARTS), p(FINDINGS));
            (
                format!("Your {b} look {f} on exam."),
                "That is good to know.".into(),
                format!("Exam of {b}: {f}."),
            )
        }
        "diagnosis" => {
            let c = p(CONDITIONS);
            (
                format!("The tests confirm {c}."),
                "I was worried about that.".into(),
                format!("Diagnosis of {c}."),
            )
        }
        "plan" => {
            let (m, d) = (p(DRUGS), p(DURATIONS));
            (
                format!("Let us start {m} and see you in {d}."),
                "Sounds good.".into(),
                format!("Start {m}, follow up in {d}."),
            )
        }
        "disposition" => {
            let pl = p(PLACES);
            (
                format!("You can go {pl} today."),
                "Thank you, doctor.".into(),
                format!("Discharged {pl}."),
            )
        }
        "edconsult" => {
            let s = p(SPECIALISTS);
            (
                format!("I will ask the {s} to see you."),
                "All right.".into(),
                format!("{} consulted.", capitalize(s)),
            )
        }
        "immunizations" => {
            let (v, w) = (p(VACCINES), p(WHEN));
            (
                "Are your vaccines up to date?".into(),
                format!("I got the {v} vaccine {w}."),
                format!("Received {v} vaccine {w}."),
            )
        }
        "imaging" => {
            let (s, b, f) = (p(SCANS), p(BODY_PARTS), p(FINDINGS));
            (
                format!("The {s} of your {b} was {f}."),
                "Is that bad?".into(),
                format!("{} of {b} {f}.", capitalize(s)),
            )
        }
        "gynhx" => {
            let d = p(DURATIONS);
            (
                "When was your last period?".into(),
                format!("About {d} ago."),
                format!("Last menstrual period {d} ago."),
            )
        }
        "procedures" => {
            let pr = p(PROCEDURES);
            (
                format!("We will do a {pr} today."),
                "Will it hurt?".into(),
                format!("{} performed.", capitalize(pr)),
            )
        }
        "other_history" => {
            let j = p(JOBS);
            let (mine, theirs) = *HABITS.choose(rng).expect("non-empty");
            (
                "Tell me about your work and habits.".into(),
                format!("I am a {j} and I {mine}."),
                format!("Works as a {j}, {theirs}."),
            )
        }
        "labs" => {
            let (l, f) = (p(LABS), p(FINDINGS));
            (
                format!("Your {l} came back {f}."),
                "What should I do?".into(),
                capitalize(&format!("{l} {f}.")),
            )
        }
        other => unreachable!("unknown synthetic header {other}"),
    }
}

fn header_index(rng: &mut ChaCha8Rng) -> usize {
    // Decreasing weights give a stable frequency order for stratification.
    let total: usize = (1..=SECTION_HEADERS.len()).sum();
    let mut r = rng.random_range(0..total);
    for i in 0..SECTION_HEADERS.len() {
        let w = SECTION_HEADERS.len() - i;
        if r < w {
            return i;
        }
        r -= w;
    }
    unreachable!()
}

fn make_example(id: String, header: &str, rng: &mut ChaCha8Rng) -> Example {
    let opener = pick(rng, OPENERS);
    let (doc, pat, summary) = render(header, rng);
    Example {
        id,
        section_header: header.to_string(),
        dialogue: format!("{opener}Doctor: {doc}\nPatient: {pat}"),
        summary,
    }
}

/// `n` examples with headers drawn by decreasing frequency.
pub fn synthetic_examples(n: usize, seed: u64, id_prefix: &str) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let h = SECTION_HEADERS[header_index(&mut rng)];
            make_example(format!("{id_prefix}{i}"), h, &mut rng)
        })
        .collect()
}

/// `per_header` examples for every one of the 20 headers, in header order.
pub fn balanced_examples(per_header: usize, seed: u64, id_prefix: &str) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_header * SECTION_HEADERS.len());
    for (hi, h) in SECTION_HEADERS.iter().enumerate() {
        // Earlier headers get extra examples so header frequencies differ.
        let count = per_header + (SECTION_HEADERS.len() - hi) / 10;
        for k in 0..count {
            out.push(make_example(format!("{id_prefix}{hi}-{k}"), h, &mut rng));
        }
    }
    out
}

pub fn synthetic_splits(train: usize, validation: usize, test: usize, seed: u64) -> SplitSet {
    SplitSet {
        train: synthetic_examples(train, seed, "train-"),
        validation: synthetic_examples(validation, seed.wrapping_add(1), "val-"),
        test: synthetic_examples(test, seed.wrapping_add(2), "test-"),
    }
}

/// Text of one cued document; the pretraining loop appends EOS.
pub fn cued_document(cue: &str, source: &str, target: &str) -> String {
    format!("{cue}\n{}{target}", frame_text(source))
}

const FOLLOW_UPS: &[&str] = &[
    "Doctor: Anything else I should know?",
    "Doctor: Okay, let us talk about next steps.",
    "Doctor: I see. Thank you for telling me.",
];

/// Uncued document: the dialogue continued by another doctor turn. This is
/// what the model does with a bare frame, so summarizing needs a cue.
pub fn continuation_document(dialogue: &str, index: usize) -> String {
    format!("{}{}", frame_text(dialogue), FOLLOW_UPS[index % FOLLOW_UPS.len()])
}

/// Three documents per example: cued summary, cued section label, and an
/// uncued continuation.
pub fn pretraining_texts(examples: &[Example]) -> Vec<String> {
    let mut out = Vec::with_capacity(examples.len() * 3);
    for (i, ex) in examples.iter().enumerate() {
        out.push(cued_document(SUMMARY_CUE, &ex.dialogue, &ex.summary));
        out.push(cued_document(SECTION_CUE, &ex.dialogue, &ex.section_header));
        out.push(continuation_document(&ex.dialogue, i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn every_header_renders() {
        let ex = balanced_examples(1, 3, "x");
        let headers: HashSet<_> = ex.iter().map(|e| e.section_header.as_str()).collect();
        assert_eq!(headers.len(), 20);
        assert!(ex.iter().all(|e| !e.dialogue.is_empty() && !e.summary.is_empty()));
    }

    #[test]
    fn deterministic_and_unique_ids() {
        let a = synthetic_examples(50, 9, "t");
        assert_eq!(a, synthetic_examples(50, 9, "t"));
        let ids: HashSet<_> = a.iter().map(|e| &e.id).collect();
        assert_eq!(ids.len(), 50);
    }

    #[test]
    fn documents_carry_cues() {
        let ex = synthetic_examples(1, 0, "t");
        let docs = pretraining_texts(&ex);
        assert_eq!(docs.len(), 3);
        assert!(docs[0].starts_with("Summarize:\nInput: "));
        assert!(docs[0].ends_with(&ex[0].summary));
    }
}
