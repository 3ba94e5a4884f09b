use proptest::prelude::*;
use softprompt::synthetic::{pretraining_texts, synthetic_examples};
use softprompt::tokenizer::{train_bpe, Vocab};

fn corpus() -> Vec<String> {
    pretraining_texts(&synthetic_examples(60, 2, "tok-"))
}

/// 100 strings: synthetic dialogue lines, plus non-ASCII, control and
/// whitespace-heavy cases.
fn fixture_strings() -> Vec<String> {
    let mut v: Vec<String> = vec![
        "".into(),
        " ".into(),
        "\n\n\t ".into(),
        "naïve café résumé".into(),
        "Größe: 1,80 m".into(),
        "患者は頭痛を訴えている。".into(),
        "Пациент жалуется на боль.".into(),
        "مريض يعاني من الصداع".into(),
        "emoji 🙂🩺💊 mixed".into(),
        "combining e\u{301} and a\u{308}".into(),
        "zero\u{200b}width".into(),
        "tabs\tand\r\nCRLF".into(),
        "[NAME] was seen on [DATE].".into(),
        "   leading and trailing   ".into(),
        "Input: x\n Output:".into(),
        "\u{feff}bom".into(),
    ];
    let texts = corpus();
    let mut i = 0;
    while v.len() < 100 {
        let t = &texts[i % texts.len()];
        let cut = t
            .char_indices()
            .nth(7 * i % t.chars().count().max(1))
            .map_or(0, |(b, _)| b);
        v.push(t[cut..].to_string());
        i += 1;
    }
    v
}

#[test]
fn hundred_fixture_strings_round_trip() {
    let vocab = train_bpe(&corpus(), 400, 0).unwrap();
    let strings = fixture_strings();
    assert_eq!(strings.len(), 100);
    for s in &strings {
        let ids = vocab.encode(s);
        assert_eq!(&vocab.decode(&ids).unwrap(), s);
        let sp = vocab.specials();
        assert!(ids.iter().all(|&i| i != sp.bos && i != sp.eos && i != sp.pad));
    }
}

#[test]
fn merges_shrink_encodings_monotonically() {
    let texts = corpus();
    let sizes = [259, 280, 320, 400, 512];
    let vocabs: Vec<Vocab> = sizes.iter().map(|&n| train_bpe(&texts, n, 0).unwrap()).collect();
    for pair in vocabs.windows(2) {
        assert!(pair[1].merges().starts_with(pair[0].merges()));
    }
    for s in fixture_strings() {
        let lens: Vec<usize> = vocabs.iter().map(|v| v.encode(&s).len()).collect();
        assert!(lens.windows(2).all(|w| w[1] <= w[0]), "{s:?}: {lens:?}");
    }
}

#[test]
fn training_is_deterministic_and_serializes() {
    let texts = corpus();
    let a = train_bpe(&texts, 350, 0).unwrap();
    let b = train_bpe(&texts, 350, 99).unwrap();
    assert_eq!(a.merges(), b.merges());
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let back = Vocab::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(back.merges(), a.merges());
    assert_eq!(back.encode("Doctor: hello"), a.encode("Doctor: hello"));
}

#[test]
fn identical_pair_statistics_give_identical_merges() {
    let a = train_bpe(&["ab ab cd", "cd"], 265, 0).unwrap();
    let b = train_bpe(&["cd", "ab cd ab"], 265, 0).unwrap();
    assert_eq!(a.merges(), b.merges());
}

#[test]
fn vocab_below_minimum_rejected() {
    assert!(train_bpe(&["x"], 258, 0).is_err());
    assert!(Vocab::bytes_only().decode(&[100_000]).is_err());
}

proptest! {
    #[test]
    fn round_trip_arbitrary_text(s in any::<String>()) {
        let vocab = train_bpe(&corpus()[..10], 300, 0).unwrap();
        prop_assert_eq!(vocab.decode(&vocab.encode(&s)).unwrap(), s);
    }
}
