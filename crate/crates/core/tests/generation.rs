use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softprompt::generation::*;
use softprompt::model::{init_model, TransformerConfig, TransformerWeights};
use softprompt::prompt::{init_prompt_encoder, PromptEncoderConfig, PromptEncoderState};
use softprompt::tokenizer::Vocab;

fn setup() -> (Vocab, TransformerWeights<f32>, PromptEncoderState<f32>) {
    let vocab = Vocab::bytes_only();
    let cfg = TransformerConfig::toy_s(vocab.len());
    let w = init_model::<f32>(&cfg, 4).unwrap();
    let p = init_prompt_encoder::<f32>(&PromptEncoderConfig::lstm(4, 1, 16, cfg.d_model), 4).unwrap();
    (vocab, w, p)
}

#[test]
fn greedy_ignores_seed() {
    let (vocab, w, p) = setup();
    let first = generate_ids(&w, Some(&p), &vocab, "Doctor: any pain?", &GenerationConfig::default()).unwrap();
    for seed in 1..10 {
        let cfg = GenerationConfig {
            seed,
            ..Default::default()
        };
        assert_eq!(
            generate_ids(&w, Some(&p), &vocab, "Doctor: any pain?", &cfg).unwrap(),
            first
        );
    }
}

#[test]
fn kv_cache_matches_full_recompute_when_sampling() {
    let (vocab, w, p) = setup();
    for seed in 0..3 {
        let cfg = GenerationConfig {
            top_k: 50,
            top_p: 0.95,
            temperature: 1.5,
            max_new_tokens: 40,
            seed,
            use_kv_cache: true,
        };
        let cached = generate_ids(&w, Some(&p), &vocab, "Patient: my knee hurts", &cfg).unwrap();
        let full = generate_ids(
            &w,
            Some(&p),
            &vocab,
            "Patient: my knee hurts",
            &GenerationConfig {
                use_kv_cache: false,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(cached, full);
    }
}

#[test]
fn output_capped_at_max_new_tokens() {
    let (vocab, w, _) = setup();
    for seed in 0..5 {
        let cfg = GenerationConfig {
            top_k: 300,
            top_p: 1.0,
            temperature: 5.0,
            seed,
            ..Default::default()
        };
        assert!(generate_ids(&w, None, &vocab, "hi", &cfg).unwrap().len() <= 64);
    }
}

#[test]
fn tiny_temperature_is_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let logits: Vec<f64> = (0..20).map(|_| rng.random_range(-4.0..4.0)).collect();
        let argmax = (0..20)
            .max_by(|&a, &b| logits[a].total_cmp(&logits[b]).then(b.cmp(&a)))
            .unwrap();
        let cfg = GenerationConfig {
            top_k: 20,
            top_p: 0.9,
            temperature: 1e-6,
            ..Default::default()
        };
        let s = nucleus_survivors(&logits, &cfg);
        assert_eq!(s, vec![(argmax, 1.0)]);
    }
}

#[test]
fn fixture_renormalizes() {
    let logits: Vec<f64> = [0.5f64, 0.3, 0.15, 0.05].iter().map(|p| p.ln()).collect();
    let cfg = GenerationConfig {
        top_k: usize::MAX,
        top_p: 0.9,
        temperature: 1.0,
        ..Default::default()
    };
    let p = filter_distribution(&logits, &cfg);
    for (got, want) in p.iter().zip([0.5263, 0.3158, 0.1579, 0.0]) {
        assert!((got - want).abs() < 1e-4, "{p:?}");
    }
}

#[test]
fn nucleus_monotone_in_p_over_random_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(2..40);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut ps = [rng.random_range(0.01..1.0), rng.random_range(0.01..1.0)];
        ps.sort_by(f64::total_cmp);
        let at = |top_p| {
            let cfg = GenerationConfig {
                top_k: usize::MAX,
                top_p,
                temperature: 1.0,
                ..Default::default()
            };
            nucleus_survivors(&logits, &cfg)
                .into_iter()
                .map(|(i, _)| i)
                .collect::<Vec<_>>()
        };
        let (small, large) = (at(ps[0]), at(ps[1]));
        assert!(
            small.iter().all(|i| large.contains(i)),
            "{small:?} not within {large:?}"
        );
    }
}

#[test]
fn invalid_config_rejected_before_decoding() {
    let (vocab, w, _) = setup();
    let cfg = GenerationConfig {
        top_p: 0.0,
        ..Default::default()
    };
    assert!(generate(&w, None, &vocab, "hi", &cfg).is_err());
    let too_long = GenerationConfig {
        max_new_tokens: 250,
        ..Default::default()
    };
    assert!(generate(&w, None, &vocab, "hello there", &too_long).is_err());
}

proptest! {
    #[test]
    fn filtered_distribution_sums_to_one(
        logits in prop::collection::vec(-10.0f64..10.0, 1..30),
        top_k in 1usize..40,
        top_p in 0.01f64..=1.0,
        temperature in 0.05f64..4.0,
    ) {
        let cfg = GenerationConfig { top_k, top_p, temperature, ..Default::default() };
        let p = filter_distribution(&logits, &cfg);
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().filter(|v| **v > 0.0).count() <= top_k);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
    }
}
