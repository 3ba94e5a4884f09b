use std::collections::HashSet;
use std::path::Path;

use softprompt::harness::*;
use softprompt::prompt::EncoderType;
use softprompt::training::TrainMode;

fn config(dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_json(
        r#"{
            "seed": 3,
            "data": {"synthetic": {"train": 20, "validation": 4, "test": 4, "seed": 8}},
            "base": {"vocab_size": 300, "pretrain_examples": 40,
                     "pretrain": {"steps": 20, "batch_size": 2, "seq_len": 32}},
            "prompt": {"encoder_type": "mlp", "num_virtual_tokens": 4, "mlp_hidden": 16,
                       "lstm_layers": 1, "lstm_hidden": 8},
            "train": {"max_epochs": 1, "batch_size": 4, "warmup_steps": 0, "learning_rate": 0.001},
            "generation": {"max_new_tokens": 8}
        }"#,
    )
    .unwrap();
    c.output_dir = dir.to_path_buf();
    c
}

#[test]
fn sweep_resumes_and_reports_consistent_overall() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let exp = cfg.experiment().unwrap();
    let specs = grid(
        &cfg.base_spec(),
        &[2, 4],
        &[EncoderType::Mlp, EncoderType::Lstm],
        &[1e-3],
    );
    assert_eq!(specs.len(), 4);

    let first = sweep(&exp, &specs).unwrap();
    assert_eq!(first.rows.len(), 4);
    assert!(first.rows.iter().all(|r| r.outcome.is_ok() && !r.resumed));
    for row in &first.rows {
        let dir = exp.trial_dir(&row.spec);
        for f in [
            "spec.json",
            "history.jsonl",
            "checkpoint.bin",
            "predictions.jsonl",
            "report.json",
            "record.json",
        ] {
            assert!(dir.join(f).exists(), "{f} missing in {}", dir.display());
        }
        let rec = row.outcome.as_ref().unwrap();
        assert_eq!(rec.trainable_parameters, exp.trainable_parameters(&row.spec));
    }

    let again = sweep(&exp, &specs).unwrap();
    assert!(again.rows.iter().all(|r| r.resumed));
    let a: Vec<_> = first.rows.iter().map(|r| r.outcome.clone().unwrap()).collect();
    let b: Vec<_> = again.rows.iter().map(|r| r.outcome.clone().unwrap()).collect();
    assert_eq!(a, b);
    assert_eq!(first.best, again.best);

    let table = Table::from_csv(&first.table().to_csv().unwrap()).unwrap();
    assert_eq!(table.columns, TABLE3_COLUMNS);
    let col = |n: &str| table.column(n).unwrap();
    for row in &table.rows {
        let cells: Vec<f64> = ["Rouge-1", "Rouge-2", "Rouge-L", "BLEU"]
            .iter()
            .map(|n| row[col(n)].parse().unwrap())
            .collect();
        let mean = cells.iter().sum::<f64>() / 4.0;
        let overall: f64 = row[col("Overall")].parse().unwrap();
        assert!((overall - mean).abs() <= 5e-5 + 1e-12, "{row:?}");
    }
}

#[test]
fn failed_trial_is_recorded_without_aborting() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let exp = cfg.experiment().unwrap();
    let good = cfg.base_spec();
    let bad = TrialSpec {
        model_config: "toy-m".into(),
        ..good.clone()
    };
    let res = sweep(&exp, &[bad, good]).unwrap();
    assert!(res.rows[0].outcome.is_err());
    assert!(res.rows[1].outcome.is_ok());
    assert_eq!(res.best, Some(1));
    assert!(res.table().rows[0].last().unwrap().starts_with("failed"));
    assert!(sweep(&exp, &[]).is_err());
}

#[test]
fn fewshot_subsets_nest_and_report_has_table_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let exp = cfg.experiment().unwrap();
    let rows = fewshot_curve(&exp, &[5, 10], true, 4, &cfg.base_spec()).unwrap();
    assert_eq!(rows.len(), 3);
    let sets: Vec<HashSet<&String>> = rows.iter().map(|r| r.example_ids.iter().collect()).collect();
    assert_eq!(sets[0].len(), 5);
    assert_eq!(sets[1].len(), 10);
    assert_eq!(sets[2].len(), 20);
    assert!(sets[0].is_subset(&sets[1]) && sets[1].is_subset(&sets[2]));

    let table = fewshot_table(&rows, exp.splits.train.len());
    assert_eq!(table.columns, TABLE6_COLUMNS);
    assert_eq!(table.rows[2][1], "Full dataset:20");
    assert!(fewshot_curve(&exp, &[10, 5], false, 4, &cfg.base_spec()).is_err());
    assert!(fewshot_curve(&exp, &[21], false, 4, &cfg.base_spec()).is_err());
}

#[test]
fn compare_counts_match_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let exp = cfg.experiment().unwrap();
    let p = cfg.base_spec();
    let f = TrialSpec {
        mode: TrainMode::FineTune,
        ..p.clone()
    };
    let [pr, fr] = compare_modes(&exp, &p, &f).unwrap();
    let (h, m, hid) = (exp.base.config.d_model, p.num_virtual_tokens, p.mlp_hidden);
    assert_eq!(pr.trainable_parameters, m * h + (h * hid + hid) + (hid * h + h));
    assert_eq!(fr.trainable_parameters, exp.base.config.parameter_count());
    assert_eq!(comparison_table(&[pr, fr]).columns, TABLE4_COLUMNS);
    assert!(compare_modes(&exp, &f, &p).is_err());
}
