//! Experiment orchestration: resumable trials, virtual-token sweeps, few-shot
//! curves and the prompt-tuning versus fine-tuning comparison.

pub mod config;
pub mod report;

pub use config::{
    BaseConfig, DataConfig, ExperimentConfig, FewshotSettings, PromptSettings, SweepSettings, SyntheticData,
};
pub use report::{Table, TABLE3_COLUMNS, TABLE4_COLUMNS, TABLE6_COLUMNS};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{stratified_sample, Example, SplitSet};
use crate::error::{Error, Result};
use crate::generation::{generate, GenerationConfig};
use crate::metrics::{evaluate, EvalOptions, MetricReport, Pair};
use crate::model::{count_parameters, TransformerWeights};
use crate::prompt::{init_prompt_encoder, EncoderType, PromptEncoderConfig, PromptEncoderState};
use crate::tokenizer::Vocab;
use crate::training::{fine_tune_baseline, train, SelectionMetric, TrainConfig, TrainMode, TrainOutcome};

use report::{cell, format_duration, optional_cell, overall_cell};

/// Virtual-token sizes of the published sweep, kept as a named preset.
pub const PAPER_VIRTUAL_TOKENS: [usize; 5] = [32, 64, 128, 256, 512];
/// Desk-scale default sweep.
pub const DESK_VIRTUAL_TOKENS: [usize; 3] = [8, 16, 32];
/// Few-shot ladder of the published curve; the full split follows it.
pub const PAPER_FEWSHOT_LADDER: [usize; 7] = [5, 10, 20, 40, 60, 100, 200];

/// Everything that determines one run, given the dataset and base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub model_config: String,
    pub mode: TrainMode,
    pub encoder_type: EncoderType,
    pub num_virtual_tokens: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub mlp_hidden: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Few-shot training-set size; `None` uses the full split.
    pub sample_count: Option<usize>,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub selection_metric: SelectionMetric,
}

impl TrialSpec {
    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn dir_name(&self) -> String {
        format!("trial-{}", &self.hash()[..16])
    }

    pub fn prompt_config(&self, model_dim: usize) -> PromptEncoderConfig {
        PromptEncoderConfig {
            num_virtual_tokens: self.num_virtual_tokens,
            encoder_type: self.encoder_type,
            input_embed_dim: None,
            lstm_layers: self.lstm_layers,
            lstm_hidden: self.lstm_hidden,
            mlp_hidden: self.mlp_hidden,
            model_dim,
        }
    }

    pub fn train_config(&self, generation: &GenerationConfig) -> TrainConfig {
        TrainConfig {
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            selection_metric: self.selection_metric,
            learning_rate: self.learning_rate,
            warmup_steps: self.warmup_steps,
            generation: *generation,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub spec: TrialSpec,
    pub trainable_parameters: usize,
    pub training_duration_seconds: f64,
    pub best_epoch: usize,
    pub steps: usize,
    pub report: MetricReport,
}

/// Loaded data, tokenizer and frozen base model shared by every trial.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model_name: String,
    pub splits: SplitSet,
    pub vocab: Vocab,
    pub base: TransformerWeights<f32>,
    pub generation: GenerationConfig,
    pub eval: EvalOptions,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct TrialRun {
    pub record: TrialRecord,
    /// True when a completed record was found and no training ran.
    pub resumed: bool,
    pub dir: PathBuf,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Experiment {
    pub fn trial_dir(&self, spec: &TrialSpec) -> PathBuf {
        self.output_dir.join("trials").join(spec.dir_name())
    }

    pub fn training_set(&self, spec: &TrialSpec) -> Result<Vec<Example>> {
        match spec.sample_count {
            Some(n) => stratified_sample(&self.splits.train, n, spec.seed),
            None => Ok(self.splits.train.clone()),
        }
    }

    /// Trainable parameters of the arm described by `spec`, in closed form.
    pub fn trainable_parameters(&self, spec: &TrialSpec) -> usize {
        match spec.mode {
            TrainMode::PromptTune => spec.prompt_config(self.base.config.d_model).parameter_count(),
            TrainMode::FineTune => self.base.config.parameter_count(),
        }
    }

    fn train_arm(&self, spec: &TrialSpec, train_set: &[Example]) -> Result<TrainOutcome> {
        let cfg = spec.train_config(&self.generation);
        match spec.mode {
            TrainMode::PromptTune => {
                let pcfg = spec.prompt_config(self.base.config.d_model);
                let prompt = init_prompt_encoder::<f32>(&pcfg, spec.seed)?;
                train(
                    &self.base,
                    prompt,
                    train_set,
                    &self.splits.validation,
                    &self.vocab,
                    &cfg,
                )
            }
            TrainMode::FineTune => {
                let mut weights = self.base.clone();
                weights.frozen = false;
                fine_tune_baseline(&weights, train_set, &self.splits.validation, &self.vocab, &cfg)
            }
        }
    }

    /// Greedy-or-sampled predictions for the test split.
    pub fn predict(
        &self,
        weights: &TransformerWeights<f32>,
        prompt: Option<&PromptEncoderState<f32>>,
        examples: &[Example],
    ) -> Result<Vec<Pair>> {
        examples
            .iter()
            .map(|ex| {
                Ok(Pair::new(
                    generate(weights, prompt, &self.vocab, &ex.dialogue, &self.generation)?,
                    ex.summary.clone(),
                ))
            })
            .collect()
    }

    /// Runs one trial, or loads its record if the trial already completed.
    pub fn run_trial(&self, spec: &TrialSpec) -> Result<TrialRun> {
        if spec.model_config != self.model_name {
            return Err(Error::Config(format!(
                "trial targets model `{}` but the experiment base is `{}`",
                spec.model_config, self.model_name
            )));
        }
        let dir = self.trial_dir(spec);
        let record_path = dir.join("record.json");
        if record_path.exists() {
            let record: TrialRecord = serde_json::from_str(&read_to_string(&record_path)?)?;
            return Ok(TrialRun {
                record,
                resumed: true,
                dir,
            });
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write(&dir.join("spec.json"), serde_json::to_string_pretty(spec)? + "\n")?;

        let train_set = self.training_set(spec)?;
        let outcome = self.train_arm(spec, &train_set)?;
        let weights = outcome.weights.as_ref().unwrap_or(&self.base);
        let pairs = self.predict(weights, outcome.prompt.as_ref(), &self.splits.test)?;
        let report = evaluate(&pairs, &self.eval)?;

        let trainable = match (&outcome.prompt, &outcome.weights) {
            (Some(p), _) => count_parameters(p, true),
            (None, Some(w)) => count_parameters(w, true),
            (None, None) => unreachable!("training returns a state"),
        };
        write(&dir.join("history.jsonl"), outcome.history_jsonl()?)?;
        write(&dir.join("checkpoint.bin"), &outcome.checkpoint)?;
        let mut preds = String::new();
        for (ex, p) in self.splits.test.iter().zip(&pairs) {
            preds.push_str(&serde_json::to_string(
                &serde_json::json!({"id": ex.id, "candidate": p.candidate}),
            )?);
            preds.push('\n');
        }
        write(&dir.join("predictions.jsonl"), preds)?;
        write(&dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
        let epoch_seconds: Vec<f64> = outcome.history.iter().map(|h| h.seconds).collect();
        write(
            &dir.join("timing.json"),
            serde_json::to_string_pretty(&serde_json::json!({
                "training_duration_seconds": outcome.seconds,
                "epoch_seconds": epoch_seconds,
            }))? + "\n",
        )?;

        let record = TrialRecord {
            spec: spec.clone(),
            trainable_parameters: trainable,
            training_duration_seconds: outcome.seconds,
            best_epoch: outcome.best_epoch,
            steps: outcome.steps,
            report,
        };
        // Written last: its presence marks the trial complete.
        write(&record_path, serde_json::to_string_pretty(&record)? + "\n")?;
        Ok(TrialRun {
            record,
            resumed: false,
            dir,
        })
    }
}

/// Cartesian grid in learning-rate, encoder, virtual-token order.
pub fn grid(
    base: &TrialSpec,
    virtual_tokens: &[usize],
    encoders: &[EncoderType],
    learning_rates: &[f64],
) -> Vec<TrialSpec> {
    let mut out = Vec::new();
    for &lr in learning_rates {
        for &enc in encoders {
            for &m in virtual_tokens {
                out.push(TrialSpec {
                    encoder_type: enc,
                    num_virtual_tokens: m,
                    learning_rate: lr,
                    ..base.clone()
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub spec: TrialSpec,
    pub outcome: std::result::Result<TrialRecord, String>,
    pub resumed: bool,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub best: Option<usize>,
}

/// Highest overall wins; ties go to fewer trainable parameters, then to the
/// earlier row. Failed rows (`None`) never win.
pub fn best_row(rows: &[Option<(f64, usize)>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        let Some((overall, params)) = *r else { continue };
        let better = match best.and_then(|b| rows[b]) {
            None => true,
            Some((bo, bp)) => overall > bo || (overall == bo && params < bp),
        };
        if better {
            best = Some(i);
        }
    }
    best
}

impl SweepResult {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&TABLE3_COLUMNS);
        for row in &self.rows {
            let s = &row.spec;
            let mut cells = vec![
                s.model_config.clone(),
                s.encoder_type.to_string(),
                s.num_virtual_tokens.to_string(),
            ];
            match &row.outcome {
                Ok(r) => {
                    let m = &r.report;
                    cells.extend([
                        r.trainable_parameters.to_string(),
                        cell(m.rouge1),
                        cell(m.rouge2),
                        cell(m.rouge_l),
                        cell(m.bleu),
                        optional_cell(m.bertscore),
                        overall_cell(m),
                        "ok".into(),
                    ]);
                }
                Err(e) => {
                    cells.extend(std::iter::repeat_n(String::new(), 7));
                    cells.push(format!("failed: {e}"));
                }
            }
            t.push(cells);
        }
        t
    }
}

pub fn sweep(exp: &Experiment, specs: &[TrialSpec]) -> Result<SweepResult> {
    if specs.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let rows: Vec<SweepRow> = specs
        .iter()
        .map(|spec| match exp.run_trial(spec) {
            Ok(run) => SweepRow {
                spec: spec.clone(),
                outcome: Ok(run.record),
                resumed: run.resumed,
            },
            Err(e) => SweepRow {
                spec: spec.clone(),
                outcome: Err(e.to_string()),
                resumed: false,
            },
        })
        .collect();
    let keys: Vec<Option<(f64, usize)>> = rows
        .iter()
        .map(|r| {
            r.outcome
                .as_ref()
                .ok()
                .map(|rec| (rec.report.overall, rec.trainable_parameters))
        })
        .collect();
    let best = best_row(&keys);
    Ok(SweepResult { rows, best })
}

#[derive(Debug, Clone)]
pub struct FewshotRow {
    /// `None` for the full training split.
    pub size: Option<usize>,
    pub example_ids: Vec<String>,
    pub record: TrialRecord,
}

pub fn fewshot_curve(
    exp: &Experiment,
    sizes: &[usize],
    include_full: bool,
    seed: u64,
    base_spec: &TrialSpec,
) -> Result<Vec<FewshotRow>> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "few-shot sizes must be strictly ascending: {sizes:?}"
        )));
    }
    let available = exp.splits.train.len();
    if let Some(&n) = sizes.iter().find(|&&n| n == 0 || n > available) {
        return Err(Error::SampleSize {
            requested: n,
            available,
        });
    }
    let mut plan: Vec<Option<usize>> = sizes.iter().map(|&n| Some(n)).collect();
    if include_full {
        plan.push(None);
    }
    plan.into_iter()
        .map(|size| {
            let spec = TrialSpec {
                seed,
                sample_count: size,
                ..base_spec.clone()
            };
            let ids = exp.training_set(&spec)?.into_iter().map(|e| e.id).collect();
            let run = exp.run_trial(&spec)?;
            Ok(FewshotRow {
                size,
                example_ids: ids,
                record: run.record,
            })
        })
        .collect()
}

pub fn fewshot_table(rows: &[FewshotRow], train_len: usize) -> Table {
    let mut t = Table::new(&TABLE6_COLUMNS);
    for r in rows {
        let m = &r.record.report;
        let sample = match r.size {
            Some(n) => n.to_string(),
            None => format!("Full dataset:{train_len}"),
        };
        t.push(vec![
            r.record.spec.model_config.clone(),
            sample,
            cell(m.rouge1),
            cell(m.rouge2),
            cell(m.rouge_l),
            optional_cell(m.bertscore),
            cell(m.bleu),
        ]);
    }
    t
}

pub fn compare_modes(exp: &Experiment, prompt_spec: &TrialSpec, finetune_spec: &TrialSpec) -> Result<[TrialRecord; 2]> {
    if prompt_spec.mode != TrainMode::PromptTune || finetune_spec.mode != TrainMode::FineTune {
        return Err(Error::Config(
            "compare needs a prompt_tune spec and a fine_tune spec".into(),
        ));
    }
    let p = exp.run_trial(prompt_spec)?.record;
    let f = exp.run_trial(finetune_spec)?.record;
    Ok([p, f])
}

pub fn comparison_table(records: &[TrialRecord]) -> Table {
    let mut t = Table::new(&TABLE4_COLUMNS);
    for r in records {
        let m = &r.report;
        let method = match r.spec.mode {
            TrainMode::PromptTune => "Prompt tuning",
            TrainMode::FineTune => "Fine-tuning",
        };
        t.push(vec![
            r.spec.model_config.clone(),
            method.into(),
            r.trainable_parameters.to_string(),
            format_duration(r.training_duration_seconds),
            cell(m.rouge1),
            cell(m.rouge2),
            cell(m.rouge_l),
            cell(m.bleu),
            optional_cell(m.bertscore),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec() -> TrialSpec {
        TrialSpec {
            model_config: "toy-s".into(),
            mode: TrainMode::PromptTune,
            encoder_type: EncoderType::Mlp,
            num_virtual_tokens: 8,
            lstm_layers: 1,
            lstm_hidden: 16,
            mlp_hidden: 16,
            learning_rate: 1e-4,
            seed: 0,
            sample_count: None,
            max_epochs: 1,
            batch_size: 2,
            warmup_steps: 0,
            selection_metric: SelectionMetric::ValLoss,
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = spec();
        assert_eq!(a.hash(), spec().hash());
        let b = TrialSpec { seed: 1, ..spec() };
        let c = TrialSpec {
            learning_rate: 2e-4,
            ..spec()
        };
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.dir_name().len(), "trial-".len() + 16);
    }

    #[test]
    fn grid_cardinality() {
        let g = grid(&spec(), &[8, 16], &[EncoderType::Mlp, EncoderType::Lstm], &[1e-4]);
        assert_eq!(g.len(), 4);
    }

    #[test]
    fn best_by_overall_then_params() {
        assert_eq!(best_row(&[Some((0.30, 5)), Some((0.35, 5)), Some((0.33, 5))]), Some(1));
        assert_eq!(best_row(&[Some((0.3, 9)), Some((0.3, 4)), Some((0.3, 4))]), Some(1));
        assert_eq!(best_row(&[None, Some((0.1, 1))]), Some(1));
        assert_eq!(best_row(&[None]), None);
    }
}
