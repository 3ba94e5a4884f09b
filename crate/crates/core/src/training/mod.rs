//! Prompt tuning against a frozen transformer, the full fine-tuning baseline,
//! and toy language-model pretraining.

mod adam;
mod schedule;

pub use adam::{adam_step, clip_global_norm, AdamConfig, OptimizerState};
pub use schedule::{lr_at, ScheduleConfig};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::checkpoint;
use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::generation::{generate, GenerationConfig};
use crate::metrics::rouge_l;
use crate::model::{forward_batch, init_model, BoundTransformer, TransformerConfig, TransformerWeights};
use crate::params::ParamStore;
use crate::prompt::{assemble, Mode, PromptEncoderState};
use crate::tokenizer::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    PromptTune,
    FineTune,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::PromptTune => "prompt_tune",
            TrainMode::FineTune => "fine_tune",
        })
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prompt_tune" | "prompt-tune" => Ok(TrainMode::PromptTune),
            "fine_tune" | "fine-tune" => Ok(TrainMode::FineTune),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    ValLoss,
    #[serde(rename = "rougeL")]
    RougeL,
}

impl SelectionMetric {
    fn better(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            SelectionMetric::ValLoss => candidate < incumbent,
            SelectionMetric::RougeL => candidate > incumbent,
        }
    }
}

impl std::str::FromStr for SelectionMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val_loss" => Ok(SelectionMetric::ValLoss),
            "rougeL" | "rouge_l" => Ok(SelectionMetric::RougeL),
            other => Err(Error::Config(format!("unknown selection metric `{other}`"))),
        }
    }
}

/// Index of the best epoch; the earliest one wins ties.
pub fn select_best(values: &[f64], metric: SelectionMetric) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| metric.better(v, values[b])) {
            best = Some(i);
        }
    }
    best
}

pub const MAX_EPOCHS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub selection_metric: SelectionMetric,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub min_lr: f64,
    /// Global-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Decoding settings for Rouge-L selection.
    pub generation: GenerationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: MAX_EPOCHS,
            batch_size: 4,
            seed: 0,
            selection_metric: SelectionMetric::ValLoss,
            learning_rate: 1e-4,
            warmup_steps: 50,
            min_lr: 0.0,
            clip_norm: Some(1.0),
            generation: GenerationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.max_epochs > MAX_EPOCHS {
            return Err(Error::Config(format!(
                "max_epochs {} outside 1..={MAX_EPOCHS}",
                self.max_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, train_len: usize) -> usize {
        train_len.div_ceil(self.batch_size)
    }

    /// Cosine schedule spanning the whole run. Warmup is shortened when the
    /// run has fewer steps than the configured warmup.
    pub fn schedule(&self, train_len: usize) -> Result<ScheduleConfig> {
        let total = self.max_epochs * self.steps_per_epoch(train_len);
        let s = ScheduleConfig {
            base_lr: self.learning_rate,
            warmup_steps: self.warmup_steps.min(total.saturating_sub(1)),
            total_steps: total,
            min_lr: self.min_lr,
        };
        s.validate()?;
        Ok(s)
    }
}

/// Summed NLL and masked-position count over a batch, on `g`.
struct BatchLoss {
    loss: Var,
    targets: usize,
}

fn batch_loss(
    g: &mut Graph<f32>,
    model: &BoundTransformer,
    cfg: &TransformerConfig,
    virtual_emb: Option<Var>,
    vocab: &Vocab,
    batch: &[&Example],
) -> Result<BatchLoss> {
    let mut seqs = Vec::with_capacity(batch.len());
    let mut targets = Vec::new();
    let mut mask = Vec::new();
    for ex in batch {
        let seq = assemble(
            g,
            virtual_emb,
            vocab,
            model,
            cfg,
            &ex.dialogue,
            Some(&ex.summary),
            Mode::Train,
        )?;
        let (t, m) = seq.shifted_targets();
        targets.extend(t);
        mask.extend(m);
        seqs.push(seq.embeddings);
    }
    let logits = forward_batch(g, model, cfg, &seqs)?;
    let loss = g.cross_entropy(logits, &targets, &mask)?;
    Ok(BatchLoss {
        loss,
        targets: mask.iter().filter(|&&m| m).count(),
    })
}

/// Loss and gradients of the trainable store for one batch. With a prompt,
/// the transformer must be frozen and gradients are for the prompt encoder;
/// without one, gradients are for every transformer array.
fn loss_and_grads(
    weights: &TransformerWeights<f32>,
    prompt: Option<&PromptEncoderState<f32>>,
    vocab: &Vocab,
    batch: &[&Example],
) -> Result<(f64, Vec<Vec<f32>>)> {
    let mut g = Graph::new();
    let model = weights.bind(&mut g);
    let (virtual_emb, trainable) = match prompt {
        Some(p) => {
            let vars = p.bind(&mut g);
            (Some(p.virtual_embeddings(&mut g, &vars)?), vars)
        }
        None => (None, model.vars.clone()),
    };
    let bl = batch_loss(&mut g, &model, &weights.config, virtual_emb, vocab, batch)?;
    let loss = g.value(bl.loss).data()[0] as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    g.backward(bl.loss)?;
    let grads = trainable
        .iter()
        .map(|&v| {
            g.take_grad(v)
                .ok_or_else(|| Error::Config("trainable array has no gradient".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((loss, grads))
}

/// Token-weighted mean loss over `examples`, without gradients.
pub fn evaluate_loss(
    weights: &TransformerWeights<f32>,
    prompt: Option<&PromptEncoderState<f32>>,
    vocab: &Vocab,
    examples: &[Example],
    batch_size: usize,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptySplit("no examples to evaluate".into()));
    }
    let virtual_rows = prompt.map(|p| p.fold()).transpose()?;
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in examples.chunks(batch_size.max(1)) {
        let mut g = Graph::new();
        let model = BoundTransformer {
            vars: weights.params.bind(&mut g, false),
        };
        let v = virtual_rows.as_ref().map(|t| g.constant(t.clone()));
        let refs: Vec<&Example> = chunk.iter().collect();
        let bl = batch_loss(&mut g, &model, &weights.config, v, vocab, &refs)?;
        total += g.value(bl.loss).data()[0] as f64 * bl.targets as f64;
        count += bl.targets;
    }
    Ok(total / count as f64)
}

/// Mean Rouge-L F1 of greedy generations against the gold summaries.
pub fn evaluate_rouge_l(
    weights: &TransformerWeights<f32>,
    prompt: Option<&PromptEncoderState<f32>>,
    vocab: &Vocab,
    examples: &[Example],
    generation: &GenerationConfig,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptySplit("no examples to evaluate".into()));
    }
    let mut total = 0.0;
    for ex in examples {
        let text = generate(weights, prompt, vocab, &ex.dialogue, generation)?;
        total += rouge_l(&text, &ex.summary).f1;
    }
    Ok(total / examples.len() as f64)
}

/// One prompt-tuning update. Returns the batch loss before the update.
#[allow(clippy::too_many_arguments)]
pub fn prompt_tune_step(
    frozen: &TransformerWeights<f32>,
    prompt: &mut PromptEncoderState<f32>,
    opt: &mut OptimizerState<f32>,
    vocab: &Vocab,
    batch: &[&Example],
    schedule: &ScheduleConfig,
    step: usize,
    clip_norm: Option<f64>,
) -> Result<f64> {
    if !frozen.frozen {
        return Err(Error::Config(
            "prompt tuning requires frozen transformer weights".into(),
        ));
    }
    let (loss, mut grads) = loss_and_grads(frozen, Some(prompt), vocab, batch)?;
    apply_update(&mut prompt.params, opt, &mut grads, schedule, step, clip_norm)?;
    Ok(loss)
}

/// One full fine-tuning update of every transformer array.
pub fn fine_tune_step(
    weights: &mut TransformerWeights<f32>,
    opt: &mut OptimizerState<f32>,
    vocab: &Vocab,
    batch: &[&Example],
    schedule: &ScheduleConfig,
    step: usize,
    clip_norm: Option<f64>,
) -> Result<f64> {
    if weights.frozen {
        return Err(Error::Config("fine-tuning requires unfrozen weights".into()));
    }
    let (loss, mut grads) = loss_and_grads(weights, None, vocab, batch)?;
    apply_update(&mut weights.params, opt, &mut grads, schedule, step, clip_norm)?;
    Ok(loss)
}

/// Update `step` (0-based) uses the rate at schedule position `step + 1`, so
/// the first update is not a zero-rate no-op.
fn apply_update(
    params: &mut ParamStore<f32>,
    opt: &mut OptimizerState<f32>,
    grads: &mut [Vec<f32>],
    schedule: &ScheduleConfig,
    step: usize,
    clip_norm: Option<f64>,
) -> Result<()> {
    if let Some(c) = clip_norm {
        clip_global_norm(grads, c);
    }
    let lr = schedule.lr_at(step + 1)?;
    opt.apply(params, grads, lr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
    /// Wall-clock seconds; kept out of the serialized history so repeated
    /// runs produce identical files.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub mode: TrainMode,
    /// 1-based epoch of the selected checkpoint.
    pub best_epoch: usize,
    pub best_metric: f64,
    /// Checkpoint-container bytes of the selected state.
    pub checkpoint: Vec<u8>,
    pub history: Vec<EpochRecord>,
    /// Selected prompt encoder (prompt tuning).
    pub prompt: Option<PromptEncoderState<f32>>,
    /// Selected transformer (fine-tuning).
    pub weights: Option<TransformerWeights<f32>>,
    pub trainable_parameters: usize,
    pub steps: usize,
    /// Wall-clock seconds of the training loop.
    pub seconds: f64,
}

impl TrainOutcome {
    pub fn history_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.history {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

enum Arm {
    Prompt(PromptEncoderState<f32>, TransformerWeights<f32>),
    Full(TransformerWeights<f32>),
}

fn check_splits(train: &[Example], validation: &[Example]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if validation.is_empty() {
        return Err(Error::EmptySplit("validation".into()));
    }
    Ok(())
}

/// Prompt-tunes `prompt` against `frozen` weights.
pub fn train(
    frozen: &TransformerWeights<f32>,
    prompt: PromptEncoderState<f32>,
    train_set: &[Example],
    validation: &[Example],
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if !frozen.frozen {
        return Err(Error::Config(
            "prompt tuning requires frozen transformer weights".into(),
        ));
    }
    prompt.config.check_model(&frozen.config)?;
    run(
        Arm::Prompt(prompt, frozen.clone()),
        train_set,
        validation,
        vocab,
        config,
    )
}

/// Full fine-tuning baseline: every transformer array is trainable.
pub fn fine_tune_baseline(
    weights: &TransformerWeights<f32>,
    train_set: &[Example],
    validation: &[Example],
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if weights.frozen {
        return Err(Error::Config("fine-tuning requires unfrozen weights".into()));
    }
    run(Arm::Full(weights.clone()), train_set, validation, vocab, config)
}

fn run(
    mut arm: Arm,
    train_set: &[Example],
    validation: &[Example],
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_splits(train_set, validation)?;
    let schedule = config.schedule(train_set.len())?;
    let mut opt = match &arm {
        Arm::Prompt(p, _) => OptimizerState::new(&p.params, AdamConfig::default()),
        Arm::Full(w) => OptimizerState::new(&w.params, AdamConfig::default()),
    };
    let trainable_parameters = match &arm {
        Arm::Prompt(p, _) => p.params.numel(),
        Arm::Full(w) => w.params.numel(),
    };
    let mode = match arm {
        Arm::Prompt(..) => TrainMode::PromptTune,
        Arm::Full(_) => TrainMode::FineTune,
    };

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<u8>, Arm)> = None;
    let mut step = 0usize;

    for epoch in 1..=config.max_epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train_set[i]).collect();
            let loss = match &mut arm {
                Arm::Prompt(p, w) => {
                    prompt_tune_step(w, p, &mut opt, vocab, &batch, &schedule, step, config.clip_norm)?
                }
                Arm::Full(w) => fine_tune_step(w, &mut opt, vocab, &batch, &schedule, step, config.clip_norm)?,
            };
            loss_sum += loss;
            batches += 1;
            step += 1;
        }
        let (w, p) = match &arm {
            Arm::Prompt(p, w) => (w, Some(p)),
            Arm::Full(w) => (w, None),
        };
        let val_metric = match config.selection_metric {
            SelectionMetric::ValLoss => evaluate_loss(w, p, vocab, validation, config.batch_size)?,
            SelectionMetric::RougeL => evaluate_rouge_l(w, p, vocab, validation, &config.generation)?,
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_metric,
            lr: schedule.lr_at(step)?,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
        if best
            .as_ref()
            .is_none_or(|b| config.selection_metric.better(val_metric, b.1))
        {
            let bytes = match &arm {
                Arm::Prompt(p, _) => checkpoint::prompt_bytes(p, config.seed, step as u64)?,
                Arm::Full(w) => checkpoint::transformer_bytes(w, config.seed, step as u64)?,
            };
            let snapshot = match &arm {
                Arm::Prompt(p, w) => Arm::Prompt(p.clone(), w.clone()),
                Arm::Full(w) => Arm::Full(w.clone()),
            };
            best = Some((epoch, val_metric, bytes, snapshot));
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    let (best_epoch, best_metric, bytes, state) = best.expect("at least one epoch runs");
    let (prompt, weights) = match state {
        Arm::Prompt(p, _) => (Some(p), None),
        Arm::Full(w) => (None, Some(w)),
    };
    Ok(TrainOutcome {
        mode,
        best_epoch,
        best_metric,
        checkpoint: bytes,
        history,
        prompt,
        weights,
        trainable_parameters,
        steps: step,
        seconds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Tokens per training window.
    pub seq_len: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub min_lr: f64,
    pub clip_norm: Option<f64>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            seq_len: 128,
            learning_rate: 1e-3,
            warmup_steps: 100,
            min_lr: 1e-4,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub weights: TransformerWeights<f32>,
    /// Batch loss of every step, in order.
    pub losses: Vec<f64>,
}

/// Next-token pretraining on random windows of the concatenated corpus.
/// Each text is followed by EOS. The returned weights are frozen.
pub fn pretrain_toy_lm<S: AsRef<str>>(
    texts: &[S],
    vocab: &Vocab,
    model: &TransformerConfig,
    config: &PretrainConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    if texts.is_empty() {
        return Err(Error::EmptyInput("pretraining corpus is empty"));
    }
    if model.vocab_size < vocab.len() {
        return Err(Error::Config(format!(
            "model vocab_size {} smaller than tokenizer vocab {}",
            model.vocab_size,
            vocab.len()
        )));
    }
    if config.steps == 0 || config.batch_size == 0 || config.seq_len < 2 {
        return Err(Error::Config(
            "pretraining needs steps, batch_size >= 1 and seq_len >= 2".into(),
        ));
    }
    let seq_len = config.seq_len.min(model.max_positions);
    let eos = vocab.specials().eos;
    let mut stream = Vec::new();
    let mut starts = Vec::with_capacity(texts.len());
    for t in texts {
        starts.push(stream.len());
        stream.extend(vocab.encode(t.as_ref()));
        stream.push(eos);
    }
    // Windows begin at document boundaries so every window opens with a
    // complete document, cue included.
    starts.retain(|&s| s + seq_len < stream.len());
    if starts.is_empty() {
        return Err(Error::EmptyInput("pretraining corpus shorter than one window"));
    }
    let schedule = ScheduleConfig {
        base_lr: config.learning_rate,
        warmup_steps: config.warmup_steps.min(config.steps - 1),
        total_steps: config.steps,
        min_lr: config.min_lr,
    };
    schedule.validate()?;

    let mut weights = init_model::<f32>(model, seed)?;
    let mut opt = OptimizerState::new(&weights.params, AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_1a11);
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut g = Graph::new();
        let bound = weights.bind(&mut g);
        let mut seqs = Vec::with_capacity(config.batch_size);
        let mut targets = Vec::with_capacity(config.batch_size * seq_len);
        for _ in 0..config.batch_size {
            let start = starts[rng.random_range(0..starts.len())];
            let window = &stream[start..start + seq_len + 1];
            seqs.push(g.embedding(bound.token_embedding(), &window[..seq_len])?);
            targets.extend_from_slice(&window[1..]);
        }
        let logits = forward_batch(&mut g, &bound, model, &seqs)?;
        let mask = vec![true; targets.len()];
        let loss = g.cross_entropy(logits, &targets, &mask)?;
        let value = g.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite("pretraining loss"));
        }
        g.backward(loss)?;
        let mut grads = bound
            .vars
            .iter()
            .map(|&v| g.take_grad(v).expect("unfrozen arrays have gradients"))
            .collect::<Vec<_>>();
        apply_update(
            &mut weights.params,
            &mut opt,
            &mut grads,
            &schedule,
            step,
            config.clip_norm,
        )?;
        losses.push(value);
    }
    weights.frozen = true;
    Ok(PretrainOutcome { weights, losses })
}
