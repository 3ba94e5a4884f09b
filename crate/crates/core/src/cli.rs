//! Command-line front end. `run` returns the process exit status: 0 on
//! success, 1 on a usage error, 2 on a runtime error.

use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint;
use crate::corpus::{corpus_stats, format_stats_table, load_split, write_csv, ColumnMap, CorpusStats};
use crate::error::{Error, Result};
use crate::generation::generate;
use crate::harness::{self, config::pretrain_base, ExperimentConfig};
use crate::metrics::{evaluate, EvalOptions, Pair};
use crate::prompt::EncoderType;
use crate::tokenizer::Vocab;
use crate::training::{SelectionMetric, TrainMode};

#[derive(Debug, Parser)]
#[command(
    name = "softprompt",
    version,
    about = "Soft-prompt tuning of a frozen toy transformer for dialogue summarization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-split sample counts and average word counts.
    Stats(StatsArgs),
    /// Train a tokenizer and a toy language model on the synthetic corpus.
    Pretrain(PretrainArgs),
    /// Run one training trial and evaluate it on the test split.
    Train(TrialArgs),
    /// Summarize dialogues with a frozen model and optional prompt.
    Generate(GenerateArgs),
    /// Score predictions against a reference split.
    Evaluate(EvaluateArgs),
    /// Virtual-token sweep over encoder types and learning rates.
    Sweep(TrialArgs),
    /// Few-shot curve over stratified training subsets.
    Fewshot(TrialArgs),
    /// Prompt tuning versus full fine-tuning on the same base model.
    Compare(TrialArgs),
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
enum Format {
    Text,
    Json,
    #[default]
    Both,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, default_value = "MTS-DIALOG")]
    dataset: String,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    /// Accepted for uniformity; statistics involve no randomness.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for vocab.json, model.ckpt and the loss log.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Synthetic dialogues behind the pretraining corpus.
    #[arg(long)]
    examples: Option<usize>,
    /// Also write the synthetic train/validation/test splits as CSV.
    #[arg(long)]
    emit_dataset: bool,
}

/// Shared by train, sweep, fewshot and compare. Flags override `--config`.
#[derive(Debug, Args)]
struct TrialArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Tokenizer of the base model.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Base model checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Model preset name (toy-s, toy-m).
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<TrainMode>,
    #[arg(long, value_parser = parse_encoder)]
    encoder: Option<EncoderType>,
    #[arg(long)]
    virtual_tokens: Option<usize>,
    #[arg(long)]
    lstm_layers: Option<usize>,
    #[arg(long)]
    lstm_hidden: Option<usize>,
    #[arg(long)]
    mlp_hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_parser = parse_selection)]
    selection_metric: Option<SelectionMetric>,
    /// Few-shot sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Sweep virtual-token sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// External BERTScore command, split on whitespace.
    #[arg(long)]
    scorer: Option<String>,
}

#[derive(Debug, Args)]
struct GenerationArgs {
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// Recompute the whole prefix each step instead of using the cache.
    #[arg(long)]
    no_kv_cache: bool,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Prompt-encoder checkpoint; omit for a bare frame.
    #[arg(long)]
    prompt: Option<PathBuf>,
    /// Dialogues: JSON-lines with a `dialogue` field, or one dialogue per
    /// line with `\n` escapes. `-` reads standard input.
    #[arg(long, default_value = "-")]
    input: String,
    #[command(flatten)]
    generation: GenerationArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON-lines predictions with `id` and `candidate`.
    #[arg(long)]
    pred: PathBuf,
    /// Reference split (CSV or JSON-lines).
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

fn parse_mode(s: &str) -> std::result::Result<TrainMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_encoder(s: &str) -> std::result::Result<EncoderType, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_selection(s: &str) -> std::result::Result<SelectionMetric, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn split_command(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

impl TrialArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = load_config(self.config.as_deref())?;
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.output_dir {
            c.output_dir = v.clone();
        }
        if self.train.is_some() || self.validation.is_some() || self.test.is_some() {
            c.data.train = self.train.clone().or(c.data.train);
            c.data.validation = self.validation.clone().or(c.data.validation);
            c.data.test = self.test.clone().or(c.data.test);
        }
        if let Some(v) = &self.vocab {
            c.base.vocab = Some(v.clone());
        }
        if let Some(v) = &self.checkpoint {
            c.base.checkpoint = Some(v.clone());
        }
        if let Some(v) = &self.model {
            c.base.model = v.clone();
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.encoder {
            c.prompt.encoder_type = v;
        }
        if let Some(v) = self.virtual_tokens {
            c.prompt.num_virtual_tokens = v;
        }
        if let Some(v) = self.lstm_layers {
            c.prompt.lstm_layers = v;
        }
        if let Some(v) = self.lstm_hidden {
            c.prompt.lstm_hidden = v;
        }
        if let Some(v) = self.mlp_hidden {
            c.prompt.mlp_hidden = v;
        }
        if let Some(v) = self.lr {
            c.train.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            c.train.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.selection_metric {
            c.train.selection_metric = v;
        }
        if let Some(v) = &self.sizes {
            c.fewshot.sizes = v.clone();
        }
        if let Some(v) = &self.grid {
            c.sweep.virtual_tokens = v.clone();
        }
        if let Some(v) = &self.scorer {
            c.scorer = Some(split_command(v));
        }
        Ok(c)
    }
}

/// Parses `argv` (program name first) and runs the chosen subcommand.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(Error::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}\n\nRun `softprompt --help` for usage.");
            1
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Stats(a) => stats(a, out),
        Command::Pretrain(a) => pretrain(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Generate(a) => generate_cmd(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Sweep(a) => sweep_cmd(a, out),
        Command::Fewshot(a) => fewshot_cmd(a, out),
        Command::Compare(a) => compare_cmd(a, out),
    }
}

fn stats(a: StatsArgs, out: &mut dyn Write) -> Result<()> {
    let columns = match &a.config {
        Some(p) => ExperimentConfig::load(p)?.data.columns,
        None => ColumnMap::default(),
    };
    let mut rows: Vec<(&str, CorpusStats)> = Vec::new();
    for (name, path) in [
        ("Training", Some(&a.train)),
        ("Validation", a.validation.as_ref()),
        ("Test", a.test.as_ref()),
    ] {
        if let Some(p) = path {
            rows.push((name, corpus_stats(&load_split(p, &columns)?)?));
        }
    }
    if matches!(a.format, Format::Text | Format::Both) {
        write!(out, "{}", format_stats_table(&a.dataset, &rows)).map_err(io_err)?;
    }
    if matches!(a.format, Format::Json | Format::Both) {
        let json: Vec<serde_json::Value> = rows
            .iter()
            .map(|(name, s)| {
                serde_json::json!({
                    "Datasets": name,
                    "Sample Number": s.sample_count,
                    "Dialogue Average Word Count": s.avg_dialogue_words,
                    "Summary Average Word Count": s.avg_summary_words,
                })
            })
            .collect();
        writeln!(out, "{}", serde_json::to_string_pretty(&json)?).map_err(io_err)?;
    }
    Ok(())
}

fn pretrain(a: PretrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut c = load_config(a.config.as_deref())?;
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.model {
        c.base.model = v;
    }
    if let Some(v) = a.steps {
        c.base.pretrain.steps = v;
    }
    if let Some(v) = a.vocab_size {
        c.base.vocab_size = v;
    }
    if let Some(v) = a.examples {
        c.base.pretrain_examples = v;
    }
    let (vocab, weights, losses) = pretrain_base(&c.base, c.seed)?;
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    vocab.save(&dir.join("vocab.json"))?;
    checkpoint::save_transformer(&dir.join("model.ckpt"), &weights, c.seed, losses.len() as u64)?;
    let mut log = String::new();
    for (step, loss) in losses.iter().enumerate() {
        log.push_str(&serde_json::to_string(
            &serde_json::json!({"step": step, "loss": loss}),
        )?);
        log.push('\n');
    }
    let log_path = dir.join("pretrain_history.jsonl");
    std::fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
    if a.emit_dataset {
        let splits = c.data.load()?;
        for (name, ex) in [
            ("train", &splits.train),
            ("validation", &splits.validation),
            ("test", &splits.test),
        ] {
            write_csv(&dir.join(format!("{name}.csv")), ex)?;
        }
    }
    let first = losses.first().copied().unwrap_or(f64::NAN);
    let last = losses.last().copied().unwrap_or(f64::NAN);
    writeln!(
        out,
        "pretrained {} for {} steps: loss {first:.4} -> {last:.4}\nwrote {}",
        c.base.model,
        losses.len(),
        dir.display()
    )
    .map_err(io_err)?;
    Ok(())
}

fn train_cmd(a: TrialArgs, out: &mut dyn Write) -> Result<()> {
    let c = a.resolve()?;
    let exp = c.experiment()?;
    let run = exp.run_trial(&c.base_spec())?;
    let r = &run.record;
    writeln!(
        out,
        "{} trial in {}\nmode {}  trainable parameters {}  best epoch {}",
        if run.resumed { "resumed" } else { "completed" },
        run.dir.display(),
        r.spec.mode,
        r.trainable_parameters,
        r.best_epoch
    )
    .map_err(io_err)?;
    write!(out, "{}", r.report.to_text()).map_err(io_err)?;
    Ok(())
}

fn read_dialogues(input: &str) -> Result<Vec<String>> {
    let text = if input == "-" {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| Error::io("<stdin>", e))?;
        s
    } else {
        std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?
    };
    let mut out = Vec::new();
    for line in text.as_bytes().lines() {
        let line = line.map_err(|e| Error::io(input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if line.trim_start().starts_with('{') {
            let v: serde_json::Value = serde_json::from_str(&line)?;
            let d = v
                .get("dialogue")
                .and_then(|d| d.as_str())
                .ok_or_else(|| Error::Usage("JSON input lines need a `dialogue` string".into()))?;
            out.push(d.to_string());
        } else {
            out.push(line.replace("\\n", "\n"));
        }
    }
    Ok(out)
}

fn generate_cmd(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let mut g = load_config(a.config.as_deref())?.generation;
    if let Some(v) = a.seed {
        g.seed = v;
    }
    let ga = &a.generation;
    if let Some(v) = ga.top_k {
        g.top_k = v;
    }
    if let Some(v) = ga.top_p {
        g.top_p = v;
    }
    if let Some(v) = ga.temperature {
        g.temperature = v;
    }
    if let Some(v) = ga.max_new_tokens {
        g.max_new_tokens = v;
    }
    if ga.no_kv_cache {
        g.use_kv_cache = false;
    }
    g.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let vocab = Vocab::load(&a.vocab)?;
    let mut weights = checkpoint::load_transformer(&a.checkpoint)?;
    weights.frozen = true;
    let prompt = a.prompt.as_deref().map(checkpoint::load_prompt).transpose()?;
    for d in read_dialogues(&a.input)? {
        let s = generate(&weights, prompt.as_ref(), &vocab, &d, &g)?;
        writeln!(out, "{}", s.replace('\n', " ")).map_err(io_err)?;
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct Prediction {
    id: String,
    candidate: String,
}

fn evaluate_cmd(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let c = load_config(a.config.as_deref())?;
    let refs = load_split(&a.test, &c.data.columns)?;
    let text = std::fs::read_to_string(&a.pred).map_err(|e| Error::io(&a.pred, e))?;
    let mut preds = std::collections::HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let p: Prediction = serde_json::from_str(line)?;
        preds.insert(p.id, p.candidate);
    }
    let pairs = refs
        .iter()
        .map(|ex| {
            preds
                .get(&ex.id)
                .map(|c| Pair::new(c.clone(), ex.summary.clone()))
                .ok_or_else(|| Error::Config(format!("no prediction for id `{}`", ex.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let scorer = a.scorer.as_deref().map(split_command).or(c.scorer);
    let report = evaluate(&pairs, &EvalOptions { scorer })?;
    if matches!(a.format, Format::Text | Format::Both) {
        write!(out, "{}", report.to_text()).map_err(io_err)?;
    }
    if matches!(a.format, Format::Json | Format::Both) {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?).map_err(io_err)?;
    }
    Ok(())
}

fn reports_dir(c: &ExperimentConfig) -> PathBuf {
    c.output_dir.join("reports")
}

fn sweep_cmd(a: TrialArgs, out: &mut dyn Write) -> Result<()> {
    let c = a.resolve()?;
    let exp = c.experiment()?;
    let s = &c.sweep;
    let specs = harness::grid(&c.base_spec(), &s.virtual_tokens, &s.encoders, &s.learning_rates);
    let result = harness::sweep(&exp, &specs)?;
    let table = result.table();
    table.write(&reports_dir(&c), "sweep")?;
    write!(out, "{}", table.to_text()).map_err(io_err)?;
    match result.best {
        Some(b) => writeln!(out, "best row: {}", b + 1),
        None => writeln!(out, "best row: none (every trial failed)"),
    }
    .map_err(io_err)?;
    Ok(())
}

fn fewshot_cmd(a: TrialArgs, out: &mut dyn Write) -> Result<()> {
    let c = a.resolve()?;
    let exp = c.experiment()?;
    let rows = harness::fewshot_curve(&exp, &c.fewshot.sizes, c.fewshot.include_full, c.seed, &c.base_spec())?;
    let table = harness::fewshot_table(&rows, exp.splits.train.len());
    table.write(&reports_dir(&c), "fewshot")?;
    write!(out, "{}", table.to_text()).map_err(io_err)?;
    Ok(())
}

fn compare_cmd(a: TrialArgs, out: &mut dyn Write) -> Result<()> {
    let c = a.resolve()?;
    let exp = c.experiment()?;
    let base = c.base_spec();
    let prompt_spec = harness::TrialSpec {
        mode: TrainMode::PromptTune,
        ..base.clone()
    };
    let finetune_spec = harness::TrialSpec {
        mode: TrainMode::FineTune,
        ..base
    };
    let records = harness::compare_modes(&exp, &prompt_spec, &finetune_spec)?;
    let table = harness::comparison_table(&records);
    table.write(&reports_dir(&c), "compare")?;
    write!(out, "{}", table.to_text()).map_err(io_err)?;
    Ok(())
}
