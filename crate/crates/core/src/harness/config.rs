//! JSON experiment configuration. Every field has a default, so a config file
//! only names what it changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Experiment, TrialSpec, DESK_VIRTUAL_TOKENS};
use crate::checkpoint;
use crate::corpus::{load_dataset, ColumnMap, SplitSet};
use crate::error::{Error, Result};
use crate::generation::GenerationConfig;
use crate::metrics::EvalOptions;
use crate::model::{TransformerConfig, TransformerWeights};
use crate::prompt::EncoderType;
use crate::synthetic::{pretraining_texts, synthetic_examples, synthetic_splits};
use crate::tokenizer::{train_bpe, Vocab};
use crate::training::{pretrain_toy_lm, PretrainConfig, TrainConfig, TrainMode};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticData {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self {
            train: 32,
            validation: 8,
            test: 16,
            seed: 5,
        }
    }
}

/// Split files, or a generated synthetic task when `train` is unset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub columns: ColumnMap,
    pub synthetic: SyntheticData,
}

impl DataConfig {
    pub fn load(&self) -> Result<SplitSet> {
        match (&self.train, &self.validation, &self.test) {
            (Some(tr), Some(va), Some(te)) => load_dataset(tr, va, te, &self.columns),
            (None, None, None) => {
                let s = &self.synthetic;
                let set = synthetic_splits(s.train, s.validation, s.test, s.seed);
                set.validate()?;
                Ok(set)
            }
            _ => Err(Error::Config(
                "data needs all of train, validation and test, or none".into(),
            )),
        }
    }
}

/// Base model: load `vocab` + `checkpoint`, or pretrain one and cache it
/// under the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseConfig {
    pub model: String,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub vocab_size: usize,
    /// Synthetic dialogues behind the pretraining corpus.
    pub pretrain_examples: usize,
    pub pretrain: PretrainConfig,
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self {
            model: "toy-s".into(),
            vocab: None,
            checkpoint: None,
            vocab_size: 512,
            pretrain_examples: 3000,
            pretrain: PretrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSettings {
    pub encoder_type: EncoderType,
    pub num_virtual_tokens: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub mlp_hidden: usize,
}

impl Default for PromptSettings {
    fn default() -> Self {
        Self {
            encoder_type: EncoderType::Lstm,
            num_virtual_tokens: 16,
            lstm_layers: 2,
            lstm_hidden: 64,
            mlp_hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub virtual_tokens: Vec<usize>,
    pub encoders: Vec<EncoderType>,
    pub learning_rates: Vec<f64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            virtual_tokens: DESK_VIRTUAL_TOKENS.to_vec(),
            encoders: vec![EncoderType::Mlp, EncoderType::Lstm],
            learning_rates: vec![1e-4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FewshotSettings {
    pub sizes: Vec<usize>,
    pub include_full: bool,
}

impl Default for FewshotSettings {
    fn default() -> Self {
        Self {
            sizes: vec![5, 10, 20],
            include_full: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub mode: TrainMode,
    pub data: DataConfig,
    pub base: BaseConfig,
    pub prompt: PromptSettings,
    pub train: TrainConfig,
    pub generation: GenerationConfig,
    /// External BERTScore command, program first.
    pub scorer: Option<Vec<String>>,
    pub sweep: SweepSettings,
    pub fewshot: FewshotSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            mode: TrainMode::PromptTune,
            data: DataConfig::default(),
            base: BaseConfig::default(),
            prompt: PromptSettings::default(),
            train: TrainConfig::default(),
            generation: GenerationConfig::default(),
            scorer: None,
            sweep: SweepSettings::default(),
            fewshot: FewshotSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<TransformerConfig> {
        TransformerConfig::preset(&self.base.model, vocab_size)
            .ok_or_else(|| Error::Config(format!("unknown model preset `{}`", self.base.model)))
    }

    /// The trial described by this config's prompt and training sections.
    pub fn base_spec(&self) -> TrialSpec {
        TrialSpec {
            model_config: self.base.model.clone(),
            mode: self.mode,
            encoder_type: self.prompt.encoder_type,
            num_virtual_tokens: self.prompt.num_virtual_tokens,
            lstm_layers: self.prompt.lstm_layers,
            lstm_hidden: self.prompt.lstm_hidden,
            mlp_hidden: self.prompt.mlp_hidden,
            learning_rate: self.train.learning_rate,
            seed: self.seed,
            sample_count: None,
            max_epochs: self.train.max_epochs,
            batch_size: self.train.batch_size,
            warmup_steps: self.train.warmup_steps,
            selection_metric: self.train.selection_metric,
        }
    }

    fn base_cache_dir(&self) -> PathBuf {
        let key = serde_json::json!({
            "model": self.base.model,
            "vocab_size": self.base.vocab_size,
            "pretrain_examples": self.base.pretrain_examples,
            "pretrain": self.base.pretrain,
            "seed": self.seed,
        });
        let h = hex::encode(Sha256::digest(key.to_string().as_bytes()));
        self.output_dir.join(format!("base-{}", &h[..16]))
    }

    /// Loads the configured base model, or pretrains one on the synthetic
    /// multi-task corpus and caches it.
    pub fn prepare_base(&self) -> Result<(Vocab, TransformerWeights<f32>)> {
        if let (Some(v), Some(c)) = (&self.base.vocab, &self.base.checkpoint) {
            let vocab = Vocab::load(v)?;
            let mut w = checkpoint::load_transformer(c)?;
            w.frozen = true;
            return Ok((vocab, w));
        }
        if self.base.vocab.is_some() != self.base.checkpoint.is_some() {
            return Err(Error::Config("base needs both vocab and checkpoint, or neither".into()));
        }
        let dir = self.base_cache_dir();
        let (vpath, cpath) = (dir.join("vocab.json"), dir.join("model.ckpt"));
        if vpath.exists() && cpath.exists() {
            let vocab = Vocab::load(&vpath)?;
            let mut w = checkpoint::load_transformer(&cpath)?;
            w.frozen = true;
            return Ok((vocab, w));
        }
        let (vocab, w, _) = pretrain_base(&self.base, self.seed)?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        vocab.save(&vpath)?;
        checkpoint::save_transformer(&cpath, &w, self.seed, self.base.pretrain.steps as u64)?;
        Ok((vocab, w))
    }

    pub fn experiment(&self) -> Result<Experiment> {
        let splits = self.data.load()?;
        let (vocab, base) = self.prepare_base()?;
        let expected = self.model_config(base.config.vocab_size)?;
        if expected != base.config {
            return Err(Error::Config(format!(
                "base checkpoint does not match preset `{}`",
                self.base.model
            )));
        }
        Ok(Experiment {
            model_name: self.base.model.clone(),
            splits,
            vocab,
            base,
            generation: self.generation,
            eval: EvalOptions {
                scorer: self.scorer.clone(),
            },
            output_dir: self.output_dir.clone(),
        })
    }
}

/// Tokenizer plus frozen toy LM trained on the synthetic pretraining corpus.
/// Also returns the per-step pretraining losses.
pub fn pretrain_base(base: &BaseConfig, seed: u64) -> Result<(Vocab, TransformerWeights<f32>, Vec<f64>)> {
    let examples = synthetic_examples(base.pretrain_examples, seed ^ 0x9e37_79b9, "pre-");
    let texts = pretraining_texts(&examples);
    let vocab = train_bpe(&texts, base.vocab_size, seed)?;
    let cfg = TransformerConfig::preset(&base.model, base.vocab_size)
        .ok_or_else(|| Error::Config(format!("unknown model preset `{}`", base.model)))?;
    let out = pretrain_toy_lm(&texts, &vocab, &cfg, &base.pretrain, seed)?;
    Ok((vocab, out.weights, out.losses))
}
