//! Autoregressive decoding with temperature, top-k and nucleus filtering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Float, Tensor};
use crate::error::{Error, Result};
use crate::model::{Decoder, KvCache, TransformerWeights};
use crate::prompt::{template_tokens, Mode, PromptEncoderState};
use crate::tokenizer::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub top_k: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
    /// Decode incrementally with a key/value cache instead of re-running the
    /// whole prefix every step. Both produce identical tokens.
    pub use_kv_cache: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            top_k: 1,
            top_p: 0.9,
            temperature: 0.1,
            max_new_tokens: 64,
            seed: 0,
            use_kv_cache: true,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Config(format!("temperature {} must be > 0", self.temperature)));
        }
        if self.max_new_tokens < 1 {
            return Err(Error::Config("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Token ids that survive filtering, most probable first (ties by id), with
/// their renormalized probabilities.
pub fn nucleus_survivors(logits: &[f64], config: &GenerationConfig) -> Vec<(usize, f64)> {
    let scaled: Vec<f64> = logits.iter().map(|&l| l / config.temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scaled.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();

    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| exp[b].total_cmp(&exp[a]).then(a.cmp(&b)));
    order.truncate(config.top_k.min(order.len()));

    let kept_mass: f64 = order.iter().map(|&i| exp[i] / total).sum();
    let mut survivors = Vec::with_capacity(order.len());
    let mut cumulative = 0.0;
    for &i in &order {
        let p = exp[i] / total / kept_mass;
        survivors.push((i, p));
        cumulative += p;
        if cumulative >= config.top_p {
            break;
        }
    }
    let mass: f64 = survivors.iter().map(|&(_, p)| p).sum();
    survivors.iter().map(|&(i, p)| (i, p / mass)).collect()
}

/// Temperature, then softmax, then top-k, then top-p, then renormalization.
/// Returns a full-vocabulary probability vector.
pub fn filter_distribution(logits: &[f64], config: &GenerationConfig) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (i, p) in nucleus_survivors(logits, config) {
        out[i] = p;
    }
    out
}

fn sample(survivors: &[(usize, f64)], rng: &mut ChaCha8Rng) -> usize {
    if survivors.len() == 1 {
        return survivors[0].0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(i, p) in survivors {
        acc += p;
        if u < acc {
            return i;
        }
    }
    survivors[survivors.len() - 1].0
}

fn to_f64<T: Float>(row: &[T]) -> Vec<f64> {
    row.iter().map(|v| v.to_f64()).collect()
}

/// Generates token ids (EOS excluded) for one dialogue.
pub fn generate_ids<T: Float>(
    weights: &TransformerWeights<T>,
    prompt: Option<&PromptEncoderState<T>>,
    vocab: &Vocab,
    dialogue: &str,
    config: &GenerationConfig,
) -> Result<Vec<u32>> {
    config.validate()?;
    let cfg = &weights.config;
    let frame = template_tokens(vocab, dialogue, None, Mode::Infer)?.frame;
    let virtual_rows = prompt.map(|p| p.fold()).transpose()?;
    let m = virtual_rows.as_ref().map_or(0, |v| v.rows());
    let needed = m + frame.len() + config.max_new_tokens;
    if needed > cfg.max_positions {
        return Err(Error::SequenceTooLong {
            len: needed,
            max: cfg.max_positions,
        });
    }

    let d = cfg.d_model;
    let emb = weights.token_embedding();
    let mut prefix: Vec<T> = Vec::with_capacity(needed * d);
    if let Some(v) = &virtual_rows {
        prefix.extend_from_slice(v.data());
    }
    for &id in &frame {
        prefix.extend_from_slice(emb.row(id as usize));
    }

    let eos = vocab.specials().eos as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::new();
    let decoder = Decoder::new(weights);
    let mut cache = KvCache::new(cfg);
    let mut pending = Tensor::matrix(prefix.len() / d, d, prefix.clone())?;

    for _ in 0..config.max_new_tokens {
        let logits = if config.use_kv_cache {
            decoder.step(&mut cache, &pending)?
        } else {
            let all = Tensor::matrix(prefix.len() / d, d, prefix.clone())?;
            weights.forward(&all)?
        };
        let last = logits.row(logits.rows() - 1);
        let survivors = nucleus_survivors(&to_f64(last), config);
        let next = sample(&survivors, &mut rng);
        if next == eos {
            break;
        }
        out.push(next as u32);
        let row = emb.row(next);
        prefix.extend_from_slice(row);
        pending = Tensor::matrix(1, d, row.to_vec())?;
    }
    Ok(out)
}

pub fn generate<T: Float>(
    weights: &TransformerWeights<T>,
    prompt: Option<&PromptEncoderState<T>>,
    vocab: &Vocab,
    dialogue: &str,
    config: &GenerationConfig,
) -> Result<String> {
    let ids = generate_ids(weights, prompt, vocab, dialogue, config)?;
    vocab.decode(&ids)
}
