//! Soft prompt: a trainable bank of virtual-token inputs mapped to model-width
//! embeddings by an MLP or a bidirectional LSTM, and the assembly of the
//! `[virtual] Input: {dialogue}\n Output:{summary}` training sequence.

use serde::{Deserialize, Serialize};

use crate::autograd::{Float, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{BoundTransformer, Parameterized, TransformerConfig};
use crate::params::{Init, ParamStore};
use crate::tokenizer::{Vocab, PAD};

pub const FRAME_PREFIX: &str = "Input: ";
pub const FRAME_SUFFIX: &str = "\n Output:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderType {
    Mlp,
    Lstm,
}

impl std::fmt::Display for EncoderType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderType::Mlp => "mlp",
            EncoderType::Lstm => "lstm",
        })
    }
}

impl std::str::FromStr for EncoderType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(EncoderType::Mlp),
            "lstm" => Ok(EncoderType::Lstm),
            other => Err(Error::Config(format!("unknown encoder type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEncoderConfig {
    pub num_virtual_tokens: usize,
    pub encoder_type: EncoderType,
    /// Width of the virtual input bank; defaults to `model_dim`.
    pub input_embed_dim: Option<usize>,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub mlp_hidden: usize,
    pub model_dim: usize,
}

impl PromptEncoderConfig {
    /// Large LSTM setting (10 layers, hidden 1024).
    pub fn lstm_default(num_virtual_tokens: usize, model_dim: usize) -> Self {
        Self {
            num_virtual_tokens,
            encoder_type: EncoderType::Lstm,
            input_embed_dim: None,
            lstm_layers: 10,
            lstm_hidden: 1024,
            mlp_hidden: 1024,
            model_dim,
        }
    }

    pub fn mlp(num_virtual_tokens: usize, mlp_hidden: usize, model_dim: usize) -> Self {
        Self {
            num_virtual_tokens,
            encoder_type: EncoderType::Mlp,
            input_embed_dim: None,
            lstm_layers: 0,
            lstm_hidden: 0,
            mlp_hidden,
            model_dim,
        }
    }

    pub fn lstm(num_virtual_tokens: usize, layers: usize, hidden: usize, model_dim: usize) -> Self {
        Self {
            num_virtual_tokens,
            encoder_type: EncoderType::Lstm,
            input_embed_dim: None,
            lstm_layers: layers,
            lstm_hidden: hidden,
            mlp_hidden: 0,
            model_dim,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.input_embed_dim.unwrap_or(self.model_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_virtual_tokens == 0 {
            return bad("num_virtual_tokens must be >= 1".into());
        }
        if self.model_dim == 0 || self.embed_dim() == 0 {
            return bad("model_dim and input_embed_dim must be positive".into());
        }
        match self.encoder_type {
            EncoderType::Mlp if self.mlp_hidden == 0 => bad("mlp_hidden must be positive".into()),
            EncoderType::Lstm if self.lstm_layers == 0 => bad("lstm_layers must be positive".into()),
            EncoderType::Lstm if self.lstm_hidden < 2 || !self.lstm_hidden.is_multiple_of(2) => {
                bad(format!("lstm_hidden {} must be even and >= 2", self.lstm_hidden))
            }
            _ => Ok(()),
        }
    }

    pub fn check_model(&self, model: &TransformerConfig) -> Result<()> {
        if self.model_dim != model.d_model {
            return Err(Error::Config(format!(
                "prompt model_dim {} != transformer d_model {}",
                self.model_dim, model.d_model
            )));
        }
        Ok(())
    }

    /// Closed-form trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        let (m, e, h) = (self.num_virtual_tokens, self.embed_dim(), self.model_dim);
        match self.encoder_type {
            EncoderType::Mlp => {
                let k = self.mlp_hidden;
                m * e + (e * k + k) + (k * h + h)
            }
            EncoderType::Lstm => {
                let hd = self.lstm_hidden / 2;
                let mut total = m * e;
                for layer in 0..self.lstm_layers {
                    let input = if layer == 0 { e } else { 2 * hd };
                    total += 2 * (input * 4 * hd + hd * 4 * hd + 4 * hd);
                }
                let k = self.lstm_hidden;
                total + (2 * hd * k + k) + (k * h + h)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptEncoderState<T> {
    pub config: PromptEncoderConfig,
    pub params: ParamStore<T>,
}

impl<T: Float> Parameterized for PromptEncoderState<T> {
    fn total_parameters(&self) -> usize {
        self.params.numel()
    }
    fn frozen(&self) -> bool {
        false
    }
}

pub fn init_prompt_encoder<T: Float>(config: &PromptEncoderConfig, seed: u64) -> Result<PromptEncoderState<T>> {
    config.validate()?;
    let (m, e, h) = (config.num_virtual_tokens, config.embed_dim(), config.model_dim);
    let mut init = Init::new(seed);
    let mut p = ParamStore::new();
    p.push("virtual_input_embedding", init.normal(&[m, e], 1.0));
    let linear = |init: &mut Init, p: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        p.push(format!("{name}.weight"), init.uniform(&[fan_in, fan_out], bound));
        p.push(format!("{name}.bias"), init.uniform(&[fan_out], bound));
    };
    match config.encoder_type {
        EncoderType::Mlp => {
            linear(&mut init, &mut p, "mlp.0", e, config.mlp_hidden);
            linear(&mut init, &mut p, "mlp.1", config.mlp_hidden, h);
        }
        EncoderType::Lstm => {
            let hd = config.lstm_hidden / 2;
            let bound = 1.0 / (hd as f64).sqrt();
            for layer in 0..config.lstm_layers {
                let input = if layer == 0 { e } else { 2 * hd };
                for dir in ["fwd", "bwd"] {
                    let name = format!("lstm.{layer}.{dir}");
                    p.push(format!("{name}.w_ih"), init.uniform(&[input, 4 * hd], bound));
                    p.push(format!("{name}.w_hh"), init.uniform(&[hd, 4 * hd], bound));
                    p.push(format!("{name}.bias"), init.uniform(&[4 * hd], bound));
                }
            }
            linear(&mut init, &mut p, "head.0", 2 * hd, config.lstm_hidden);
            linear(&mut init, &mut p, "head.1", config.lstm_hidden, h);
        }
    }
    Ok(PromptEncoderState {
        config: *config,
        params: p,
    })
}

fn affine<T: Float>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// One LSTM direction over all rows of `input`; rows are time steps.
fn lstm_direction<T: Float>(
    g: &mut Graph<T>,
    input: Var,
    w_ih: Var,
    w_hh: Var,
    bias: Var,
    hd: usize,
    reverse: bool,
) -> Result<Var> {
    let steps = g.value(input).rows();
    let xw = affine(g, input, w_ih, bias)?;
    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    let mut outputs = vec![None; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let mut gates = g.slice(xw, t, 1, 0, 4 * hd)?;
        if let Some(hp) = h {
            let rec = g.matmul(hp, w_hh)?;
            gates = g.add(gates, rec)?;
        }
        let i = g.slice(gates, 0, 1, 0, hd)?;
        let i = g.sigmoid(i)?;
        let f = g.slice(gates, 0, 1, hd, hd)?;
        let f = g.sigmoid(f)?;
        let cand = g.slice(gates, 0, 1, 2 * hd, hd)?;
        let cand = g.tanh(cand)?;
        let o = g.slice(gates, 0, 1, 3 * hd, hd)?;
        let o = g.sigmoid(o)?;
        let ic = g.mul(i, cand)?;
        let c_new = match c {
            Some(cp) => {
                let fc = g.mul(f, cp)?;
                g.add(fc, ic)?
            }
            None => ic,
        };
        let tc = g.tanh(c_new)?;
        let h_new = g.mul(o, tc)?;
        outputs[t] = Some(h_new);
        h = Some(h_new);
        c = Some(c_new);
    }
    let rows: Vec<Var> = outputs.into_iter().map(|v| v.expect("every step visited")).collect();
    g.concat_rows(&rows)
}

impl<T: Float> PromptEncoderState<T> {
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.bind(g, true)
    }

    /// Recomputes the `m x model_dim` virtual embeddings on `g` from bound
    /// parameters, so gradients reach every encoder array.
    pub fn virtual_embeddings(&self, g: &mut Graph<T>, vars: &[Var]) -> Result<Var> {
        let cfg = &self.config;
        let bank = vars[0];
        match cfg.encoder_type {
            EncoderType::Mlp => {
                let hdn = affine(g, bank, vars[1], vars[2])?;
                let hdn = g.tanh(hdn)?;
                affine(g, hdn, vars[3], vars[4])
            }
            EncoderType::Lstm => {
                let hd = cfg.lstm_hidden / 2;
                let mut x = bank;
                let mut k = 1;
                for _ in 0..cfg.lstm_layers {
                    let fwd = lstm_direction(g, x, vars[k], vars[k + 1], vars[k + 2], hd, false)?;
                    let bwd = lstm_direction(g, x, vars[k + 3], vars[k + 4], vars[k + 5], hd, true)?;
                    x = g.concat_cols(&[fwd, bwd])?;
                    k += 6;
                }
                let hdn = affine(g, x, vars[k], vars[k + 1])?;
                let hdn = g.tanh(hdn)?;
                affine(g, hdn, vars[k + 2], vars[k + 3])
            }
        }
    }

    /// Evaluates the encoder once and returns the constant virtual embeddings.
    pub fn fold(&self) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let out = self.virtual_embeddings(&mut g, &vars)?;
        Ok(g.value(out).clone())
    }

    pub fn cast<U: Float>(&self) -> PromptEncoderState<U> {
        PromptEncoderState {
            config: self.config,
            params: self.params.cast(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Token layout of one templated example, before embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateTokens {
    pub frame: Vec<u32>,
    /// Summary ids followed by EOS; empty in inference mode.
    pub output: Vec<u32>,
}

pub fn frame_text(dialogue: &str) -> String {
    format!("{FRAME_PREFIX}{dialogue}{FRAME_SUFFIX}")
}

pub fn template_tokens(vocab: &Vocab, dialogue: &str, summary: Option<&str>, mode: Mode) -> Result<TemplateTokens> {
    let frame = vocab.encode(&frame_text(dialogue));
    let output = match (mode, summary) {
        (Mode::Train, Some(s)) => {
            let mut ids = vocab.encode(s);
            ids.push(vocab.specials().eos);
            ids
        }
        (Mode::Train, None) => {
            return Err(Error::Config("train mode requires a summary".into()));
        }
        (Mode::Infer, _) => Vec::new(),
    };
    Ok(TemplateTokens { frame, output })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segments {
    pub virtual_len: usize,
    pub frame_len: usize,
    pub output_len: usize,
}

impl Segments {
    pub fn total(&self) -> usize {
        self.virtual_len + self.frame_len + self.output_len
    }
}

#[derive(Debug, Clone)]
pub struct AssembledSequence {
    /// `(m + frame + output) x model_dim`.
    pub embeddings: Var,
    /// Token id per position; virtual positions hold PAD.
    pub tokens: Vec<u32>,
    /// True exactly at positions whose token is an output-segment target.
    pub loss_mask: Vec<bool>,
    pub segments: Segments,
}

impl AssembledSequence {
    /// Next-token targets and mask aligned with logit rows: row `p` predicts
    /// the token at `p + 1`.
    pub fn shifted_targets(&self) -> (Vec<u32>, Vec<bool>) {
        let n = self.tokens.len();
        let mut targets = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        for p in 0..n {
            if p + 1 < n {
                targets.push(self.tokens[p + 1]);
                mask.push(self.loss_mask[p + 1]);
            } else {
                targets.push(PAD);
                mask.push(false);
            }
        }
        (targets, mask)
    }
}

/// Splices virtual rows with the embedded template on `g`.
#[allow(clippy::too_many_arguments)]
pub fn assemble<T: Float>(
    g: &mut Graph<T>,
    virtual_emb: Option<Var>,
    vocab: &Vocab,
    model: &BoundTransformer,
    model_cfg: &TransformerConfig,
    dialogue: &str,
    summary: Option<&str>,
    mode: Mode,
) -> Result<AssembledSequence> {
    let tokens = template_tokens(vocab, dialogue, summary, mode)?;
    let m = virtual_emb.map_or(0, |v| g.value(v).rows());
    let segments = Segments {
        virtual_len: m,
        frame_len: tokens.frame.len(),
        output_len: tokens.output.len(),
    };
    let total = segments.total();
    if total > model_cfg.max_positions {
        return Err(Error::SequenceTooLong {
            len: total,
            max: model_cfg.max_positions,
        });
    }
    let mut ids = tokens.frame.clone();
    ids.extend_from_slice(&tokens.output);
    let token_rows = g.embedding(model.token_embedding(), &ids)?;
    let embeddings = match virtual_emb {
        Some(v) => g.concat_rows(&[v, token_rows])?,
        None => token_rows,
    };

    let mut all_tokens = vec![PAD; m];
    all_tokens.extend_from_slice(&ids);
    let mut loss_mask = vec![false; m + segments.frame_len];
    loss_mask.extend(std::iter::repeat_n(true, segments.output_len));
    Ok(AssembledSequence {
        embeddings,
        tokens: all_tokens,
        loss_mask,
        segments,
    })
}
