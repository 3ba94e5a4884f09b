//! Decoder-only transformer: learned absolute positions, pre-norm blocks with
//! causal multi-head attention, GELU feed-forward, LM head tied to the token
//! embedding.
//!
//! The forward pass takes embeddings rather than token ids so that virtual
//! prompt rows can be spliced in front of ordinary token embeddings. Position
//! embeddings are always added here, so row `t` of the input sits at position
//! `t`.

use serde::{Deserialize, Serialize};

use crate::autograd::{kernels, Float, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Init, ParamStore};

pub const LN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
}

impl TransformerConfig {
    /// 2 layers, 64 wide. Used by unit tests.
    pub fn toy_s(vocab_size: usize) -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ffn: 256,
            vocab_size,
            max_positions: 256,
        }
    }

    /// 4 layers, 128 wide. Used by the end-to-end runs.
    pub fn toy_m(vocab_size: usize) -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_ffn: 512,
            vocab_size,
            max_positions: 256,
        }
    }

    pub fn preset(name: &str, vocab_size: usize) -> Option<Self> {
        match name {
            "toy-S" | "toy-s" => Some(Self::toy_s(vocab_size)),
            "toy-M" | "toy-m" => Some(Self::toy_m(vocab_size)),
            _ => None,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.n_layers,
            self.n_heads,
            self.d_model,
            self.d_ffn,
            self.vocab_size,
            self.max_positions,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "all transformer dims must be positive: {self:?}"
            )));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model < 2 {
            return Err(Error::Config("d_model must be at least 2".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count of [`init_model`]'s layout.
    pub fn parameter_count(&self) -> usize {
        let (d, f) = (self.d_model, self.d_ffn);
        let block = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        self.vocab_size * d + self.max_positions * d + self.n_layers * block + 2 * d
    }
}

/// Per-block array order inside the parameter store.
pub const BLOCK_ARRAYS: [&str; 16] = [
    "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo",
    "ln2.gain", "ln2.bias", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
];

const TOKEN_EMB: usize = 0;
const POS_EMB: usize = 1;
const FIRST_BLOCK: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerWeights<T> {
    pub config: TransformerConfig,
    pub params: ParamStore<T>,
    pub frozen: bool,
}

/// Graph handles for one bound copy of the weights, in store order.
#[derive(Debug, Clone)]
pub struct BoundTransformer {
    pub vars: Vec<Var>,
}

impl BoundTransformer {
    pub fn token_embedding(&self) -> Var {
        self.vars[TOKEN_EMB]
    }
    fn block(&self, layer: usize, k: usize) -> Var {
        self.vars[FIRST_BLOCK + layer * BLOCK_ARRAYS.len() + k]
    }
    fn final_ln(&self) -> (Var, Var) {
        let n = self.vars.len();
        (self.vars[n - 2], self.vars[n - 1])
    }
}

pub fn init_model<T: Float>(config: &TransformerConfig, seed: u64) -> Result<TransformerWeights<T>> {
    config.validate()?;
    let (d, f) = (config.d_model, config.d_ffn);
    let mut init = Init::new(seed);
    let mut p = ParamStore::new();
    p.push("token_embedding", init.normal(&[config.vocab_size, d], INIT_STD));
    p.push("position_embedding", init.normal(&[config.max_positions, d], INIT_STD));
    for l in 0..config.n_layers {
        for name in BLOCK_ARRAYS {
            let t = match name {
                "ln1.gain" | "ln2.gain" => Tensor::filled(&[d], T::ONE),
                "attn.wq" | "attn.wk" | "attn.wv" | "attn.wo" => init.normal(&[d, d], INIT_STD),
                "ffn.w1" => init.normal(&[d, f], INIT_STD),
                "ffn.w2" => init.normal(&[f, d], INIT_STD),
                "ffn.b1" => Tensor::zeros(&[f]),
                _ => Tensor::zeros(&[d]),
            };
            p.push(format!("layers.{l}.{name}"), t);
        }
    }
    p.push("ln_f.gain", Tensor::filled(&[d], T::ONE));
    p.push("ln_f.bias", Tensor::zeros(&[d]));
    Ok(TransformerWeights {
        config: *config,
        params: p,
        frozen: false,
    })
}

/// Something that owns parameters and may be frozen.
pub trait Parameterized {
    fn total_parameters(&self) -> usize;
    fn frozen(&self) -> bool;
}

impl<T: Float> Parameterized for TransformerWeights<T> {
    fn total_parameters(&self) -> usize {
        self.params.numel()
    }
    fn frozen(&self) -> bool {
        self.frozen
    }
}

pub fn count_parameters(p: &impl Parameterized, trainable_only: bool) -> usize {
    if trainable_only && p.frozen() {
        0
    } else {
        p.total_parameters()
    }
}

/// Published trainable-parameter figures, kept only as report labels.
pub const PUBLISHED_TRAINABLE_PARAMETERS: [(&str, &str); 3] = [
    ("GatorTronGPT-5B", "70M"),
    ("GatorTronGPT-20B", "302M"),
    ("T5-Large", "770M"),
];

pub(crate) fn attention_scale<T: Float>(head_dim: usize) -> T {
    T::ONE / T::from_f64(head_dim as f64).sqrt()
}

impl<T: Float> TransformerWeights<T> {
    pub fn bind(&self, g: &mut Graph<T>) -> BoundTransformer {
        BoundTransformer {
            vars: self.params.bind(g, !self.frozen),
        }
    }

    pub fn token_embedding(&self) -> &Tensor<T> {
        self.params.get(TOKEN_EMB)
    }

    pub fn hash_hex(&self) -> String {
        self.params.hash_hex()
    }

    pub fn cast<U: Float>(&self) -> TransformerWeights<U> {
        TransformerWeights {
            config: self.config,
            params: self.params.cast(),
            frozen: self.frozen,
        }
    }

    fn block(&self, layer: usize, k: usize) -> &Tensor<T> {
        self.params.get(FIRST_BLOCK + layer * BLOCK_ARRAYS.len() + k)
    }

    /// Single-sequence forward: `inputs` is `T x d_model`, result `T x vocab`.
    pub fn forward(&self, inputs: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.bind_constant(&mut g);
        let x = g.constant(inputs.clone());
        let logits = forward_batch(&mut g, &bound, &self.config, &[x])?;
        Ok(g.value(logits).clone())
    }

    fn bind_constant(&self, g: &mut Graph<T>) -> BoundTransformer {
        BoundTransformer {
            vars: self.params.bind(g, false),
        }
    }
}

/// Runs a batch of embedding sequences through the transformer on `g`.
///
/// Row-wise layers run once over all sequences stacked; attention is computed
/// per sequence. Returns the stacked logits, `sum(T_i) x vocab`, in input order.
pub fn forward_batch<T: Float>(
    g: &mut Graph<T>,
    w: &BoundTransformer,
    cfg: &TransformerConfig,
    seqs: &[Var],
) -> Result<Var> {
    let d = cfg.d_model;
    let mut lens = Vec::with_capacity(seqs.len());
    let mut rows = Vec::with_capacity(seqs.len());
    for &s in seqs {
        let (t, c) = (g.value(s).rows(), g.value(s).cols());
        if c != d {
            return Err(Error::shape("forward", format!("input width {c} != d_model {d}")));
        }
        if t > cfg.max_positions {
            return Err(Error::SequenceTooLong {
                len: t,
                max: cfg.max_positions,
            });
        }
        let pos = g.slice(w.vars[POS_EMB], 0, t, 0, d)?;
        rows.push(g.add(s, pos)?);
        lens.push(t);
    }
    let mut x = if rows.len() == 1 {
        rows[0]
    } else {
        g.concat_rows(&rows)?
    };
    let eps = T::from_f64(LN_EPS);
    let dh = cfg.head_dim();
    let scale = attention_scale::<T>(dh);

    for l in 0..cfg.n_layers {
        let p = |k: usize| w.block(l, k);
        let h = g.layer_norm(x, p(0), p(1), eps)?;
        let q = g.matmul(h, p(2))?;
        let q = g.add_row(q, p(3))?;
        let k = g.matmul(h, p(4))?;
        let k = g.add_row(k, p(5))?;
        let v = g.matmul(h, p(6))?;
        let v = g.add_row(v, p(7))?;

        let mut seq_out = Vec::with_capacity(lens.len());
        let mut offset = 0;
        for &t in &lens {
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let c0 = head * dh;
                let qh = g.slice(q, offset, t, c0, dh)?;
                let kh = g.slice(k, offset, t, c0, dh)?;
                let vh = g.slice(v, offset, t, c0, dh)?;
                let kt = g.transpose(kh)?;
                let s = g.matmul(qh, kt)?;
                let s = g.scale(s, scale)?;
                let a = g.causal_softmax(s)?;
                heads.push(g.matmul(a, vh)?);
            }
            seq_out.push(if heads.len() == 1 {
                heads[0]
            } else {
                g.concat_cols(&heads)?
            });
            offset += t;
        }
        let attn = if seq_out.len() == 1 {
            seq_out[0]
        } else {
            g.concat_rows(&seq_out)?
        };
        let o = g.matmul(attn, p(8))?;
        let o = g.add_row(o, p(9))?;
        x = g.add(x, o)?;

        let h2 = g.layer_norm(x, p(10), p(11), eps)?;
        let f = g.matmul(h2, p(12))?;
        let f = g.add_row(f, p(13))?;
        let f = g.gelu(f)?;
        let f = g.matmul(f, p(14))?;
        let f = g.add_row(f, p(15))?;
        x = g.add(x, f)?;
    }
    let (lg, lb) = w.final_ln();
    let x = g.layer_norm(x, lg, lb, eps)?;
    let head = g.transpose(w.token_embedding())?;
    g.matmul(x, head)
}

/// Keys and values of every position decoded so far, per layer.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<T: Float> KvCache<T> {
    pub fn new(cfg: &TransformerConfig) -> Self {
        Self {
            keys: vec![Vec::new(); cfg.n_layers],
            values: vec![Vec::new(); cfg.n_layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Incremental decoder over read-only weights.
///
/// Feeding rows one by one yields logits bit-identical to running
/// [`TransformerWeights::forward`] over the whole prefix: both paths share
/// the same kernels and every product is computed row-independently.
pub struct Decoder<'w, T> {
    weights: &'w TransformerWeights<T>,
    head: Vec<T>,
}

impl<'w, T: Float> Decoder<'w, T> {
    pub fn new(weights: &'w TransformerWeights<T>) -> Self {
        let emb = weights.token_embedding();
        let (v, d) = (emb.rows(), emb.cols());
        let src = emb.data();
        let mut head = vec![T::ZERO; v * d];
        for i in 0..v {
            for j in 0..d {
                head[j * v + i] = src[i * d + j];
            }
        }
        Self { weights, head }
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.weights.config
    }

    /// Appends `inputs` (`n x d_model`) to the cache and returns their logits.
    pub fn step(&self, cache: &mut KvCache<T>, inputs: &Tensor<T>) -> Result<Tensor<T>> {
        let cfg = &self.weights.config;
        let (n, d) = (inputs.rows(), cfg.d_model);
        if inputs.cols() != d {
            return Err(Error::shape("decode", format!("input width {} != {d}", inputs.cols())));
        }
        let start = cache.len;
        if start + n > cfg.max_positions {
            return Err(Error::SequenceTooLong {
                len: start + n,
                max: cfg.max_positions,
            });
        }
        let pos = self.weights.params.get(POS_EMB).data();
        let mut x: Vec<T> = inputs
            .data()
            .iter()
            .zip(&pos[start * d..(start + n) * d])
            .map(|(&a, &b)| a + b)
            .collect();
        let eps = T::from_f64(LN_EPS);
        let dh = cfg.head_dim();
        let scale = attention_scale::<T>(dh);
        let total = start + n;

        for l in 0..cfg.n_layers {
            let p = |k: usize| self.weights.block(l, k).data();
            let h = layer_norm(&x, n, d, p(0), p(1), eps);
            let q = linear(&h, n, d, d, p(2), p(3));
            let k = linear(&h, n, d, d, p(4), p(5));
            let v = linear(&h, n, d, d, p(6), p(7));
            cache.keys[l].extend_from_slice(&k);
            cache.values[l].extend_from_slice(&v);
            let keys = &cache.keys[l];
            let values = &cache.values[l];

            let mut attn = vec![T::ZERO; n * d];
            for r in 0..n {
                let visible = start + r + 1;
                for head in 0..cfg.n_heads {
                    let c0 = head * dh;
                    let qrow = &q[r * d + c0..r * d + c0 + dh];
                    let mut scores = vec![T::ZERO; visible];
                    T::gemm(
                        1,
                        dh,
                        visible,
                        qrow,
                        (dh as isize, 1),
                        &keys[c0..],
                        (1, d as isize),
                        false,
                        &mut scores,
                    );
                    for s in scores.iter_mut() {
                        *s *= scale;
                    }
                    kernels::softmax_row(&mut scores, visible);
                    let out = &mut attn[r * d + c0..r * d + c0 + dh];
                    T::gemm(
                        1,
                        visible,
                        dh,
                        &scores,
                        (visible as isize, 1),
                        &values[c0..],
                        (d as isize, 1),
                        false,
                        out,
                    );
                }
            }
            let o = linear(&attn, n, d, d, p(8), p(9));
            x.iter_mut().zip(&o).for_each(|(a, &b)| *a += b);

            let h2 = layer_norm(&x, n, d, p(10), p(11), eps);
            let mut f = linear(&h2, n, d, cfg.d_ffn, p(12), p(13));
            f.iter_mut().for_each(|v| *v = kernels::gelu(*v));
            let f = linear(&f, n, cfg.d_ffn, d, p(14), p(15));
            x.iter_mut().zip(&f).for_each(|(a, &b)| *a += b);
        }
        cache.len = total;

        let np = self.weights.params.len();
        let gain = self.weights.params.get(np - 2).data();
        let bias = self.weights.params.get(np - 1).data();
        let x = layer_norm(&x, n, d, gain, bias, eps);
        let logits = kernels::matmul(&x, &self.head, n, d, cfg.vocab_size);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decode"));
        }
        Tensor::matrix(n, cfg.vocab_size, logits)
    }
}

fn layer_norm<T: Float>(x: &[T], n: usize, d: usize, gain: &[T], bias: &[T], eps: T) -> Vec<T> {
    let mut out = vec![T::ZERO; n * d];
    let mut xhat = vec![T::ZERO; d];
    for i in 0..n {
        kernels::layer_norm_row(
            &x[i * d..(i + 1) * d],
            gain,
            bias,
            eps,
            &mut xhat,
            &mut out[i * d..(i + 1) * d],
        );
    }
    out
}

fn linear<T: Float>(x: &[T], n: usize, din: usize, dout: usize, w: &[T], b: &[T]) -> Vec<T> {
    let mut y = kernels::matmul(x, w, n, din, dout);
    for row in y.chunks_mut(dout) {
        row.iter_mut().zip(b).for_each(|(a, &c)| *a += c);
    }
    y
}
