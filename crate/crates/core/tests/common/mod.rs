//! Central-difference gradient checking in f64, shared by the gradcheck and
//! acceptance targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softprompt::autograd::{Graph, Tensor, Var};
use softprompt::model::{forward_batch, init_model, TransformerConfig};
use softprompt::prompt::{assemble, init_prompt_encoder, EncoderType, Mode, PromptEncoderConfig};
use softprompt::tokenizer::Vocab;
use softprompt::Result;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// The floor keeps near-zero entries from being judged on difference noise:
/// with |loss| ~ 5 the central difference carries ~1e-10 of rounding error.
const REL_FLOOR: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

type Build<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

/// Builds the graph over `inputs`, backpropagates, and compares every input
/// gradient entry with a central difference. Returns the worst relative error.
pub fn check(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let eval = |ts: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        g.value(out).data()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    g.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();

    let mut worst: f64 = 0.0;
    let mut ts = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for (j, &a) in grad.iter().enumerate() {
            let orig = ts[i].data()[j];
            ts[i].data_mut()[j] = orig + STEP;
            let up = eval(&ts);
            ts[i].data_mut()[j] = orig - STEP;
            let down = eval(&ts);
            ts[i].data_mut()[j] = orig;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

/// Reduces any output to a scalar through fixed random weights, so that the
/// upstream gradient is not uniform.
pub fn weighted_sum(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = random(g.value(x).shape(), &mut rng);
    let w = g.constant(w);
    let y = g.mul(x, w)?;
    g.sum(y)
}

fn tiny_model_config() -> TransformerConfig {
    TransformerConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_ffn: 16,
        vocab_size: Vocab::bytes_only().len(),
        max_positions: 96,
    }
}

/// Prompt encoder -> 2-layer transformer -> masked CE, differentiated with
/// respect to every prompt array and, when `tune_model`, every transformer
/// array too. Worst relative error over all seeds.
pub fn composite(encoder: EncoderType, tune_model: bool) -> f64 {
    let vocab = Vocab::bytes_only();
    let mcfg = tiny_model_config();
    let pcfg = match encoder {
        EncoderType::Mlp => PromptEncoderConfig::mlp(3, 6, mcfg.d_model),
        EncoderType::Lstm => PromptEncoderConfig::lstm(3, 2, 4, mcfg.d_model),
    };
    let mut worst: f64 = 0.0;
    for seed in SEEDS {
        let mut model = init_model::<f64>(&mcfg, seed).unwrap();
        let mut prompt = init_prompt_encoder::<f64>(&pcfg, seed + 100).unwrap();
        // Larger weights than the training init so every path carries signal.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in model.params.tensors_mut().chain(prompt.params.tensors_mut()) {
            for x in t.data_mut() {
                *x = rng.random_range(-0.5..0.5);
            }
        }
        let n_prompt = prompt.params.len();
        let mut inputs: Vec<Tensor<f64>> = prompt.params.iter().map(|(_, t)| t.clone()).collect();
        if tune_model {
            inputs.extend(model.params.iter().map(|(_, t)| t.clone()));
        }
        model.frozen = !tune_model;
        let w = check(&inputs, &|g, vars| {
            let mut model = model.clone();
            if !tune_model {
                let bound = model.bind(g);
                return loss_from(g, &prompt, &vars[..n_prompt], &bound, &vocab, &mcfg);
            }
            model.frozen = true;
            let bound = softprompt::model::BoundTransformer {
                vars: vars[n_prompt..].to_vec(),
            };
            loss_from(g, &prompt, &vars[..n_prompt], &bound, &vocab, &mcfg)
        });
        worst = worst.max(w);
    }
    worst
}

fn loss_from(
    g: &mut Graph<f64>,
    prompt: &softprompt::prompt::PromptEncoderState<f64>,
    prompt_vars: &[Var],
    model: &softprompt::model::BoundTransformer,
    vocab: &Vocab,
    cfg: &TransformerConfig,
) -> Result<Var> {
    let v = prompt.virtual_embeddings(g, prompt_vars)?;
    let seq = assemble(g, Some(v), vocab, model, cfg, "Doctor: ok?", Some("Fine."), Mode::Train)?;
    let (t, m) = seq.shifted_targets();
    let logits = forward_batch(g, model, cfg, &[seq.embeddings])?;
    g.cross_entropy(logits, &t, &m)
}

pub type Op = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// Every differentiable primitive with its input shapes.
pub const PRIMITIVES: &[(&str, &[&[usize]], Op)] = &[
    ("matmul", &[&[3, 4], &[4, 5]], |g, v| g.matmul(v[0], v[1])),
    ("transpose", &[&[3, 4]], |g, v| g.transpose(v[0])),
    ("add", &[&[3, 4], &[3, 4]], |g, v| g.add(v[0], v[1])),
    ("mul", &[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1])),
    ("scale", &[&[3, 4]], |g, v| g.scale(v[0], -1.7)),
    ("add_row", &[&[3, 4], &[4]], |g, v| g.add_row(v[0], v[1])),
    ("tanh", &[&[3, 4]], |g, v| g.tanh(v[0])),
    ("sigmoid", &[&[3, 4]], |g, v| g.sigmoid(v[0])),
    ("gelu", &[&[3, 4]], |g, v| g.gelu(v[0])),
    ("concat_rows", &[&[2, 3], &[4, 3]], |g, v| g.concat_rows(&[v[0], v[1]])),
    ("concat_cols", &[&[3, 2], &[3, 4]], |g, v| g.concat_cols(&[v[0], v[1]])),
    ("slice", &[&[5, 6]], |g, v| g.slice(v[0], 1, 3, 2, 3)),
    // Repeated ids check that gathered gradients accumulate.
    ("embedding", &[&[6, 4]], |g, v| g.embedding(v[0], &[2, 0, 2, 5, 2])),
    ("softmax_rows", &[&[3, 5]], |g, v| g.softmax_rows(v[0])),
    ("softmax axis 0", &[&[4, 3]], |g, v| g.softmax(v[0], 0)),
    ("causal_softmax", &[&[4, 4]], |g, v| g.causal_softmax(v[0])),
    ("layer_norm", &[&[3, 6], &[6], &[6]], |g, v| {
        g.layer_norm(v[0], v[1], v[2], 1e-5)
    }),
    ("sum", &[&[3, 4]], |g, v| g.sum(v[0])),
];

/// Worst relative error of one primitive over all seeds, reduced to a scalar
/// by a fixed random weighting.
pub fn primitive_worst(shapes: &[&[usize]], op: Op) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, &mut rng)).collect();
        worst = worst.max(check(&inputs, &|g, v| {
            let y = op(g, v)?;
            weighted_sum(g, y, seed)
        }));
    }
    worst
}

/// Masked cross-entropy, checked directly since it already yields a scalar.
pub fn cross_entropy_worst() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = random(&[5, 7], &mut rng);
        worst = worst.max(check(&[logits], &|g, v| {
            g.cross_entropy(v[0], &[1, 6, 0, 3, 3], &[true, false, true, true, false])
        }));
    }
    worst
}
