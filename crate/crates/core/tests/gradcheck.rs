//! Central-difference gradient checks in f64. Every primitive and the full
//! prompt-encoder -> transformer -> masked cross-entropy path.

mod common;

use common::{composite, cross_entropy_worst, primitive_worst, PRIMITIVES, TOL};
use softprompt::prompt::EncoderType;

fn primitive(name: &str) {
    let (_, shapes, op) = PRIMITIVES.iter().find(|p| p.0 == name).unwrap();
    let worst = primitive_worst(shapes, *op);
    assert!(worst <= TOL, "{name}: relative error {worst:e}");
}

#[test]
fn every_primitive_is_listed_once() {
    let mut names: Vec<&str> = PRIMITIVES.iter().map(|p| p.0).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), PRIMITIVES.len());
}

#[test]
fn matmul() {
    primitive("matmul");
}

#[test]
fn transpose() {
    primitive("transpose");
}

#[test]
fn add_and_mul() {
    for name in ["add", "mul", "scale", "add_row", "sum"] {
        primitive(name);
    }
}

#[test]
fn pointwise_nonlinearities() {
    for name in ["tanh", "sigmoid", "gelu"] {
        primitive(name);
    }
}

#[test]
fn concat_and_slice() {
    for name in ["concat_rows", "concat_cols", "slice"] {
        primitive(name);
    }
}

#[test]
fn embedding_gather_accumulates_repeats() {
    primitive("embedding");
}

#[test]
fn softmaxes() {
    for name in ["softmax_rows", "softmax axis 0", "causal_softmax"] {
        primitive(name);
    }
}

#[test]
fn layer_norm() {
    primitive("layer_norm");
}

#[test]
fn masked_cross_entropy() {
    let worst = cross_entropy_worst();
    assert!(worst <= TOL, "cross_entropy: {worst:e}");
}

#[test]
fn composite_mlp_prompt_through_frozen_transformer() {
    let worst = composite(EncoderType::Mlp, false);
    assert!(worst <= TOL, "{worst:e}");
}

#[test]
fn composite_lstm_prompt_through_frozen_transformer() {
    let worst = composite(EncoderType::Lstm, false);
    assert!(worst <= TOL, "{worst:e}");
}

#[test]
fn composite_full_model_gradients() {
    let worst = composite(EncoderType::Mlp, true);
    assert!(worst <= TOL, "{worst:e}");
}
