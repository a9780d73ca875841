//! Reverse-mode gradients against central finite differences.

mod common;

use common::gradcheck::{self, worst_instance, Case, INSTANCES, TOLERANCE};

fn check(name: &str, case: Case) {
    let (err, seed) = worst_instance(case);
    assert!(
        err < TOLERANCE,
        "{name}: relative error {err:e} at instance {seed} of {INSTANCES}"
    );
}

#[test]
fn matmul() {
    check("matmul", gradcheck::matmul);
}

#[test]
fn elementwise_binary() {
    check("add/sub/mul", gradcheck::elementwise_binary);
}

#[test]
fn bias_and_scale() {
    check("add_bias/scale", gradcheck::bias_and_scale);
}

#[test]
fn shape_operations() {
    check("transpose/reshape", gradcheck::shape_operations);
}

#[test]
fn concatenation_and_slicing() {
    check("concat/slice", gradcheck::concatenation_and_slicing);
}

#[test]
fn gather_and_embedding() {
    check("gather_rows/embedding", gradcheck::gather_and_embedding);
}

#[test]
fn reductions() {
    check("sum/mean", gradcheck::reductions);
}

#[test]
fn activations() {
    check("relu/gelu/sigmoid/tanh", gradcheck::activations);
}

#[test]
fn softmax_both_axes() {
    check("softmax", gradcheck::softmax_both_axes);
}

#[test]
fn layer_norm() {
    check("layer_norm", gradcheck::layer_norm);
}

#[test]
fn dropout_with_a_fixed_mask() {
    check("dropout", gradcheck::dropout_with_a_fixed_mask);
}

#[test]
fn cross_entropy_with_ignored_rows() {
    check("cross_entropy", gradcheck::cross_entropy_with_ignored_rows);
}

#[test]
fn masked_attention() {
    check("attention", gradcheck::masked_attention);
}

#[test]
fn two_layer_encoder() {
    check("encoder", gradcheck::two_layer_encoder);
}
