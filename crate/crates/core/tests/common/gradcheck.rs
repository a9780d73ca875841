//! Finite-difference gradient checks shared by the gradient and acceptance suites.

use deskbert::attention::{mask_for_positions, AttentionConfig, AttentionMask, AttentionParams, AttentionVariant};
use deskbert::transformer::{encoder_stack, Activation, EncoderConfig, EncoderLayerParams, LayerNormParams};
use deskbert::{ParamId, ParamStore, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: u64 = 20;
const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
const TAPE_SEED: u64 = 99;

/// Elementwise relative error with a small absolute floor so that exact zeros
/// on both sides compare equal.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// The scalar `sum(f(inputs) * r)` for a fixed random `r`, or `f` itself when scalar.
struct Check<F> {
    f: F,
    weights: Option<Tensor>,
}

impl<F> Check<F>
where
    F: Fn(&mut Tape, &ParamStore, &[ParamId]) -> Result<Var>,
{
    fn loss(&self, store: &ParamStore, ids: &[ParamId]) -> (Tape, Var) {
        let mut tape = Tape::with_seed(TAPE_SEED);
        let out = (self.f)(&mut tape, store, ids).expect("forward");
        let loss = match &self.weights {
            Some(r) => {
                let r = tape.constant(r.clone());
                let prod = tape.mul(out, r).expect("weights match the output");
                tape.sum(prod)
            }
            None => out,
        };
        (tape, loss)
    }
}

/// Worst relative error over every element of every input.
fn gradient_error<F>(inputs: Vec<Tensor>, rng: &mut ChaCha8Rng, f: F) -> f64
where
    F: Fn(&mut Tape, &ParamStore, &[ParamId]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("x{i}"), t).unwrap())
        .collect();
    let mut check = Check { f, weights: None };
    let (tape, out) = check.loss(&store, &ids);
    if !tape.value(out).is_scalar_like() {
        let shape = tape.value(out).shape().to_vec();
        check.weights = Some(Tensor::uniform(&shape, -1.0, 1.0, rng));
    }
    let (tape, loss) = check.loss(&store, &ids);
    store.zero_grad();
    tape.backward(loss, &mut store).expect("backward");

    let mut worst: f64 = 0.0;
    for &id in &ids {
        let analytic = store.get(id).grad().clone();
        for i in 0..analytic.len() {
            let orig = store.get(id).value().data()[i];
            store.get_mut(id).value_mut()[i] = orig + STEP;
            let (t, l) = check.loss(&store, &ids);
            let plus = t.value(l).item();
            store.get_mut(id).value_mut()[i] = orig - STEP;
            let (t, l) = check.loss(&store, &ids);
            let minus = t.value(l).item();
            store.get_mut(id).value_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::randn(&[rows, cols], 1.0, rng)
}

/// Entries bounded away from zero so kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = randn(rng, rows, cols);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            let bump = 0.05 + rng.random::<f64>();
            *v = if *v < 0.0 { -bump } else { bump };
        }
    }
    t
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..6))
}

pub type Case = fn(&mut ChaCha8Rng) -> f64;

/// Every checked operation, with the full encoder last.
pub const CASES: &[(&str, Case)] = &[
    ("matmul", matmul),
    ("add/sub/mul", elementwise_binary),
    ("add_bias/scale", bias_and_scale),
    ("transpose/reshape", shape_operations),
    ("concat/slice", concatenation_and_slicing),
    ("gather_rows/embedding", gather_and_embedding),
    ("sum/mean", reductions),
    ("relu/gelu/sigmoid/tanh", activations),
    ("softmax", softmax_both_axes),
    ("layer_norm", layer_norm),
    ("dropout", dropout_with_a_fixed_mask),
    ("cross_entropy", cross_entropy_with_ignored_rows),
    ("attention", masked_attention),
    ("encoder", two_layer_encoder),
];

/// Worst error over all instances of `case` and the seed where it occurred.
pub fn worst_instance(case: Case) -> (f64, u64) {
    (0..INSTANCES)
        .map(|seed| (case(&mut ChaCha8Rng::seed_from_u64(seed)), seed))
        .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a })
}

pub fn matmul(rng: &mut ChaCha8Rng) -> f64 {
    let (m, k) = dims(rng);
    let n = rng.random_range(1..5);
    let inputs = vec![randn(rng, m, k), randn(rng, k, n)];
    gradient_error(inputs, rng, |t, s, ids| {
        let (a, b) = (t.param(s, ids[0]), t.param(s, ids[1]));
        t.matmul(a, b)
    })
}

pub fn elementwise_binary(rng: &mut ChaCha8Rng) -> f64 {
    let (m, n) = dims(rng);
    let inputs = vec![randn(rng, m, n), randn(rng, m, n)];
    gradient_error(inputs, rng, |t, s, ids| {
        let (a, b) = (t.param(s, ids[0]), t.param(s, ids[1]));
        let sum = t.add(a, b)?;
        let diff = t.sub(a, b)?;
        t.mul(sum, diff)
    })
}

pub fn bias_and_scale(rng: &mut ChaCha8Rng) -> f64 {
    let (m, n) = dims(rng);
    let inputs = vec![randn(rng, m, n), Tensor::randn(&[n], 1.0, rng)];
    gradient_error(inputs, rng, |t, s, ids| {
        let (x, b) = (t.param(s, ids[0]), t.param(s, ids[1]));
        let y = t.add_bias(x, b)?;
        Ok(t.scale(y, -1.7))
    })
}

pub fn shape_operations(rng: &mut ChaCha8Rng) -> f64 {
    let (m, n) = dims(rng);
    let inputs = vec![randn(rng, m, n)];
    gradient_error(inputs, rng, |t, s, ids| {
        let x = t.param(s, ids[0]);
        let y = t.transpose(x)?;
        let cols = t.value(y).len();
        t.reshape(y, &[1, cols])
    })
}

pub fn concatenation_and_slicing(rng: &mut ChaCha8Rng) -> f64 {
    let (m, n) = dims(rng);
    let inputs = vec![randn(rng, m, n), randn(rng, m, n + 1), randn(rng, 2, 2 * n + 1)];
    gradient_error(inputs, rng, move |t, s, ids| {
        let (a, b, c) = (t.param(s, ids[0]), t.param(s, ids[1]), t.param(s, ids[2]));
        let ab = t.concat_cols(&[a, b])?;
        let abc = t.concat_rows(&[ab, c])?;
        t.slice_cols(abc, 1, 2 * n + 1)
    })
}

pub fn gather_and_embedding(rng: &mut ChaCha8Rng) -> f64 {
    let (m, n) = dims(rng);
    let rows: Vec<usize> = (0..m + 2).map(|_| rng.random_range(0..m)).collect();
    let inputs = vec![randn(rng, m, n)];
    gradient_error(inputs, rng, move |t, s, ids| {
        let x = t.param(s, ids[0]);
        let g = t.gather_rows(x, &rows)?;
        let e = t.embedding(x, &rows)?;
        t.mul(g, e)
    })
}

pub fn reductions(rng: &mut ChaCha8Rng) -> f64 {
    let (m, n) = dims(rng);
    let inputs = vec![randn(rng, m, n)];
    gradient_error(inputs, rng, |t, s, ids| {
        let x = t.param(s, ids[0]);
        let sq = t.mul(x, x)?;
        let a = t.sum(sq);
        let b = t.mean(x);
        t.mul(a, b)
    })
}

pub fn activations(rng: &mut ChaCha8Rng) -> f64 {
    let (m, n) = dims(rng);
    let inputs = vec![away_from_zero(rng, m, n)];
    gradient_error(inputs, rng, |t, s, ids| {
        let x = t.param(s, ids[0]);
        let r = t.relu(x);
        let g = t.gelu(x);
        let sg = t.sigmoid(x);
        let th = t.tanh(x);
        let a = t.add(r, g)?;
        let b = t.mul(sg, th)?;
        t.add(a, b)
    })
}

pub fn softmax_both_axes(rng: &mut ChaCha8Rng) -> f64 {
    let (m, n) = dims(rng);
    let inputs = vec![randn(rng, m, n)];
    gradient_error(inputs, rng, |t, s, ids| {
        let x = t.param(s, ids[0]);
        let a = t.softmax(x, 1)?;
        let b = t.softmax(x, 0)?;
        t.add(a, b)
    })
}

pub fn layer_norm(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.random_range(1..5);
    let n = rng.random_range(2..7);
    let inputs = vec![
        randn(rng, m, n),
        Tensor::uniform(&[n], 0.5, 1.5, rng),
        Tensor::randn(&[n], 0.5, rng),
    ];
    gradient_error(inputs, rng, |t, s, ids| {
        let (x, g, b) = (t.param(s, ids[0]), t.param(s, ids[1]), t.param(s, ids[2]));
        t.layer_norm(x, g, b, 1e-5)
    })
}

pub fn dropout_with_a_fixed_mask(rng: &mut ChaCha8Rng) -> f64 {
    let (m, n) = dims(rng);
    let inputs = vec![randn(rng, m, n)];
    gradient_error(inputs, rng, |t, s, ids| {
        let x = t.param(s, ids[0]);
        t.dropout(x, 0.3, true)
    })
}

pub fn cross_entropy_with_ignored_rows(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.random_range(2..6);
    let c = rng.random_range(2..6);
    let mut targets: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();
    targets[0] = usize::MAX;
    let inputs = vec![randn(rng, m, c)];
    gradient_error(inputs, rng, move |t, s, ids| {
        let x = t.param(s, ids[0]);
        t.cross_entropy(x, &targets, usize::MAX)
    })
}

fn random_mask(rng: &mut ChaCha8Rng, len: usize) -> AttentionMask {
    let valid: Vec<bool> = (0..len).map(|i| i == 0 || rng.random::<f64>() < 0.8).collect();
    let variant = if rng.random::<bool>() {
        AttentionVariant::Full
    } else {
        AttentionVariant::sliding(1, [0])
    };
    mask_for_positions(&valid, rng.random::<bool>(), &variant).unwrap()
}

pub fn masked_attention(rng: &mut ChaCha8Rng) -> f64 {
    let len = rng.random_range(1..7);
    let d = rng.random_range(1..5);
    let mask = random_mask(rng, len);
    let inputs = vec![randn(rng, len, d), randn(rng, len, d), randn(rng, len, d + 1)];
    gradient_error(inputs, rng, move |t, s, ids| {
        let (q, k, v) = (t.param(s, ids[0]), t.param(s, ids[1]), t.param(s, ids[2]));
        t.attention(q, k, v, &mask)
    })
}

/// Encoder parameter ids in the order `EncoderLayerParams::init` adds them.
fn layers_from_ids(ids: &[ParamId]) -> Vec<EncoderLayerParams> {
    ids.chunks(12)
        .map(|c| EncoderLayerParams {
            attention: AttentionParams {
                query: c[0],
                key: c[1],
                value: c[2],
                output: c[3],
            },
            attention_norm: LayerNormParams { gain: c[4], bias: c[5] },
            ffn_in: c[6],
            ffn_in_bias: c[7],
            ffn_out: c[8],
            ffn_out_bias: c[9],
            output_norm: LayerNormParams { gain: c[10], bias: c[11] },
        })
        .collect()
}

pub fn two_layer_encoder(rng: &mut ChaCha8Rng) -> f64 {
    let (dim, heads, ffn) = (8, 2, 12);
    let len = rng.random_range(2..7);
    let mask = random_mask(rng, len);
    let training = rng.random::<bool>();
    let activation = if rng.random::<bool>() { Activation::Gelu } else { Activation::Relu };
    let config = EncoderConfig {
        attention: AttentionConfig::new(heads, dim).unwrap(),
        ffn_dim: ffn,
        activation,
        dropout: 0.1,
    };

    let mut init = ParamStore::new();
    init.add("input", Tensor::randn(&[len, dim], 1.0, rng)).unwrap();
    for l in 0..2 {
        EncoderLayerParams::init(&mut init, &format!("layer{l}"), dim, ffn, 0.3, rng).unwrap();
    }
    // move unit gains and zero biases off their special values
    let mut inputs: Vec<Tensor> = init.iter().map(|(_, p)| p.value().clone()).collect();
    for t in &mut inputs {
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    gradient_error(inputs, rng, move |t, s, ids| {
        let x = t.param(s, ids[0]);
        encoder_stack(t, s, x, &layers_from_ids(&ids[1..]), &config, &mask, training)
    })
}
