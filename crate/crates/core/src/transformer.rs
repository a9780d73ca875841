//! Post-norm Transformer encoder layers.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::attention::{multi_head_self_attention, AttentionConfig, AttentionMask, AttentionParams};
use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            other => Err(Error::Parameter(format!("unknown activation `{other}`"))),
        }
    }
}

/// Everything an encoder layer needs besides its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub attention: AttentionConfig,
    pub ffn_dim: usize,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gain: store.add(format!("{prefix}.gain"), Tensor::ones(&[dim]))?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderLayerParams {
    pub attention: AttentionParams,
    pub attention_norm: LayerNormParams,
    pub ffn_in: ParamId,
    pub ffn_in_bias: ParamId,
    pub ffn_out: ParamId,
    pub ffn_out_bias: ParamId,
    pub output_norm: LayerNormParams,
}

impl EncoderLayerParams {
    /// Normal(0, std) weights, zero biases, unit layer-norm gains.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        ffn_dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let attention = AttentionParams::init(store, &format!("{prefix}.attention"), dim, std, rng)?;
        let attention_norm = LayerNormParams::init(store, &format!("{prefix}.attention_norm"), dim)?;
        let ffn_in = store.add(
            format!("{prefix}.ffn.in"),
            Tensor::randn(&[dim, ffn_dim], std, rng),
        )?;
        let ffn_in_bias = store.add(format!("{prefix}.ffn.in_bias"), Tensor::zeros(&[ffn_dim]))?;
        let ffn_out = store.add(
            format!("{prefix}.ffn.out"),
            Tensor::randn(&[ffn_dim, dim], std, rng),
        )?;
        let ffn_out_bias = store.add(format!("{prefix}.ffn.out_bias"), Tensor::zeros(&[dim]))?;
        let output_norm = LayerNormParams::init(store, &format!("{prefix}.output_norm"), dim)?;
        Ok(EncoderLayerParams {
            attention,
            attention_norm,
            ffn_in,
            ffn_in_bias,
            ffn_out,
            ffn_out_bias,
            output_norm,
        })
    }
}

/// One encoder layer:
///
/// ```text
/// u  = MHSA(x)
/// u* = LayerNorm(dropout(u) + x)
/// h  = act(u* W1 + b1) W2 + b2
/// out = LayerNorm(dropout(h) + u*)
/// ```
pub fn encoder_layer(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    params: &EncoderLayerParams,
    config: &EncoderConfig,
    mask: &AttentionMask,
    training: bool,
) -> Result<Var> {
    let u = multi_head_self_attention(tape, store, x, &params.attention, &config.attention, mask)?
        .context;
    let u = tape.dropout(u, config.dropout, training)?;
    let u = tape.add(u, x)?;
    let u_star = params.attention_norm.apply(tape, store, u)?;

    let w1 = tape.param(store, params.ffn_in);
    let b1 = tape.param(store, params.ffn_in_bias);
    let w2 = tape.param(store, params.ffn_out);
    let b2 = tape.param(store, params.ffn_out_bias);
    let hidden = tape.matmul(u_star, w1)?;
    let hidden = tape.add_bias(hidden, b1)?;
    let hidden = match config.activation {
        Activation::Relu => tape.relu(hidden),
        Activation::Gelu => tape.gelu(hidden),
    };
    let h = tape.matmul(hidden, w2)?;
    let h = tape.add_bias(h, b2)?;
    let h = tape.dropout(h, config.dropout, training)?;
    let h = tape.add(h, u_star)?;
    params.output_norm.apply(tape, store, h)
}

/// Applies `layers` in order; each layer's output is the next layer's input.
pub fn encoder_stack(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    layers: &[EncoderLayerParams],
    config: &EncoderConfig,
    mask: &AttentionMask,
    training: bool,
) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::Parameter("an encoder stack needs at least one layer".into()));
    }
    layers.iter().try_fold(x, |h, layer| {
        encoder_layer(tape, store, h, layer, config, mask, training)
    })
}

/// Sine/cosine position encodings: even columns `sin(t / 10000^(2i/H))`,
/// odd columns `cos` of the same angle.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "sinusoidal encodings need an even width, got {dim}"
        )));
    }
    let mut data = Vec::with_capacity(len * dim);
    for t in 0..len {
        for i in 0..dim / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Tensor::new(vec![len, dim], data)
}
