//! Attention masks, scaled dot-product attention and multi-head self-attention.
//!
//! Masks are stored row-wise as sorted lists of the key positions each query
//! may attend to. Sliding-window masks are built directly in that form, so
//! constructing and applying them costs `O(T * (2w + 1 + |G|))` rather than
//! `O(T^2)`.

use rand::Rng;

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tokenizer::EncodedSequence;

/// Which key positions each query may see before padding and causality are applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AttentionVariant {
    Full,
    /// Local window of radius `window` plus global positions that attend to,
    /// and are attended by, every position.
    Sliding { window: usize, global: Vec<usize> },
}

impl AttentionVariant {
    pub fn sliding(window: usize, global: impl Into<Vec<usize>>) -> Self {
        let mut global = global.into();
        global.sort_unstable();
        global.dedup();
        AttentionVariant::Sliding { window, global }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub num_heads: usize,
    pub model_dim: usize,
    pub variant: AttentionVariant,
    pub causal: bool,
}

impl AttentionConfig {
    pub fn new(num_heads: usize, model_dim: usize) -> Result<Self> {
        let cfg = AttentionConfig {
            num_heads,
            model_dim,
            variant: AttentionVariant::Full,
            causal: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_variant(mut self, variant: AttentionVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_causal(mut self, causal: bool) -> Self {
        self.causal = causal;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Parameter(format!(
                "model dimension {} is not divisible into {} heads",
                self.model_dim, self.num_heads
            )));
        }
        Ok(())
    }
}

/// Row-wise sparse boolean mask: `allowed(t)` lists the keys query `t` may attend to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    cols: usize,
    allowed: Vec<Vec<usize>>,
}

impl AttentionMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        AttentionMask {
            cols,
            allowed: (0..rows).map(|_| (0..cols).collect()).collect(),
        }
    }

    /// Builds a mask from per-row allowed key lists (sorted and deduplicated here).
    pub fn from_allowed(cols: usize, mut allowed: Vec<Vec<usize>>) -> Result<Self> {
        for row in &mut allowed {
            row.sort_unstable();
            row.dedup();
            if row.last().is_some_and(|&j| j >= cols) {
                return Err(Error::Index(format!("key position beyond {cols} columns")));
            }
        }
        Ok(AttentionMask { cols, allowed })
    }

    pub fn from_dense(dense: &[Vec<bool>]) -> Result<Self> {
        let cols = dense.first().map_or(0, Vec::len);
        if dense.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged mask rows".into()));
        }
        let allowed = dense
            .iter()
            .map(|r| r.iter().enumerate().filter(|(_, &a)| a).map(|(j, _)| j).collect())
            .collect();
        Ok(AttentionMask { cols, allowed })
    }

    pub fn rows(&self) -> usize {
        self.allowed.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allowed(&self, row: usize) -> &[usize] {
        &self.allowed[row]
    }

    pub fn is_allowed(&self, row: usize, col: usize) -> bool {
        self.allowed[row].binary_search(&col).is_ok()
    }

    /// Total number of allowed (query, key) pairs, i.e. scores attention evaluates.
    pub fn num_allowed(&self) -> usize {
        self.allowed.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        self.allowed
            .iter()
            .map(|row| {
                let mut dense = vec![false; self.cols];
                for &j in row {
                    dense[j] = true;
                }
                dense
            })
            .collect()
    }
}

/// Self-attention mask for one encoded sequence.
pub fn build_attention_mask(
    encoded: &EncodedSequence,
    causal: bool,
    variant: &AttentionVariant,
) -> Result<AttentionMask> {
    let valid: Vec<bool> = encoded.attention_mask.iter().map(|&m| m == 1).collect();
    mask_for_positions(&valid, causal, variant)
}

/// Self-attention mask over `valid.len()` positions where `valid[t]` is false for padding.
///
/// Keys at padding positions are never allowed. With `causal`, query `t` only
/// sees keys `<= t`. Padding queries whose pattern leaves nothing to attend
/// to fall back to the first valid position so every row stays non-empty.
pub fn mask_for_positions(
    valid: &[bool],
    causal: bool,
    variant: &AttentionVariant,
) -> Result<AttentionMask> {
    let len = valid.len();
    if len == 0 {
        return Err(Error::Input("mask for an empty sequence".into()));
    }
    let first_valid = valid.iter().position(|&v| v);
    let key_ok = |t: usize, j: usize| valid[j] && (!causal || j <= t);
    let allowed = match variant {
        AttentionVariant::Full => (0..len)
            .map(|t| (0..len).filter(|&j| key_ok(t, j)).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
        AttentionVariant::Sliding { window, global } => {
            if let Some(&g) = global.iter().find(|&&g| g >= len) {
                return Err(Error::Parameter(format!(
                    "global position {g} outside a sequence of {len}"
                )));
            }
            let is_global = |t: usize| global.binary_search(&t).is_ok();
            (0..len)
                .map(|t| {
                    if is_global(t) {
                        return (0..len).filter(|&j| key_ok(t, j)).collect();
                    }
                    let lo = t.saturating_sub(*window);
                    let hi = (t + window).min(len - 1);
                    let mut row: Vec<usize> = global
                        .iter()
                        .copied()
                        .filter(|&g| g < lo || g > hi)
                        .chain(lo..=hi)
                        .filter(|&j| key_ok(t, j))
                        .collect();
                    row.sort_unstable();
                    row
                })
                .collect()
        }
    };
    let allowed = allowed
        .into_iter()
        .enumerate()
        .map(|(t, row)| match (row.is_empty(), valid[t], first_valid) {
            (true, false, Some(f)) => vec![f],
            _ => row,
        })
        .collect();
    Ok(AttentionMask { cols: len, allowed })
}

/// Result of one attention evaluation.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub context: Var,
    heads: Vec<Var>,
}

impl AttentionOutput {
    /// Weights of every head as an `A x T x T*` tensor (zero where masked).
    pub fn weights(&self, tape: &Tape) -> Result<Tensor> {
        let mut data = Vec::new();
        let mut shape = vec![self.heads.len()];
        for &h in &self.heads {
            let w = tape
                .attention_weights(h)
                .ok_or_else(|| Error::Contract("node is not an attention node".into()))?;
            if shape.len() == 1 {
                shape.extend_from_slice(w.shape());
            }
            data.extend_from_slice(w.data());
        }
        Tensor::new(shape, data)
    }
}

/// `softmax(Q K^T / sqrt(d))` restricted by `mask`, applied to `V`.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: &AttentionMask,
) -> Result<AttentionOutput> {
    let context = tape.attention(q, k, v, mask)?;
    Ok(AttentionOutput {
        context,
        heads: vec![context],
    })
}

/// Fused projection weights of one self-attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionParams {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut mk = |name: &str| {
            store.add(format!("{prefix}.{name}"), Tensor::randn(&[dim, dim], std, rng))
        };
        Ok(AttentionParams {
            query: mk("query")?,
            key: mk("key")?,
            value: mk("value")?,
            output: mk("output")?,
        })
    }
}

/// Projects `x` to per-head queries, keys and values, attends, concatenates the
/// heads and applies the output projection.
pub fn multi_head_self_attention(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    params: &AttentionParams,
    config: &AttentionConfig,
    mask: &AttentionMask,
) -> Result<AttentionOutput> {
    config.validate()?;
    let (_, dim) = tape.value(x).dims2()?;
    if dim != config.model_dim {
        return Err(Error::Dimension(format!(
            "input width {dim} for model dimension {}",
            config.model_dim
        )));
    }
    let wq = tape.param(store, params.query);
    let wk = tape.param(store, params.key);
    let wv = tape.param(store, params.value);
    let wo = tape.param(store, params.output);
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let d = config.head_dim();
    let mut heads = Vec::with_capacity(config.num_heads);
    for a in 0..config.num_heads {
        let (lo, hi) = (a * d, (a + 1) * d);
        let qa = if config.num_heads == 1 { q } else { tape.slice_cols(q, lo, hi)? };
        let ka = if config.num_heads == 1 { k } else { tape.slice_cols(k, lo, hi)? };
        let va = if config.num_heads == 1 { v } else { tape.slice_cols(v, lo, hi)? };
        heads.push(tape.attention(qa, ka, va, mask)?);
    }
    let concat = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    let context = tape.matmul(concat, wo)?;
    Ok(AttentionOutput { context, heads })
}
