use std::fmt;
use std::str::FromStr;

use crate::attention::{AttentionConfig, AttentionVariant};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::transformer::{Activation, EncoderConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositionEncoding {
    Learned,
    Sinusoidal,
}

impl fmt::Display for PositionEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PositionEncoding::Learned => "learned",
            PositionEncoding::Sinusoidal => "sinusoidal",
        })
    }
}

impl FromStr for PositionEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(PositionEncoding::Learned),
            "sinusoidal" => Ok(PositionEncoding::Sinusoidal),
            other => Err(Error::Parameter(format!("unknown position encoding `{other}`"))),
        }
    }
}

/// Shape and regularization of a BERT-style encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub attention: AttentionVariant,
    pub dropout: f64,
    pub activation: Activation,
    pub positions: PositionEncoding,
    /// Classifier categories; 0 means no classification head.
    pub num_labels: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 4,
            num_heads: 4,
            hidden: 128,
            ffn_dim: 512,
            vocab_size: 8192,
            max_positions: 512,
            attention: AttentionVariant::Full,
            dropout: 0.1,
            activation: Activation::Gelu,
            positions: PositionEncoding::Learned,
            num_labels: 0,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// A small configuration for tests and quick experiments.
    pub fn micro(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 2,
            num_heads: 2,
            hidden: 32,
            ffn_dim: 64,
            vocab_size,
            max_positions: 64,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        AttentionConfig::new(self.num_heads, self.hidden)?;
        let positive = [
            ("num_layers", self.num_layers),
            ("ffn_dim", self.ffn_dim),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Parameter(format!("`{name}` must be positive")));
            }
        }
        if self.vocab_size <= crate::tokenizer::NUM_SPECIAL {
            return Err(Error::Parameter(format!(
                "`vocab_size` {} leaves no room beyond the reserved tokens",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!("`dropout` {} outside [0, 1)", self.dropout)));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Parameter(format!("`init_std` {} must be positive", self.init_std)));
        }
        if self.positions == PositionEncoding::Sinusoidal && !self.hidden.is_multiple_of(2) {
            return Err(Error::Parameter("sinusoidal positions need an even `hidden`".into()));
        }
        if let AttentionVariant::Sliding { global, .. } = &self.attention {
            if let Some(g) = global.iter().find(|&&g| g >= self.max_positions) {
                return Err(Error::Parameter(format!(
                    "global position {g} beyond `max_positions` {}",
                    self.max_positions
                )));
            }
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        Ok(EncoderConfig {
            attention: AttentionConfig::new(self.num_heads, self.hidden)?
                .with_variant(self.attention.clone()),
            ffn_dim: self.ffn_dim,
            activation: self.activation,
            dropout: self.dropout,
        })
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("num_layers", self.num_layers);
        kv.set("num_heads", self.num_heads);
        kv.set("hidden", self.hidden);
        kv.set("ffn_dim", self.ffn_dim);
        kv.set("vocab_size", self.vocab_size);
        kv.set("max_positions", self.max_positions);
        match &self.attention {
            AttentionVariant::Full => kv.set("attention", "full"),
            AttentionVariant::Sliding { window, global } => {
                kv.set("attention", "sliding");
                kv.set("window", window);
                let g: Vec<String> = global.iter().map(usize::to_string).collect();
                kv.set("global", g.join(","));
            }
        }
        kv.set("dropout", self.dropout);
        kv.set("activation", self.activation);
        kv.set("positions", self.positions);
        kv.set("num_labels", self.num_labels);
        kv.set("init_std", self.init_std);
        kv
    }

    /// Reads the keys written by [`ModelConfig::to_key_values`]; absent keys
    /// keep the desk-scale defaults.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = ModelConfig::default();
        let attention = match kv.raw("attention").unwrap_or("full") {
            "full" => AttentionVariant::Full,
            "sliding" => AttentionVariant::sliding(
                kv.require("window")?,
                kv.get_list("global")?.unwrap_or_else(|| vec![0]),
            ),
            other => {
                return Err(Error::Parameter(format!("`attention` = {other:?}: expected full or sliding")))
            }
        };
        let cfg = ModelConfig {
            num_layers: kv.get_or("num_layers", d.num_layers)?,
            num_heads: kv.get_or("num_heads", d.num_heads)?,
            hidden: kv.get_or("hidden", d.hidden)?,
            ffn_dim: kv.get_or("ffn_dim", d.ffn_dim)?,
            vocab_size: kv.get_or("vocab_size", d.vocab_size)?,
            max_positions: kv.get_or("max_positions", d.max_positions)?,
            attention,
            dropout: kv.get_or("dropout", d.dropout)?,
            activation: kv.get_or("activation", d.activation)?,
            positions: kv.get_or("positions", d.positions)?,
            num_labels: kv.get_or("num_labels", d.num_labels)?,
            init_std: kv.get_or("init_std", d.init_std)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
