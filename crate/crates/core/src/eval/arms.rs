//! The classifiers an experiment compares. Every arm is driven by flat
//! key-value parameters so grid points can override any of them.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::dataset::Dataset;
use crate::baselines::{
    predict_linear, train_linear, AvgEmbedding, BowConfig, BowPipeline, EmbeddingTable, LinearConfig,
};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, BertModel, ModelConfig};
use crate::tokenizer::{MergeScoring, Tokenizer, Truncation};
use crate::train::{fine_tune, AdamConfig, FineTuneConfig, LrSchedule, Optimizer, ScheduleShape, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArmKind {
    /// Bag-of-words counts into a linear classifier.
    Bow,
    /// Averaged word vectors into a linear classifier.
    Embedding,
    /// Encoder fine-tuned end to end.
    Transformer,
}

impl fmt::Display for ArmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArmKind::Bow => "bow",
            ArmKind::Embedding => "embedding",
            ArmKind::Transformer => "transformer",
        })
    }
}

impl FromStr for ArmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bow" => Ok(ArmKind::Bow),
            "embedding" => Ok(ArmKind::Embedding),
            "transformer" => Ok(ArmKind::Transformer),
            other => Err(Error::Parameter(format!(
                "unknown arm kind `{other}`: expected bow, embedding or transformer"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
enum Resources {
    None,
    Table(EmbeddingTable),
    Pretrained {
        tokenizer: Option<Tokenizer>,
        model: Option<Box<BertModel>>,
    },
}

/// A named classifier with its base parameters and loaded resources.
#[derive(Clone, Debug)]
pub struct Arm {
    name: String,
    kind: ArmKind,
    config: KeyValues,
    resources: Resources,
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}

impl Arm {
    /// Builds an arm; relative `table`, `tokenizer` and `checkpoint` paths are
    /// resolved against `base_dir`.
    pub fn new(name: &str, kind: ArmKind, config: KeyValues, base_dir: &Path) -> Result<Self> {
        let resources = match kind {
            ArmKind::Bow => Resources::None,
            ArmKind::Embedding => {
                let path = resolve(base_dir, &config.require::<String>("table")?);
                let dim = config.require("dim")?;
                Resources::Table(EmbeddingTable::load(&path, dim)?)
            }
            ArmKind::Transformer => {
                let tokenizer = config
                    .raw("tokenizer")
                    .map(|t| Tokenizer::load(&resolve(base_dir, t)))
                    .transpose()?;
                let model = config
                    .raw("checkpoint")
                    .map(|c| load_checkpoint(&resolve(base_dir, c)).map(Box::new))
                    .transpose()?;
                match (&tokenizer, &model) {
                    (None, Some(_)) => {
                        return Err(Error::Parameter(
                            "a checkpoint needs the `tokenizer` it was trained with".into(),
                        ))
                    }
                    (Some(t), Some(m)) if t.vocab_size() != m.config().vocab_size => {
                        return Err(Error::Parameter(format!(
                            "tokenizer has {} terms but the checkpoint expects {}",
                            t.vocab_size(),
                            m.config().vocab_size
                        )))
                    }
                    _ => {}
                }
                Resources::Pretrained { tokenizer, model }
            }
        };
        Ok(Arm {
            name: name.to_owned(),
            kind,
            config,
            resources,
        })
    }

    /// An arm whose transformer starts from in-memory components.
    pub fn transformer(name: &str, config: KeyValues, tokenizer: Tokenizer, model: Option<BertModel>) -> Self {
        Arm {
            name: name.to_owned(),
            kind: ArmKind::Transformer,
            config,
            resources: Resources::Pretrained {
                tokenizer: Some(tokenizer),
                model: model.map(Box::new),
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ArmKind {
        self.kind
    }

    /// Base parameters, grid axes included.
    pub fn config(&self) -> &KeyValues {
        &self.config
    }

    /// Trains on `train` with `params` (base parameters overridden by a grid
    /// point) and predicts every set in `evaluate`.
    pub fn fit_predict(
        &self,
        train: &Dataset,
        evaluate: &[&Dataset],
        params: &KeyValues,
        seed: u64,
    ) -> Result<Vec<Vec<usize>>> {
        let c = train.num_classes();
        match (&self.kind, &self.resources) {
            (ArmKind::Bow, _) => {
                let (pipe, x) = BowPipeline::fit(&train.texts, bow_config(params)?)?;
                let model = train_linear(&x, &train.labels, c, &linear_config(params, seed)?)?;
                evaluate
                    .iter()
                    .map(|d| Ok(predict_linear(&model, &pipe.transform(&d.texts))?.0))
                    .collect()
            }
            (ArmKind::Embedding, Resources::Table(table)) => {
                let avg = AvgEmbedding::fit(&train.texts, table, params.get_or("min_count", 1)?)?;
                let x = avg.transform(&train.texts);
                let model = train_linear(&x, &train.labels, c, &linear_config(params, seed)?)?;
                evaluate
                    .iter()
                    .map(|d| Ok(predict_linear(&model, &avg.transform(&d.texts))?.0))
                    .collect()
            }
            (ArmKind::Transformer, Resources::Pretrained { tokenizer, model }) => {
                fit_transformer(tokenizer.as_ref(), model.as_deref(), train, evaluate, params, seed)
            }
            _ => Err(Error::Contract(format!("arm `{}` is missing its resources", self.name))),
        }
    }
}

fn bow_config(p: &KeyValues) -> Result<BowConfig> {
    let d = BowConfig::default();
    let cfg = BowConfig {
        lowercase: p.get_or("lowercase", d.lowercase)?,
        stem: p.get_or("stem", d.stem)?,
        remove_punctuation: p.get_or("remove_punctuation", d.remove_punctuation)?,
        remove_numbers: p.get_or("remove_numbers", d.remove_numbers)?,
        remove_symbols: p.get_or("remove_symbols", d.remove_symbols)?,
        min_df: p.get_or("min_df", d.min_df)?,
        max_df: p.get_or("max_df", d.max_df)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn linear_config(p: &KeyValues, seed: u64) -> Result<LinearConfig> {
    let d = LinearConfig::default();
    Ok(LinearConfig {
        loss: p.get_or("loss", d.loss)?,
        penalty: p.get_or("penalty", d.penalty)?,
        epochs: p.get_or("epochs", d.epochs)?,
        rate: p.get_or("rate", d.rate)?,
        seed,
        batch_size: p.get("batch_size")?,
    })
}

fn truncation(p: &KeyValues, max_len: usize) -> Result<Truncation> {
    match p.raw("truncation").unwrap_or("head_tail") {
        "tail" => Ok(Truncation::Tail),
        "head_tail" => {
            let budget = max_len.saturating_sub(2);
            let first = p.get_or("head", budget / 4)?;
            Ok(Truncation::HeadTail {
                first,
                last: p.get_or("tail", budget.saturating_sub(first))?,
            })
        }
        other => Err(Error::Parameter(format!(
            "`truncation` = {other:?}: expected head_tail or tail"
        ))),
    }
}

/// Fine-tuning configuration read from `params` for `examples` training sequences.
pub fn fine_tune_config(p: &KeyValues, examples: usize, seed: u64) -> Result<(FineTuneConfig, AdamConfig)> {
    let d = TrainConfig::default();
    let train = TrainConfig {
        batch_size: p.get_or("batch_size", d.batch_size)?,
        epochs: p.get_or("epochs", d.epochs)?,
        seed,
        clip: match p.raw("clip") {
            Some("none") => None,
            _ => Some(p.get_or("clip", 1.0)?),
        },
        dropout: p.get("train_dropout")?,
    };
    train.validate()?;
    let total = train.total_steps(examples);
    let warmup = (p.get_or("warmup_fraction", 0.1)? * total as f64).round() as usize;
    let schedule = LrSchedule::new(
        p.get_or("schedule", ScheduleShape::WarmupLinear)?,
        p.get_or("lr", 1e-3)?,
        warmup.min(total),
        total,
    )?;
    let adam = AdamConfig {
        weight_decay: p.get_or("weight_decay", 0.01)?,
        mode: p.get_or("decay", AdamConfig::default().mode)?,
        ..AdamConfig::default()
    };
    Ok((
        FineTuneConfig {
            train,
            schedule,
            oversample: None,
        },
        adam,
    ))
}

fn fit_transformer(
    tokenizer: Option<&Tokenizer>,
    pretrained: Option<&BertModel>,
    train: &Dataset,
    evaluate: &[&Dataset],
    p: &KeyValues,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let trained;
    let tokenizer = match tokenizer {
        Some(t) => t,
        None => {
            trained = Tokenizer::train(
                &train.texts,
                p.get_or("vocab_size", 2000)?,
                p.get_or("merge_scoring", MergeScoring::Frequency)?,
            )?;
            &trained
        }
    };
    let mut model = match pretrained {
        Some(m) => m.clone(),
        None => {
            let mut kv = ModelConfig::micro(tokenizer.vocab_size()).to_key_values();
            kv.merge(p);
            kv.set("vocab_size", tokenizer.vocab_size());
            kv.set("num_labels", 0);
            BertModel::new(ModelConfig::from_key_values(&kv)?, seed)?
        }
    };
    model.attach_classifier(train.num_classes(), seed ^ 0x5851_F42D_4C95_7F2D)?;
    let max_len = p.get_or("max_len", model.config().max_positions.min(128))?;
    let trunc = truncation(p, max_len)?;
    let encode = |d: &Dataset| -> Result<Vec<_>> {
        d.texts
            .iter()
            .map(|t| tokenizer.encode(t, None, max_len, trunc))
            .collect()
    };
    let inputs = encode(train)?;
    let (cfg, adam) = fine_tune_config(p, inputs.len(), seed)?;
    let mut opt = Optimizer::adam(model.store(), adam);
    fine_tune(&mut model, &inputs, &train.labels, &cfg, &mut opt)?;
    let chunk = p.get_or("eval_batch", 32)?;
    evaluate
        .iter()
        .map(|d| model.predict(&encode(d)?, chunk))
        .collect()
}
