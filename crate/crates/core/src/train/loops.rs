use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::optim::{clip_grad_norm, Optimizer};
use super::oversample::random_oversample;
use super::schedule::LrSchedule;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{
    encode_pairs, make_nsp_pairs, mask_tokens, pretrain_loss, BertModel, MaskedBatch,
    MaskingConfig, MlmRows,
};
use crate::tokenizer::{EncodedSequence, Tokenizer};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip: Option<f64>,
    /// Overrides the model's dropout for the run when set.
    pub dropout: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 3,
            seed: 0,
            clip: Some(1.0),
            dropout: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Parameter("batch size and epochs must be at least 1".into()));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::Parameter(format!("clip threshold {c} must be positive")));
            }
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, examples: usize) -> usize {
        examples.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, examples: usize) -> usize {
        self.epochs * self.steps_per_epoch(examples)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Per-step learning rate and loss.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    pub fn first(&self) -> Option<f64> {
        self.rows.first().map(|r| r.loss)
    }

    pub fn last(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }

    /// CSV with header `step,lr,loss`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn tape_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Backward pass, optional clipping and one optimizer update.
fn apply_update(
    model: &mut BertModel,
    tape: &Tape,
    loss: Var,
    clip: Option<f64>,
    optimizer: &mut Optimizer,
    lr: f64,
    step: usize,
) -> Result<f64> {
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::TrainingAborted {
            step,
            reason: format!("loss is {value}"),
        });
    }
    model.store_mut().zero_grad();
    tape.backward(loss, model.store_mut())
        .map_err(|e| Error::TrainingAborted {
            step,
            reason: e.to_string(),
        })?;
    if let Some(c) = clip {
        clip_grad_norm(model.store_mut(), c);
    }
    optimizer.step(model.store_mut(), lr)?;
    Ok(value)
}

/// Encoded segment pairs with next-sentence labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainData {
    pub sequences: Vec<EncodedSequence>,
    pub nsp_labels: Vec<usize>,
}

impl PretrainData {
    /// Pairs consecutive segments of each document (see [`make_nsp_pairs`]).
    pub fn from_documents<S: AsRef<str>>(
        documents: &[Vec<S>],
        tokenizer: &Tokenizer,
        max_len: usize,
        negative_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let docs: Vec<Vec<Vec<usize>>> = documents
            .iter()
            .map(|d| d.iter().map(|s| tokenizer.tokenize(s.as_ref())).collect())
            .collect();
        Self::from_token_documents(&docs, max_len, negative_fraction, seed)
    }

    pub fn from_token_documents(
        documents: &[Vec<Vec<usize>>],
        max_len: usize,
        negative_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = make_nsp_pairs(documents, negative_fraction, &mut rng)?;
        let (sequences, nsp_labels) = encode_pairs(&pairs, max_len)?;
        Ok(PretrainData {
            sequences,
            nsp_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub train: TrainConfig,
    pub masking: MaskingConfig,
    /// Redraw masks every epoch instead of once.
    pub dynamic_masking: bool,
    pub schedule: LrSchedule,
}

fn select(batch: &MaskedBatch, idx: &[usize]) -> MaskedBatch {
    MaskedBatch {
        inputs: idx.iter().map(|&i| batch.inputs[i].clone()).collect(),
        mlm_targets: idx.iter().map(|&i| batch.mlm_targets[i].clone()).collect(),
        nsp_labels: idx.iter().map(|&i| batch.nsp_labels[i]).collect(),
    }
}

/// Masked-token plus next-sentence pretraining. Batches whose masking
/// selected nothing are skipped.
pub fn pretrain(
    model: &mut BertModel,
    data: &PretrainData,
    config: &PretrainConfig,
    optimizer: &mut Optimizer,
) -> Result<LossTrace> {
    config.train.validate()?;
    config.schedule.validate()?;
    if data.is_empty() {
        return Err(Error::Input("no pretraining sequences".into()));
    }
    if let Some(p) = config.train.dropout {
        model.set_dropout(p)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    let vocab_size = model.config().vocab_size;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut masked: Option<MaskedBatch> = None;
    let mut trace = LossTrace::default();
    let mut step = 0;
    for epoch in 0..config.train.epochs {
        if masked.is_none() || config.dynamic_masking {
            masked = Some(mask_tokens(
                &data.sequences,
                &data.nsp_labels,
                vocab_size,
                &config.masking,
                &mut rng,
            )?);
        }
        let all = masked.as_ref().expect("masks drawn above");
        order.shuffle(&mut rng);
        for idx in order.chunks(config.train.batch_size) {
            let batch = select(all, idx);
            if batch.num_selected() == 0 {
                log::debug!("epoch {epoch}: skipping a batch with no masked positions");
                continue;
            }
            let lr = config.schedule.lr_at(step)?;
            let mut tape = Tape::with_seed(tape_seed(config.train.seed, step));
            let logits = model.forward_pretrain(&mut tape, &batch, true, MlmRows::Selected)?;
            let loss = pretrain_loss(&mut tape, &logits, &batch.nsp_labels)?;
            let value = apply_update(model, &tape, loss, config.train.clip, optimizer, lr, step)?;
            trace.rows.push(TraceRow { step, lr, loss: value });
            step += 1;
        }
        log::info!(
            "pretrain epoch {epoch}: last loss {:.4}",
            trace.last().unwrap_or(f64::NAN)
        );
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FineTuneConfig {
    pub train: TrainConfig,
    pub schedule: LrSchedule,
    /// Random oversampling ratio applied to the training set, if any.
    pub oversample: Option<f64>,
}

/// Trains every parameter, head included, on classification cross-entropy.
pub fn fine_tune(
    model: &mut BertModel,
    inputs: &[EncodedSequence],
    labels: &[usize],
    config: &FineTuneConfig,
    optimizer: &mut Optimizer,
) -> Result<LossTrace> {
    config.train.validate()?;
    config.schedule.validate()?;
    let classes = model.config().num_labels;
    if classes == 0 {
        return Err(Error::Parameter("model has no classification head".into()));
    }
    if inputs.len() != labels.len() || inputs.is_empty() {
        return Err(Error::Input(format!(
            "{} sequences with {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} outside [0, {classes})")));
    }
    if let Some(p) = config.train.dropout {
        model.set_dropout(p)?;
    }
    model.set_encoder_trainable(true);
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    let mut order: Vec<usize> = match config.oversample {
        Some(ratio) => random_oversample(labels, ratio, &mut rng)?,
        None => (0..inputs.len()).collect(),
    };
    let mut trace = LossTrace::default();
    let mut step = 0;
    for epoch in 0..config.train.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(config.train.batch_size) {
            let batch: Vec<EncodedSequence> = idx.iter().map(|&i| inputs[i].clone()).collect();
            let targets: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let lr = config.schedule.lr_at(step)?;
            let mut tape = Tape::with_seed(tape_seed(config.train.seed, step));
            let logits = model.classifier_logits(&mut tape, &batch, true)?;
            let loss = tape.cross_entropy(logits, &targets, usize::MAX)?;
            let value = apply_update(model, &tape, loss, config.train.clip, optimizer, lr, step)?;
            trace.rows.push(TraceRow { step, lr, loss: value });
            step += 1;
        }
        log::info!(
            "fine-tune epoch {epoch}: last loss {:.4}",
            trace.last().unwrap_or(f64::NAN)
        );
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tokenizer::Truncation;
    use crate::train::{AdamConfig, ScheduleShape};

    fn micro_model(labels: usize) -> BertModel {
        let cfg = ModelConfig {
            num_layers: 1,
            num_heads: 2,
            hidden: 8,
            ffn_dim: 16,
            vocab_size: 30,
            max_positions: 12,
            dropout: 0.0,
            num_labels: labels,
            ..ModelConfig::default()
        };
        BertModel::new(cfg, 7).unwrap()
    }

    fn docs() -> Vec<Vec<Vec<usize>>> {
        (0..4)
            .map(|d| (0..3).map(|s| vec![5 + d * 3 + s, 6 + d, 20 + s]).collect())
            .collect()
    }

    fn pretrain_twice() -> (LossTrace, LossTrace) {
        let data = PretrainData::from_token_documents(&docs(), 12, 0.5, 1).unwrap();
        let run = || {
            let mut m = micro_model(0);
            let mut opt = Optimizer::adam(m.store(), AdamConfig::default());
            let cfg = PretrainConfig {
                train: TrainConfig {
                    batch_size: 4,
                    epochs: 1,
                    seed: 3,
                    ..TrainConfig::default()
                },
                masking: MaskingConfig {
                    rate: 0.5,
                    ..MaskingConfig::default()
                },
                dynamic_masking: true,
                schedule: LrSchedule::constant(1e-3, 100),
            };
            pretrain(&mut m, &data, &cfg, &mut opt).unwrap()
        };
        (run(), run())
    }

    #[test]
    fn pretraining_is_deterministic() {
        let (a, b) = pretrain_twice();
        assert!(!a.rows.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn fine_tune_rejects_bad_labels() {
        let mut m = micro_model(2);
        let s = EncodedSequence::from_segments(&[7], None, 6, Truncation::Tail).unwrap();
        let mut opt = Optimizer::Sgd;
        let cfg = FineTuneConfig {
            train: TrainConfig::default(),
            schedule: LrSchedule::constant(0.1, 10),
            oversample: None,
        };
        assert!(matches!(
            fine_tune(&mut m, &[s], &[2], &cfg, &mut opt),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn zero_rate_leaves_the_model_unchanged() {
        let mut m = micro_model(2);
        let before = checkpoint(&m);
        let seqs: Vec<EncodedSequence> = (0..4)
            .map(|i| EncodedSequence::from_segments(&[6 + i], None, 6, Truncation::Tail).unwrap())
            .collect();
        let mut opt = Optimizer::adam(m.store(), AdamConfig::default());
        let cfg = FineTuneConfig {
            train: TrainConfig {
                batch_size: 2,
                epochs: 2,
                ..TrainConfig::default()
            },
            schedule: LrSchedule::new(ScheduleShape::LinearDecay, 0.0, 0, 4).unwrap(),
            oversample: None,
        };
        fine_tune(&mut m, &seqs, &[0, 1, 0, 1], &cfg, &mut opt).unwrap();
        assert_eq!(checkpoint(&m), before);
    }

    fn checkpoint(m: &BertModel) -> Vec<u8> {
        crate::model::checkpoint_bytes(m)
    }

    #[test]
    fn trace_csv_has_a_header() {
        let trace = LossTrace {
            rows: vec![TraceRow {
                step: 0,
                lr: 0.5,
                loss: 1.25,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        trace.write_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "step,lr,loss\n0,0.5,1.25\n");
    }
}
