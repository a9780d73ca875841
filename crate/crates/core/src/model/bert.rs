use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, PositionEncoding};
use super::masking::{MaskedBatch, IGNORE};
use crate::attention::mask_for_positions;
use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tokenizer::EncodedSequence;
use crate::transformer::{
    encoder_stack, sinusoidal_positions, EncoderConfig, EncoderLayerParams, LayerNormParams,
};

pub const CLASSIFIER_WEIGHT: &str = "classifier.weight";

/// Parameter handles of a [`BertModel`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BertParams {
    pub token: ParamId,
    pub position: Option<ParamId>,
    pub segment: ParamId,
    pub embedding_norm: LayerNormParams,
    pub layers: Vec<EncoderLayerParams>,
    pub mlm_weight: ParamId,
    pub mlm_bias: ParamId,
    pub nsp_weight: ParamId,
    pub nsp_bias: ParamId,
    pub classifier: Option<ParamId>,
}

/// Which rows the masked-token head is applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlmRows {
    /// Every position of every sequence (`B*T` rows).
    All,
    /// Only positions with a target.
    Selected,
}

/// Head outputs of one pretraining forward pass.
#[derive(Clone, Debug)]
pub struct PretrainLogits {
    /// `R x U` masked-token logits.
    pub mlm: Var,
    /// Target per row of `mlm`, [`IGNORE`] where there is none.
    pub mlm_targets: Vec<usize>,
    /// `B x 2` next-sentence logits.
    pub nsp: Var,
}

/// Encoder with token, position and segment embeddings plus the pretraining
/// and classification heads.
#[derive(Clone, Debug)]
pub struct BertModel {
    config: ModelConfig,
    encoder: EncoderConfig,
    store: ParamStore,
    params: BertParams,
    sinusoid: Option<Tensor>,
}

impl BertModel {
    /// Fresh model: Normal(0, `init_std`) weights, zero biases, unit layer-norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, u, std) = (config.hidden, config.vocab_size, config.init_std);
        let mut store = ParamStore::new();
        let token = store.add("embeddings.token", Tensor::randn(&[u, h], std, &mut rng))?;
        let position = match config.positions {
            PositionEncoding::Learned => Some(store.add(
                "embeddings.position",
                Tensor::randn(&[config.max_positions, h], std, &mut rng),
            )?),
            PositionEncoding::Sinusoidal => None,
        };
        let segment = store.add("embeddings.segment", Tensor::randn(&[2, h], std, &mut rng))?;
        let embedding_norm = LayerNormParams::init(&mut store, "embeddings.norm", h)?;
        let layers = (0..config.num_layers)
            .map(|l| {
                EncoderLayerParams::init(
                    &mut store,
                    &format!("encoder.layer{l}"),
                    h,
                    config.ffn_dim,
                    std,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mlm_weight = store.add("mlm.weight", Tensor::randn(&[h, u], std, &mut rng))?;
        let mlm_bias = store.add("mlm.bias", Tensor::zeros(&[u]))?;
        let nsp_weight = store.add("nsp.weight", Tensor::randn(&[h, 2], std, &mut rng))?;
        let nsp_bias = store.add("nsp.bias", Tensor::zeros(&[2]))?;
        let classifier = match config.num_labels {
            0 => None,
            c => Some(store.add(CLASSIFIER_WEIGHT, Tensor::randn(&[h, c], std, &mut rng))?),
        };
        let sinusoid = match config.positions {
            PositionEncoding::Sinusoidal => Some(sinusoidal_positions(config.max_positions, h)?),
            PositionEncoding::Learned => None,
        };
        Ok(BertModel {
            encoder: config.encoder_config()?,
            config,
            store,
            params: BertParams {
                token,
                position,
                segment,
                embedding_norm,
                layers,
                mlm_weight,
                mlm_bias,
                nsp_weight,
                nsp_bias,
                classifier,
            },
            sinusoid,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn params(&self) -> &BertParams {
        &self.params
    }

    pub fn num_weights(&self) -> usize {
        self.store.num_weights()
    }

    /// Installs a freshly initialized `H x C` classifier, replacing any existing one.
    pub fn attach_classifier(&mut self, num_labels: usize, seed: u64) -> Result<ParamId> {
        if num_labels < 2 {
            return Err(Error::Parameter(format!(
                "a classifier needs at least 2 categories, got {num_labels}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::randn(&[self.config.hidden, num_labels], self.config.init_std, &mut rng);
        let id = match self.params.classifier {
            Some(id) => {
                self.store.replace(id, w);
                id
            }
            None => self.store.add(CLASSIFIER_WEIGHT, w)?,
        };
        self.params.classifier = Some(id);
        self.config.num_labels = num_labels;
        Ok(id)
    }

    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout {p} outside [0, 1)")));
        }
        self.config.dropout = p;
        self.encoder.dropout = p;
        Ok(())
    }

    /// Marks every non-head parameter as (not) trainable.
    pub fn set_encoder_trainable(&mut self, trainable: bool) {
        let heads = [
            Some(self.params.mlm_weight),
            Some(self.params.mlm_bias),
            Some(self.params.nsp_weight),
            Some(self.params.nsp_bias),
            self.params.classifier,
        ];
        let ids: Vec<ParamId> = self.store.ids().filter(|id| !heads.contains(&Some(*id))).collect();
        for id in ids {
            self.store.get_mut(id).set_trainable(trainable);
        }
    }

    fn check_sequence(&self, seq: &EncodedSequence) -> Result<()> {
        let t = seq.len();
        if t == 0 {
            return Err(Error::Input("empty sequence".into()));
        }
        if t > self.config.max_positions {
            return Err(Error::Dimension(format!(
                "sequence of {t} exceeds {} positions",
                self.config.max_positions
            )));
        }
        if seq.segment_ids.len() != t || seq.position_ids.len() != t || seq.attention_mask.len() != t {
            return Err(Error::Dimension("sequence fields differ in length".into()));
        }
        Ok(())
    }

    /// `LayerNorm(token + position + segment)` followed by dropout, for the
    /// first `rows` positions.
    fn embed(&self, tape: &mut Tape, seq: &EncodedSequence, rows: usize, training: bool) -> Result<Var> {
        let ids = &seq.token_ids[..rows];
        let positions = &seq.position_ids[..rows];
        let segments: Vec<usize> = seq.segment_ids[..rows].iter().map(|&s| s as usize).collect();
        let tok_table = tape.param(&self.store, self.params.token);
        let mut x = tape.embedding(tok_table, ids)?;
        let pos = match (self.params.position, &self.sinusoid) {
            (Some(p), _) => {
                let table = tape.param(&self.store, p);
                tape.embedding(table, positions)?
            }
            (None, Some(sin)) => {
                let h = self.config.hidden;
                let mut data = Vec::with_capacity(rows * h);
                for &p in positions {
                    if p >= sin.shape()[0] {
                        return Err(Error::Index(format!("position {p} beyond the encoding table")));
                    }
                    data.extend_from_slice(sin.row(p));
                }
                tape.constant(Tensor::new(vec![rows, h], data)?)
            }
            (None, None) => unreachable!("a model always has a position encoding"),
        };
        x = tape.add(x, pos)?;
        let seg_table = tape.param(&self.store, self.params.segment);
        let seg = tape.embedding(seg_table, &segments)?;
        x = tape.add(x, seg)?;
        x = self.params.embedding_norm.apply(tape, &self.store, x)?;
        tape.dropout(x, self.config.dropout, training)
    }

    /// Final-layer states. With `trim` only the `true_length` real positions
    /// are computed; padding keys are never attended, so those rows match the
    /// untrimmed result exactly.
    pub fn hidden_states(
        &self,
        tape: &mut Tape,
        seq: &EncodedSequence,
        training: bool,
        trim: bool,
    ) -> Result<Var> {
        self.check_sequence(seq)?;
        let rows = if trim { seq.true_length.max(1) } else { seq.len() };
        let valid: Vec<bool> = seq.attention_mask[..rows].iter().map(|&m| m == 1).collect();
        let mask = mask_for_positions(&valid, false, &self.config.attention)?;
        let x = self.embed(tape, seq, rows, training)?;
        encoder_stack(
            tape,
            &self.store,
            x,
            &self.params.layers,
            &self.encoder,
            &mask,
            training,
        )
    }

    fn project(&self, tape: &mut Tape, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
        let wv = tape.param(&self.store, w);
        let out = tape.matmul(x, wv)?;
        match b {
            Some(b) => {
                let bv = tape.param(&self.store, b);
                tape.add_bias(out, bv)
            }
            None => Ok(out),
        }
    }

    /// `T x U` masked-token logits for every position of one sequence.
    pub fn mlm_logits(&self, tape: &mut Tape, seq: &EncodedSequence, training: bool) -> Result<Var> {
        let h = self.hidden_states(tape, seq, training, false)?;
        self.project(tape, h, self.params.mlm_weight, Some(self.params.mlm_bias))
    }

    /// Masked-token logits (from each position's final state) and next-sentence
    /// logits (from the `[CLS]` state).
    pub fn forward_pretrain(
        &self,
        tape: &mut Tape,
        batch: &MaskedBatch,
        training: bool,
        rows: MlmRows,
    ) -> Result<PretrainLogits> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        if batch.mlm_targets.len() != batch.len() {
            return Err(Error::Dimension("one target row per sequence required".into()));
        }
        let mut mlm_parts = Vec::with_capacity(batch.len());
        let mut cls_parts = Vec::with_capacity(batch.len());
        let mut targets = Vec::new();
        for (seq, tgt) in batch.inputs.iter().zip(&batch.mlm_targets) {
            if tgt.len() != seq.len() {
                return Err(Error::Dimension("targets and sequence differ in length".into()));
            }
            let h = self.hidden_states(tape, seq, training, rows == MlmRows::Selected)?;
            cls_parts.push(tape.gather_rows(h, &[0])?);
            match rows {
                MlmRows::All => {
                    mlm_parts.push(h);
                    targets.extend_from_slice(tgt);
                }
                MlmRows::Selected => {
                    let sel: Vec<usize> = (0..tgt.len()).filter(|&i| tgt[i] != IGNORE).collect();
                    if sel.is_empty() {
                        continue;
                    }
                    mlm_parts.push(tape.gather_rows(h, &sel)?);
                    targets.extend(sel.iter().map(|&i| tgt[i]));
                }
            }
        }
        if mlm_parts.is_empty() {
            return Err(Error::UndefinedLoss("no position selected for prediction".into()));
        }
        let states = tape.concat_rows(&mlm_parts)?;
        let mlm = self.project(tape, states, self.params.mlm_weight, Some(self.params.mlm_bias))?;
        let cls = tape.concat_rows(&cls_parts)?;
        let nsp = self.project(tape, cls, self.params.nsp_weight, Some(self.params.nsp_bias))?;
        Ok(PretrainLogits {
            mlm,
            mlm_targets: targets,
            nsp,
        })
    }

    /// `B x C` classifier logits `h*_1 W` for a batch.
    pub fn classifier_logits(
        &self,
        tape: &mut Tape,
        batch: &[EncodedSequence],
        training: bool,
    ) -> Result<Var> {
        let w = self
            .params
            .classifier
            .ok_or_else(|| Error::Parameter("model has no classification head".into()))?;
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let mut cls = Vec::with_capacity(batch.len());
        for seq in batch {
            let h = self.hidden_states(tape, seq, training, true)?;
            cls.push(tape.gather_rows(h, &[0])?);
        }
        let cls = tape.concat_rows(&cls)?;
        self.project(tape, cls, w, None)
    }

    /// Category probabilities for one sequence (evaluation mode).
    pub fn classify(&self, seq: &EncodedSequence) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let logits = self.classifier_logits(&mut tape, std::slice::from_ref(seq), false)?;
        Ok(tape.value(logits).softmax(1)?.into_data())
    }

    /// Most probable category per sequence, evaluated in chunks of `chunk`.
    pub fn predict(&self, batch: &[EncodedSequence], chunk: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(batch.len());
        for part in batch.chunks(chunk.max(1)) {
            let mut tape = Tape::new();
            let logits = self.classifier_logits(&mut tape, part, false)?;
            out.extend(tape.value(logits).argmax_rows());
        }
        Ok(out)
    }

    pub(crate) fn from_parts(config: ModelConfig, store: ParamStore) -> Result<Self> {
        let mut model = BertModel::new(config, 0)?;
        let fresh: Vec<(String, Vec<usize>)> = model
            .store
            .iter()
            .map(|(_, p)| (p.name().to_owned(), p.value().shape().to_vec()))
            .collect();
        if fresh.len() != store.len() {
            return Err(Error::Checkpoint {
                field: "parameters".into(),
                message: format!("expected {} tensors, found {}", fresh.len(), store.len()),
            });
        }
        for (id, (name, shape)) in model.store.ids().collect::<Vec<_>>().into_iter().zip(fresh) {
            let src = store.find(&name).ok_or_else(|| Error::Checkpoint {
                field: name.clone(),
                message: "missing".into(),
            })?;
            let value = store.get(src).value();
            if value.shape() != shape.as_slice() {
                return Err(Error::Checkpoint {
                    field: name,
                    message: format!("shape {:?}, model expects {:?}", value.shape(), shape),
                });
            }
            model.store.replace(id, value.clone());
        }
        Ok(model)
    }
}

/// Sum of the mean masked-token loss and the mean next-sentence loss.
pub fn pretrain_loss(tape: &mut Tape, logits: &PretrainLogits, nsp_labels: &[usize]) -> Result<Var> {
    let mlm = tape.cross_entropy(logits.mlm, &logits.mlm_targets, IGNORE)?;
    let nsp = tape.cross_entropy(logits.nsp, nsp_labels, IGNORE)?;
    tape.add(mlm, nsp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::masking::{mask_tokens, MaskingConfig, IS_NEXT, NOT_NEXT};
    use crate::tokenizer::Truncation;

    fn seq(content: &[usize], len: usize) -> EncodedSequence {
        EncodedSequence::from_segments(content, None, len, Truncation::Tail).unwrap()
    }

    fn micro() -> ModelConfig {
        ModelConfig {
            num_layers: 1,
            num_heads: 2,
            hidden: 8,
            ffn_dim: 16,
            vocab_size: 100,
            max_positions: 16,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn pretrain_shapes() {
        let model = BertModel::new(micro(), 1).unwrap();
        let batch = MaskedBatch {
            inputs: vec![seq(&[10, 11, 12], 16), seq(&[13; 9], 16)],
            mlm_targets: vec![vec![IGNORE; 16], vec![IGNORE; 16]],
            nsp_labels: vec![IS_NEXT, NOT_NEXT],
        };
        let mut tape = Tape::new();
        let out = model.forward_pretrain(&mut tape, &batch, false, MlmRows::All).unwrap();
        assert_eq!(tape.value(out.mlm).shape(), &[32, 100]);
        assert_eq!(tape.value(out.nsp).shape(), &[2, 2]);
        let one = model.mlm_logits(&mut tape, &batch.inputs[0], false).unwrap();
        assert_eq!(tape.value(one).shape(), &[16, 100]);
    }

    #[test]
    fn trimmed_states_match_padded_ones() {
        let model = BertModel::new(micro(), 2).unwrap();
        let s = seq(&[20, 21, 22, 23], 12);
        let mut tape = Tape::new();
        let full = model.hidden_states(&mut tape, &s, false, false).unwrap();
        let trimmed = model.hidden_states(&mut tape, &s, false, true).unwrap();
        let (f, t) = (tape.value(full), tape.value(trimmed));
        for r in 0..s.true_length {
            assert_eq!(f.row(r), t.row(r));
        }
    }

    #[test]
    fn no_selection_is_undefined() {
        let model = BertModel::new(micro(), 3).unwrap();
        let seqs = vec![seq(&[10, 11], 8)];
        let cfg = MaskingConfig {
            rate: 0.0,
            ..MaskingConfig::default()
        };
        let batch = mask_tokens(&seqs, &[IS_NEXT], 100, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut tape = Tape::new();
        assert!(matches!(
            model.forward_pretrain(&mut tape, &batch, true, MlmRows::Selected),
            Err(Error::UndefinedLoss(_))
        ));
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let mut model = BertModel::new(micro(), 4).unwrap();
        let id = model.attach_classifier(3, 0).unwrap();
        model.store_mut().get_mut(id).value_mut().fill(0.0);
        let p = model.classify(&seq(&[10, 50, 60], 10)).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn classifier_requires_a_head() {
        let model = BertModel::new(micro(), 5).unwrap();
        assert!(model.classify(&seq(&[10], 4)).is_err());
    }

    #[test]
    fn overlong_sequence_is_rejected() {
        let model = BertModel::new(micro(), 6).unwrap();
        let mut tape = Tape::new();
        assert!(matches!(
            model.hidden_states(&mut tape, &seq(&[10; 30], 32), false, false),
            Err(Error::Dimension(_))
        ));
    }
}
