use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{bce_loss, dropout_mask, forward_with_mask, lstm_backward, LstmWeights};
use super::{LstmModel, LstmParams, TemporalError};
use crate::features::LabeledSequence;
use crate::metrics::roc_auc;
use crate::par;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: LstmWeights,
    pub v: LstmWeights,
    pub step: u64,
}

impl AdamState {
    pub fn new(p: &LstmParams) -> Self {
        Self {
            m: LstmWeights::zeros(p),
            v: LstmWeights::zeros(p),
            step: 0,
        }
    }

    pub fn update(&mut self, w: &mut LstmWeights, grad: &LstmWeights, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powf(self.step as f64);
        let bc2 = 1.0 - ADAM_BETA2.powf(self.step as f64);
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((wt, gt), mt), vt) in w.tensors_mut().into_iter().zip(grad.tensors()).zip(ms).zip(vs) {
            for k in 0..wt.len() {
                let g = gt[k];
                mt[k] = ADAM_BETA1 * mt[k] + (1.0 - ADAM_BETA1) * g;
                vt[k] = ADAM_BETA2 * vt[k] + (1.0 - ADAM_BETA2) * g * g;
                let mhat = mt[k] / bc1;
                let vhat = vt[k] / bc2;
                wt[k] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training BCE over the epoch's mini-batches, dropout active.
    pub train_loss: f64,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmTraining {
    pub model: LstmModel,
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
    /// Mean inference-mode training BCE of the initial weights.
    pub initial_loss: f64,
}

fn mix(a: u64, b: u64, c: u64) -> u64 {
    // splitmix64 finaliser over a simple combination
    let mut z = a
        .wrapping_add(b.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(c.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_dataset(p: &LstmParams, seqs: &[LabeledSequence]) -> Result<(), TemporalError> {
    if seqs.is_empty() {
        return Err(TemporalError::EmptyDataset);
    }
    let pos = seqs.iter().filter(|s| s.target).count();
    if pos == 0 || pos == seqs.len() {
        return Err(TemporalError::SingleClass);
    }
    for s in seqs {
        if s.rows.len() != p.window || s.rows.iter().any(|r| r.len() != p.input_dim) {
            return Err(TemporalError::ShapeMismatch(format!(
                "sequence of {} rows does not match window {} x {} features",
                s.rows.len(),
                p.window,
                p.input_dim
            )));
        }
    }
    Ok(())
}

/// Inference-mode probabilities for many windows.
pub fn predict_batch(model: &LstmModel, seqs: &[LabeledSequence]) -> Result<Vec<f64>, TemporalError> {
    par::map_slice(seqs, |s| model.predict(&s.rows)).into_iter().collect()
}

/// Mini-batch BPTT with Adam. Per-sample gradients are computed
/// independently (dropout seeded by seed, epoch and sample index) and summed
/// in batch order, so results do not depend on the thread count. When
/// `validation` holds both classes the snapshot with the highest validation
/// AUC is returned (earliest on ties); otherwise the final weights are.
pub fn train_lstm(
    train: &[LabeledSequence],
    validation: Option<&[LabeledSequence]>,
    params: &LstmParams,
) -> Result<LstmTraining, TemporalError> {
    params.validate()?;
    check_dataset(params, train)?;
    let validation = match validation {
        Some(v) if !v.is_empty() => {
            let pos = v.iter().filter(|s| s.target).count();
            (pos > 0 && pos < v.len()).then_some(v)
        }
        _ => None,
    };
    let mut model = LstmModel::new(*params, LstmWeights::init(params, params.seed));
    let initial_loss = {
        let probs = predict_batch(&model, train)?;
        probs.iter().zip(train).map(|(&p, s)| bce_loss(p, s.target)).sum::<f64>() / train.len() as f64
    };
    let mut adam = AdamState::new(params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(params.max_epochs);
    let mut best: Option<(f64, usize, LstmWeights)> = None;

    for epoch in 0..params.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(params.seed, epoch as u64, u64::MAX));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(params.batch_size) {
            let per_sample = par::map_slice(batch, |&idx| {
                let s = &train[idx];
                let mask = dropout_mask(params.hidden, params.dropout_rate, mix(params.seed, epoch as u64, idx as u64));
                let cache = forward_with_mask(params, &model.weights, &s.rows, Some(&mask))
                    .expect("dataset shapes checked");
                (bce_loss(cache.p, s.target), lstm_backward(params, &model.weights, &cache, s.target))
            });
            let mut iter = per_sample.into_iter();
            let (l0, mut grad) = iter.next().expect("non-empty batch");
            loss_sum += l0;
            for (l, g) in iter {
                loss_sum += l;
                grad.add_assign(&g);
            }
            grad.scale(1.0 / batch.len() as f64);
            adam.update(&mut model.weights, &grad, params.learning_rate);
        }
        if !model.weights.all_finite() {
            return Err(TemporalError::NonFiniteInput);
        }
        let val_auc = match validation {
            Some(v) => {
                let probs = predict_batch(&model, v)?;
                let labels: Vec<bool> = v.iter().map(|s| s.target).collect();
                roc_auc(&probs, &labels).ok()
            }
            None => None,
        };
        if let Some(auc) = val_auc {
            if best.as_ref().is_none_or(|(b, _, _)| auc > *b) {
                best = Some((auc, epoch, model.weights.clone()));
            }
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_auc,
        });
    }
    let best_epoch = match best {
        Some((_, e, w)) => {
            model.weights = w;
            e
        }
        None => params.max_epochs.saturating_sub(1),
    };
    Ok(LstmTraining {
        model,
        history,
        best_epoch,
        initial_loss,
    })
}
