use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, PalModel, Params, PROB_FLOOR};
use crate::corpus::{Corpus, MIN_SEQUENCE_LEN};
use crate::encoder::{Slot, TextVectors};
use crate::error::{PalError, Result};
use crate::par::Exec;

/// Sequences per gradient work unit. Fixed so the reduction order, and
/// therefore every bit of the result, is independent of the thread count.
pub(crate) const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSequence {
    pub slots: Vec<Slot>,
    /// 0-based indices of the masked items, ascending.
    pub positions: Vec<usize>,
    pub targets: Vec<usize>,
}

impl MaskedSequence {
    /// Composed-input rows of the masked slots (row 0 is `[CLS]`).
    pub fn rows(&self) -> Vec<usize> {
        self.positions.iter().map(|p| p + 1).collect()
    }
}

/// `max(1, round(ρ·n))`.
pub fn mask_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n.max(1))
}

pub fn mask_sequence<R: Rng>(items: &[usize], ratio: f64, rng: &mut R) -> Result<MaskedSequence> {
    let n = items.len();
    if n < 2 {
        return Err(PalError::Invalid(format!("need at least 2 items to mask, got {n}")));
    }
    let k = mask_count(n, ratio);
    let mut positions = index::sample(rng, n, k).into_vec();
    positions.sort_unstable();
    let mut slots: Vec<Slot> = items.iter().map(|&v| Slot::Video(v)).collect();
    for &p in &positions {
        slots[p] = Slot::Mask;
    }
    Ok(MaskedSequence {
        slots,
        targets: positions.iter().map(|&p| items[p]).collect(),
        positions,
    })
}

/// Mean over sequences of the mean NLL over each sequence's masked slots.
/// `rows[i]` are the probability rows of sequence `i`, aligned with
/// `targets[i]`.
pub fn mlm_loss(rows: &[Vec<Vec<f64>>], targets: &[Vec<usize>]) -> Result<f64> {
    if rows.is_empty() || rows.len() != targets.len() {
        return Err(PalError::Shape(format!("{} row sets for {} target sets", rows.len(), targets.len())));
    }
    let mut total = 0.0;
    for (r, t) in rows.iter().zip(targets) {
        if r.len() != t.len() || r.is_empty() {
            return Err(PalError::Shape(format!("{} rows for {} targets", r.len(), t.len())));
        }
        let mut s = 0.0;
        for (p, &y) in r.iter().zip(t) {
            let py = p[y];
            if py < PROB_FLOOR {
                log::warn!("target probability {py:e} clamped to {PROB_FLOOR:e}");
            }
            s -= py.max(PROB_FLOOR).ln();
        }
        total += s / t.len() as f64;
    }
    Ok(total / rows.len() as f64)
}

/// Pre-training inputs: each sequence with its last two items (validation
/// and test targets) held out, truncated to the last `max_len` items.
pub fn train_sequences(corpus: &Corpus, max_len: usize) -> Vec<Vec<usize>> {
    corpus
        .sequences
        .iter()
        .filter(|s| s.len() >= MIN_SEQUENCE_LEN)
        .map(|s| {
            let prefix = &s.items[..s.len() - 2];
            prefix[prefix.len().saturating_sub(max_len)..].to_vec()
        })
        .collect()
}

/// Adam with bias correction and constant learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(params: &Params, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let ps = params.tensors_mut();
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            let (p, g, m, v) = (p.1.data_mut(), g.1.data(), m.1.data_mut(), v.1.data_mut());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Masked loss over all training sequences under one fixed mask draw,
    /// at initialisation and after each epoch.
    pub loss_trace: Vec<f64>,
    /// Mean minibatch loss of each epoch.
    pub train_loss: Vec<f64>,
    pub steps: usize,
    pub sequences: usize,
}

/// Pre-trains a fresh model on the held-out-free prefixes of `corpus`.
/// Results are bit-identical for a given seed whatever `exec` is.
pub fn pretrain(
    corpus: &Corpus,
    cfg: &ModelConfig,
    overrides: Option<&TextVectors>,
    exec: Exec,
) -> Result<(PalModel, TrainReport)> {
    let mut model = PalModel::init(corpus, cfg, overrides)?;
    let seqs = train_sequences(corpus, cfg.max_len);
    if seqs.is_empty() {
        return Err(PalError::Invalid("corpus has no trainable sequences".into()));
    }
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0e7a1);
    let eval_set = seqs
        .iter()
        .map(|s| mask_sequence(s, cfg.mask_ratio, &mut eval_rng))
        .collect::<Result<Vec<_>>>()?;
    let eval = |model: &PalModel| -> Result<f64> { Ok(model.batch_loss(&model.params, &eval_set, false, exec)?.0) };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a41_11e5);
    let mut adam = Adam::new(&model.params, cfg.lr);
    let mut report = TrainReport {
        loss_trace: vec![eval(&model)?],
        train_loss: Vec::new(),
        steps: 0,
        sequences: seqs.len(),
    };
    log::info!("initial masked loss {:.4} over {} sequences", report.loss_trace[0], seqs.len());
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch = idx
                .iter()
                .map(|&i| mask_sequence(&seqs[i], cfg.mask_ratio, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = model
                .batch_loss(&model.params, &batch, true, exec)
                .map_err(|e| PalError::NonFinite(format!("epoch {epoch}, step {}: {e}", report.steps)))?;
            let mut params = model.params.clone();
            adam.step(&mut params, &grads.expect("gradient requested"));
            model.set_params(params)?;
            epoch_loss += loss;
            batches += 1;
            report.steps += 1;
        }
        report.train_loss.push(epoch_loss / batches as f64);
        let l = eval(&model)?;
        if !l.is_finite() {
            return Err(PalError::NonFinite(format!("evaluation loss after epoch {epoch}")));
        }
        report.loss_trace.push(l);
        log::info!("epoch {:>3}: train {:.4}, masked {:.4}", epoch + 1, report.train_loss[epoch], l);
    }
    Ok((model, report))
}
