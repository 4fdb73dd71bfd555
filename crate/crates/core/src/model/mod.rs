//! The pre-training model: embedding fusion, a stack of transformer blocks
//! and a tied output head producing a distribution over videos.
//!
//! For a hidden row `h` the head computes
//! `P = softmax(GELU(h·W + b1)·E_vᵀ + b2)`, where `E_v` is the projected
//! token table shared with the input side.

mod checkpoint;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::encoder::{
    compose_slots, raw_vectors, video_courses, EmbeddingTables, Slot, TextVectors, TokenMode, CLS, MASK,
    DEFAULT_TEXT_DIM,
};
use crate::error::{PalError, Result};
use crate::nn::{
    block_backward, block_forward, gelu_grad, gelu_scalar, matmul, matmul_tn_acc, softmax_rows, BlockCache,
    BlockParams, Tensor,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use train::{
    mask_sequence, mask_count, mlm_loss, pretrain, train_sequences, Adam, MaskedSequence, TrainReport,
};

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d: usize,
    /// Longest behavior window `N`.
    pub max_len: usize,
    pub mask_ratio: f64,
    pub token_mode: TokenMode,
    pub use_meta: bool,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Raw text/concept vector width `d_t`.
    pub text_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            heads: 4,
            d: 64,
            max_len: 50,
            mask_ratio: 0.15,
            token_mode: TokenMode::Text,
            use_meta: true,
            lr: 1e-3,
            epochs: 20,
            batch_size: 16,
            seed: 7,
            text_dim: DEFAULT_TEXT_DIM,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PalError::Config(m));
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad(format!("mask_ratio must lie in (0,1), got {}", self.mask_ratio));
        }
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("heads ({}) must divide d ({})", self.heads, self.d));
        }
        if self.max_len < 2 {
            return bad(format!("max_len must be at least 2, got {}", self.max_len));
        }
        if self.batch_size == 0 || self.text_dim == 0 {
            return bad("batch_size and text_dim must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub w: Tensor,
    pub b1: Tensor,
    pub b2: Tensor,
}

/// Every trainable tensor of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub tables: EmbeddingTables,
    pub blocks: Vec<BlockParams>,
    pub head: HeadParams,
}

impl Params {
    pub fn zeros_like(&self) -> Self {
        Params {
            tables: self.tables.zeros_like(),
            blocks: self.blocks.iter().map(BlockParams::zeros_like).collect(),
            head: HeadParams {
                w: Tensor::zeros_like(&self.head.w),
                b1: Tensor::zeros_like(&self.head.b1),
                b2: Tensor::zeros_like(&self.head.b2),
            },
        }
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> =
            self.tables.tensors().into_iter().map(|(n, t)| (format!("tables.{n}"), t)).collect();
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.tensors().into_iter().map(|(n, t)| (format!("block{i}.{n}"), t)));
        }
        out.push(("head.w".into(), &self.head.w));
        out.push(("head.b1".into(), &self.head.b1));
        out.push(("head.b2".into(), &self.head.b2));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = self
            .tables
            .tensors_mut()
            .into_iter()
            .map(|(n, t)| (format!("tables.{n}"), t))
            .collect();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(b.tensors_mut().into_iter().map(|(n, t)| (format!("block{i}.{n}"), t)));
        }
        out.push(("head.w".into(), &mut self.head.w));
        out.push(("head.b1".into(), &mut self.head.b1));
        out.push(("head.b2".into(), &mut self.head.b2));
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    pub fn unflatten(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(PalError::Shape(format!("{} values for {} parameters", values.len(), self.len())));
        }
        let mut at = 0;
        for (_, t) in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Params) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }
}

/// Parameter gradients plus the gradient of the projected token table,
/// which is folded into the projection by [`Grads::finish`].
#[derive(Debug, Clone)]
pub struct Grads {
    pub params: Params,
    pub token: Tensor,
}

impl Grads {
    fn zeros(p: &Params, token: &Tensor) -> Self {
        Grads {
            params: p.zeros_like(),
            token: Tensor::zeros_like(token),
        }
    }

    fn add_assign(&mut self, other: &Grads) {
        self.params.add_assign(&other.params);
        self.token.add_assign(&other.token);
    }

    /// Chains the token-table gradient through `E_v = raw·W_p + b_p`.
    fn finish(mut self, raw: &Tensor) -> Params {
        matmul_tn_acc(raw, &self.token, &mut self.params.tables.proj_w);
        for i in 0..self.token.rows() {
            for (g, &x) in self.params.tables.proj_b.data_mut().iter_mut().zip(self.token.row(i)) {
                *g += x;
            }
        }
        self.params
    }
}

#[derive(Debug, Clone)]
pub struct PalModel {
    pub config: ModelConfig,
    /// Frozen raw vectors, `|V|×d_t`.
    pub raw: Tensor,
    pub video_course: Vec<usize>,
    pub params: Params,
    token: Tensor,
}

struct Trace {
    input: Vec<Slot>,
    caches: Vec<BlockCache>,
    hidden: Tensor,
}

impl PalModel {
    /// Fresh seeded model for `corpus`.
    pub fn init(corpus: &Corpus, config: &ModelConfig, overrides: Option<&TextVectors>) -> Result<Self> {
        config.validate()?;
        if corpus.videos.is_empty() {
            return Err(PalError::Invalid("corpus has no videos".into()));
        }
        let raw = raw_vectors(corpus, config.token_mode, config.text_dim, overrides)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d;
        let tables = EmbeddingTables::init(config.text_dim, d, corpus.courses.len().max(1), config.max_len, &mut rng);
        let blocks = (0..config.layers)
            .map(|_| BlockParams::init(d, config.heads, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head = HeadParams {
            w: Tensor::uniform(&[d, d], (3.0 / d as f64).sqrt(), &mut rng),
            b1: Tensor::zeros(&[d]),
            b2: Tensor::zeros(&[corpus.videos.len()]),
        };
        Self::from_parts(config.clone(), raw, video_courses(corpus), Params { tables, blocks, head })
    }

    pub fn from_parts(config: ModelConfig, raw: Tensor, video_course: Vec<usize>, params: Params) -> Result<Self> {
        if raw.rows() != video_course.len() || params.head.b2.len() != raw.rows() {
            return Err(PalError::Shape(format!(
                "raw vectors for {} videos, course map for {}, output bias for {}",
                raw.rows(),
                video_course.len(),
                params.head.b2.len()
            )));
        }
        let token = params.tables.token_table(&raw)?;
        Ok(PalModel {
            config,
            raw,
            video_course,
            params,
            token,
        })
    }

    pub fn n_videos(&self) -> usize {
        self.raw.rows()
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    /// Projected token table `E_v`.
    pub fn token_table(&self) -> &Tensor {
        &self.token
    }

    /// Replaces the parameters and refreshes the cached token table.
    pub fn set_params(&mut self, params: Params) -> Result<()> {
        self.token = params.tables.token_table(&self.raw)?;
        self.params = params;
        Ok(())
    }

    /// Projects an arbitrary raw-space vector into the model width.
    pub fn project(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let t = &self.params.tables;
        if raw.len() != t.proj_w.rows() {
            return Err(PalError::Shape(format!("raw vector of width {}, expected {}", raw.len(), t.proj_w.rows())));
        }
        let x = Tensor::from_vec(&[1, raw.len()], raw.to_vec())?;
        let mut y = matmul(&x, &t.proj_w)?.into_data();
        y.iter_mut().zip(t.proj_b.data()).for_each(|(a, b)| *a += b);
        Ok(y)
    }

    fn check_items(&self, items: &[usize]) -> Result<()> {
        match items.iter().find(|&&v| v >= self.n_videos()) {
            Some(v) => Err(PalError::DanglingId {
                kind: "video",
                id: v.to_string(),
            }),
            None => Ok(()),
        }
    }

    /// Runs the block stack over the live rows of `slots` (last `N` kept).
    fn run(&self, params: &Params, token: &Tensor, slots: &[Slot]) -> Result<Trace> {
        let composed = compose_slots(slots, &self.video_course, &params.tables, token, self.config.use_meta);
        let live = composed.live_rows();
        let mask = vec![true; live];
        let mut h = composed.matrix.top_rows(live);
        let mut caches = Vec::with_capacity(params.blocks.len());
        for b in &params.blocks {
            let (next, cache) = block_forward(&h, b, &mask)?;
            caches.push(cache);
            h = next;
        }
        Ok(Trace {
            input: composed.slots,
            caches,
            hidden: h,
        })
    }

    fn head_logits(params: &Params, token: &Tensor, h: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let d = h.len();
        let x = Tensor::from_vec(&[1, d], h.to_vec())?;
        let mut z = matmul(&x, &params.head.w)?.into_data();
        z.iter_mut().zip(params.head.b1.data()).for_each(|(a, b)| *a += b);
        let a: Vec<f64> = z.iter().map(|&v| gelu_scalar(v)).collect();
        let mut logits = params.head.b2.data().to_vec();
        for (v, l) in logits.iter_mut().enumerate() {
            *l += token.row(v).iter().zip(&a).map(|(p, q)| p * q).sum::<f64>();
        }
        Ok((z, a, logits))
    }

    fn probs_at(params: &Params, token: &Tensor, trace: &Trace, rows: &[usize]) -> Result<Vec<Vec<f64>>> {
        let live = trace.hidden.rows();
        let mut out = Vec::with_capacity(rows.len());
        for &r in rows {
            if r == 0 || r >= live {
                return Err(PalError::Invalid(format!("masked row {r} outside 1..{live}")));
            }
            let (_, _, logits) = Self::head_logits(params, token, trace.hidden.row(r))?;
            let p = softmax_rows(&Tensor::from_vec(&[1, logits.len()], logits)?, None)?;
            out.push(p.into_data());
        }
        Ok(out)
    }

    /// Probability rows over videos at the given composed rows (row `t`
    /// holds slot `t−1` of the last `N` slots).
    pub fn forward_probs(&self, slots: &[Slot], rows: &[usize]) -> Result<Vec<Vec<f64>>> {
        let trace = self.run(&self.params, &self.token, slots)?;
        Self::probs_at(&self.params, &self.token, &trace, rows)
    }

    /// Final hidden states of every live row.
    pub fn hidden_states(&self, items: &[usize]) -> Result<Tensor> {
        self.check_items(items)?;
        let slots: Vec<Slot> = items.iter().map(|&v| Slot::Video(v)).collect();
        Ok(self.run(&self.params, &self.token, &slots)?.hidden)
    }

    /// `[CLS]` representation of an item list (last `N` items).
    pub fn encode_cls(&self, items: &[usize]) -> Result<Vec<f64>> {
        if items.is_empty() {
            return Err(PalError::Invalid("cannot encode an empty item list".into()));
        }
        Ok(self.hidden_states(items)?.row(0).to_vec())
    }

    /// Distribution at a `[MASK]` appended after the last `N−1` history
    /// items.
    pub fn next_item_scores(&self, history: &[usize]) -> Result<Vec<f64>> {
        if history.is_empty() {
            return Err(PalError::Invalid("history is empty".into()));
        }
        self.check_items(history)?;
        let keep = &history[history.len().saturating_sub(self.config.max_len - 1)..];
        let mut slots: Vec<Slot> = keep.iter().map(|&v| Slot::Video(v)).collect();
        slots.push(Slot::Mask);
        let row = slots.len();
        Ok(self.forward_probs(&slots, &[row])?.remove(0))
    }

    /// Mean NLL of `targets` at masked `rows`; when `grads` is given the
    /// gradient of `scale × loss` is accumulated.
    fn seq_loss(
        &self,
        params: &Params,
        token: &Tensor,
        slots: &[Slot],
        rows: &[usize],
        targets: &[usize],
        scale: f64,
        grads: Option<&mut Grads>,
    ) -> Result<f64> {
        let trace = self.run(params, token, slots)?;
        let live = trace.hidden.rows();
        let d = self.config.d;
        let k = rows.len() as f64;
        let mut loss = 0.0;
        let mut dh = grads.as_ref().map(|_| Tensor::zeros(&[live, d]));
        let mut grads = grads;
        for (&r, &target) in rows.iter().zip(targets) {
            if r == 0 || r >= live {
                return Err(PalError::Invalid(format!("masked row {r} outside 1..{live}")));
            }
            let h = trace.hidden.row(r);
            let (z, a, logits) = Self::head_logits(params, token, h)?;
            let p = softmax_rows(&Tensor::from_vec(&[1, logits.len()], logits)?, None)?.into_data();
            let pt = p[target];
            if pt < PROB_FLOOR {
                log::debug!("target probability {pt:e} clamped");
            }
            loss -= pt.max(PROB_FLOOR).ln();
            if let (Some(g), Some(dh)) = (grads.as_deref_mut(), dh.as_mut()) {
                let s = scale / k;
                let mut dlogit = p;
                dlogit[target] -= 1.0;
                dlogit.iter_mut().for_each(|x| *x *= s);
                let mut da = vec![0.0; d];
                for (v, &gl) in dlogit.iter().enumerate() {
                    g.params.head.b2.data_mut()[v] += gl;
                    let trow = token.row(v);
                    let grow = g.token.row_mut(v);
                    for j in 0..d {
                        grow[j] += gl * a[j];
                        da[j] += gl * trow[j];
                    }
                }
                let dz: Vec<f64> = da.iter().zip(&z).map(|(g, &x)| g * gelu_grad(x)).collect();
                let w = &params.head.w;
                let gw = g.params.head.w.data_mut();
                for i in 0..d {
                    for j in 0..d {
                        gw[i * d + j] += h[i] * dz[j];
                    }
                }
                for (b, &x) in g.params.head.b1.data_mut().iter_mut().zip(&dz) {
                    *b += x;
                }
                let dhr = dh.row_mut(r);
                for i in 0..d {
                    dhr[i] += w.row(i).iter().zip(&dz).map(|(p, q)| p * q).sum::<f64>();
                }
            }
        }
        if let (Some(g), Some(mut dx)) = (grads, dh) {
            for (l, b) in params.blocks.iter().enumerate().rev() {
                dx = block_backward(&dx, &trace.caches[l], b, &mut g.params.blocks[l]);
            }
            let t = &mut g.params.tables;
            for i in 0..live {
                let src = dx.row(i);
                let add = |dst: &mut [f64]| dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                add(t.positions.row_mut(i));
                if i == 0 {
                    add(t.special.row_mut(CLS));
                    continue;
                }
                match trace.input[i - 1] {
                    Slot::Video(v) => {
                        add(g.token.row_mut(v));
                        if self.config.use_meta {
                            add(t.meta.row_mut(self.video_course[v]));
                        }
                    }
                    Slot::Mask => add(t.special.row_mut(MASK)),
                }
            }
        }
        Ok(loss / k)
    }

    /// Mean masked loss of a batch under `params`, with its gradient when
    /// `with_grad` is set.
    pub fn batch_loss(
        &self,
        params: &Params,
        batch: &[MaskedSequence],
        with_grad: bool,
        exec: crate::Exec,
    ) -> Result<(f64, Option<Params>)> {
        if batch.is_empty() {
            return Err(PalError::Invalid("empty batch".into()));
        }
        let token = params.tables.token_table(&self.raw)?;
        let scale = 1.0 / batch.len() as f64;
        let chunks: Vec<&[MaskedSequence]> = batch.chunks(train::GRAD_CHUNK).collect();
        let parts = exec.map(&chunks, |chunk| -> Result<(f64, Option<Grads>)> {
            let mut g = with_grad.then(|| Grads::zeros(params, &token));
            let mut total = 0.0;
            for m in chunk.iter() {
                total += self.seq_loss(params, &token, &m.slots, &m.rows(), &m.targets, scale, g.as_mut())?;
            }
            Ok((total, g))
        });
        let mut loss = 0.0;
        let mut acc: Option<Grads> = None;
        for part in parts {
            let (l, g) = part?;
            loss += l;
            if let Some(g) = g {
                match acc.as_mut() {
                    Some(a) => a.add_assign(&g),
                    None => acc = Some(g),
                }
            }
        }
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(PalError::NonFinite(format!("batch loss {loss}")));
        }
        Ok((loss, acc.map(|g| g.finish(&self.raw))))
    }
}

#[cfg(test)]
mod tests;
