//! Post-norm transformer block:
//! `H1 = LN1(X + MHA(X))`, `Y = LN2(H1 + W2·GELU(W1·H1 + b1) + b2)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{
    attention_backward, attention_forward, gelu_grad, gelu_scalar, layer_norm_backward,
    layer_norm_forward, matmul, matmul_nt_acc, matmul_tn_acc, AttentionCache, LayerNormCache,
};
use super::Tensor;
use crate::error::{PalError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub heads: usize,
    /// Query/key/value/output projections, `d×d`; head `h` owns columns
    /// `h·d/heads .. (h+1)·d/heads`.
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

impl BlockParams {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains. The
    /// feed-forward inner width is `4d`.
    pub fn init<R: Rng>(d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(PalError::Config(format!("{heads} heads must divide d={d}")));
        }
        let xavier = |fan_in: usize, fan_out: usize, rng: &mut R| {
            Tensor::uniform(&[fan_in, fan_out], (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
        };
        Ok(BlockParams {
            heads,
            wq: xavier(d, d, rng),
            wk: xavier(d, d, rng),
            wv: xavier(d, d, rng),
            wo: xavier(d, d, rng),
            ff_w1: xavier(d, 4 * d, rng),
            ff_b1: Tensor::zeros(&[4 * d]),
            ff_w2: xavier(4 * d, d, rng),
            ff_b2: Tensor::zeros(&[d]),
            ln1_gain: Tensor::filled(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            ln2_gain: Tensor::filled(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = Tensor::zeros_like;
        BlockParams {
            heads: self.heads,
            wq: z(&self.wq),
            wk: z(&self.wk),
            wv: z(&self.wv),
            wo: z(&self.wo),
            ff_w1: z(&self.ff_w1),
            ff_b1: z(&self.ff_b1),
            ff_w2: z(&self.ff_w2),
            ff_b2: z(&self.ff_b2),
            ln1_gain: z(&self.ln1_gain),
            ln1_bias: z(&self.ln1_bias),
            ln2_gain: z(&self.ln2_gain),
            ln2_bias: z(&self.ln2_bias),
        }
    }

    pub fn d(&self) -> usize {
        self.wq.rows()
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 12] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("ff_w1", &self.ff_w1),
            ("ff_b1", &self.ff_b1),
            ("ff_w2", &self.ff_w2),
            ("ff_b2", &self.ff_b2),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 12] {
        [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("ff_w1", &mut self.ff_w1),
            ("ff_b1", &mut self.ff_b1),
            ("ff_w2", &mut self.ff_w2),
            ("ff_b2", &mut self.ff_b2),
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    attn: AttentionCache,
    ln1: LayerNormCache,
    h1: Tensor,
    ff_pre: Tensor,
    ff_act: Tensor,
    ln2: LayerNormCache,
}

fn add_bias(x: &mut Tensor, b: &Tensor) {
    for i in 0..x.rows() {
        for (v, &bb) in x.row_mut(i).iter_mut().zip(b.data()) {
            *v += bb;
        }
    }
}

fn col_sum_acc(x: &Tensor, out: &mut Tensor) {
    for i in 0..x.rows() {
        for (o, &v) in out.data_mut().iter_mut().zip(x.row(i)) {
            *o += v;
        }
    }
}

/// `key_mask[j] == false` marks row `j` as padding: it is never attended to.
pub fn block_forward(h: &Tensor, p: &BlockParams, key_mask: &[bool]) -> Result<(Tensor, BlockCache)> {
    if h.cols() != p.d() {
        return Err(PalError::Shape(format!(
            "block of width {} applied to rows of width {}",
            p.d(),
            h.cols()
        )));
    }
    let (mut r1, attn) = attention_forward(h, &p.wq, &p.wk, &p.wv, &p.wo, p.heads, key_mask)?;
    r1.add_assign(h);
    let (h1, ln1) = layer_norm_forward(&r1, &p.ln1_gain, &p.ln1_bias);
    let mut ff_pre = matmul(&h1, &p.ff_w1)?;
    add_bias(&mut ff_pre, &p.ff_b1);
    let mut ff_act = ff_pre.clone();
    ff_act.data_mut().iter_mut().for_each(|v| *v = gelu_scalar(*v));
    let mut r2 = matmul(&ff_act, &p.ff_w2)?;
    add_bias(&mut r2, &p.ff_b2);
    r2.add_assign(&h1);
    let (out, ln2) = layer_norm_forward(&r2, &p.ln2_gain, &p.ln2_bias);
    Ok((
        out,
        BlockCache {
            attn,
            ln1,
            h1,
            ff_pre,
            ff_act,
            ln2,
        },
    ))
}

/// Returns the input gradient and accumulates parameter gradients into `g`.
pub fn block_backward(dout: &Tensor, cache: &BlockCache, p: &BlockParams, g: &mut BlockParams) -> Tensor {
    let dr2 = layer_norm_backward(dout, &cache.ln2, &p.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);
    matmul_tn_acc(&cache.ff_act, &dr2, &mut g.ff_w2);
    col_sum_acc(&dr2, &mut g.ff_b2);
    let mut dff = Tensor::zeros_like(&cache.ff_pre);
    matmul_nt_acc(&dr2, &p.ff_w2, &mut dff);
    for (d, &x) in dff.data_mut().iter_mut().zip(cache.ff_pre.data()) {
        *d *= gelu_grad(x);
    }
    matmul_tn_acc(&cache.h1, &dff, &mut g.ff_w1);
    col_sum_acc(&dff, &mut g.ff_b1);
    let mut dh1 = dr2;
    matmul_nt_acc(&dff, &p.ff_w1, &mut dh1);
    let dr1 = layer_norm_backward(&dh1, &cache.ln1, &p.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
    let mut dx = attention_backward(
        &dr1,
        &cache.attn,
        &p.wq,
        &p.wk,
        &p.wv,
        &p.wo,
        p.heads,
        [&mut g.wq, &mut g.wk, &mut g.wv, &mut g.wo],
    );
    dx.add_assign(&dr1);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat(p: &BlockParams) -> Vec<f64> {
        p.tensors().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    fn unflat(template: &BlockParams, v: &[f64]) -> BlockParams {
        let mut p = template.clone();
        let mut at = 0;
        for (_, t) in p.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&v[at..at + n]);
            at += n;
        }
        p
    }

    #[test]
    fn shape_preserved_and_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = BlockParams::init(8, 4, &mut rng).unwrap();
        let x = Tensor::uniform(&[5, 8], 1.0, &mut rng);
        let (y, _) = block_forward(&x, &p, &[true; 5]).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(block_forward(&Tensor::zeros(&[5, 6]), &p, &[true; 5]).is_err());
        assert!(BlockParams::init(10, 4, &mut rng).is_err());
    }

    #[test]
    fn zero_params_and_input_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = BlockParams::init(8, 2, &mut rng).unwrap();
        for (name, t) in p.tensors_mut() {
            if !name.ends_with("gain") {
                t.fill(0.0);
            }
        }
        let (y, _) = block_forward(&Tensor::zeros(&[4, 8]), &p, &[true; 4]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn padded_rows_do_not_leak() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = BlockParams::init(8, 2, &mut rng).unwrap();
        let mut x = Tensor::uniform(&[5, 8], 1.0, &mut rng);
        let mask = [true, true, true, false, false];
        let (a, _) = block_forward(&x, &p, &mask).unwrap();
        for v in x.row_mut(3) {
            *v += 3.0;
        }
        let (b, _) = block_forward(&x, &p, &mask).unwrap();
        for i in 0..3 {
            assert_eq!(a.row(i), b.row(i));
        }
    }

    #[test]
    fn permutation_equivariant_without_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = BlockParams::init(8, 4, &mut rng).unwrap();
        let x = Tensor::uniform(&[4, 8], 1.0, &mut rng);
        let perm = [2, 0, 3, 1];
        let mut xp = Tensor::zeros(&[4, 8]);
        for (i, &src) in perm.iter().enumerate() {
            xp.row_mut(i).copy_from_slice(x.row(src));
        }
        let (y, _) = block_forward(&x, &p, &[true; 4]).unwrap();
        let (yp, _) = block_forward(&xp, &p, &[true; 4]).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for (a, b) in yp.row(i).iter().zip(y.row(src)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn block_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = BlockParams::init(8, 2, &mut rng).unwrap();
        // move off the symmetric init so every gradient is exercised
        for (_, t) in p.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let x = Tensor::uniform(&[4, 8], 1.0, &mut rng);
        let w = Tensor::uniform(&[4, 8], 1.0, &mut rng);
        let mask = [true, true, true, false];
        let (_, cache) = block_forward(&x, &p, &mask).unwrap();
        let mut g = p.zeros_like();
        let dx = block_backward(&w, &cache, &p, &mut g);

        let mut theta = [x.data().to_vec(), flat(&p)].concat();
        let analytic = [dx.data().to_vec(), flat(&g)].concat();
        let f = |t: &[f64]| {
            let x = Tensor::from_vec(&[4, 8], t[..32].to_vec())?;
            let (y, _) = block_forward(&x, &unflat(&p, &t[32..]), &mask)?;
            Ok(y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
        };
        let r = grad_check(&mut theta, &analytic, 1e-5, f).unwrap();
        assert!(r.max_rel_error < 1e-6, "{} at {}", r.max_rel_error, r.worst_index);
    }
}
