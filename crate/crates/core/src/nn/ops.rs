use super::Tensor;
use crate::error::{PalError, Result};

pub const LN_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_K: f64 = 0.797_884_560_802_865_4;

fn check_inner(a: &Tensor, b: &Tensor, a_dim: usize, b_dim: usize, op: &str) -> Result<()> {
    if a_dim != b_dim {
        return Err(PalError::Shape(format!(
            "{op}: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `out += a · b` for `a: m×k`, `b: k×n`.
pub fn matmul_acc(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(b.rows(), k);
    debug_assert_eq!((out.rows(), out.cols()), (m, n));
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for i in 0..m {
        let orow = &mut od[i * n..(i + 1) * n];
        for p in 0..k {
            let x = ad[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_inner(a, b, a.cols(), b.rows(), "matmul")?;
    let mut out = Tensor::zeros(&[a.rows(), b.cols()]);
    matmul_acc(a, b, &mut out);
    Ok(out)
}

/// `out += a · bᵀ` for `a: m×k`, `b: n×k`.
pub fn matmul_nt_acc(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    debug_assert_eq!(b.cols(), k);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            od[i * n + j] += s;
        }
    }
}

pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_inner(a, b, a.cols(), b.cols(), "matmul_nt")?;
    let mut out = Tensor::zeros(&[a.rows(), b.rows()]);
    matmul_nt_acc(a, b, &mut out);
    Ok(out)
}

/// `out += aᵀ · b` for `a: m×k`, `b: m×n`.
pub fn matmul_tn_acc(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(b.rows(), m);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for r in 0..m {
        let brow = &bd[r * n..(r + 1) * n];
        for p in 0..k {
            let x = ad[r * k + p];
            if x == 0.0 {
                continue;
            }
            let orow = &mut od[p * n..(p + 1) * n];
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
}

/// Tanh approximation of GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

pub fn gelu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = gelu_scalar(*v));
    out
}

/// Row-wise stable softmax. `mask[j] == false` removes column `j` from every
/// row.
pub fn softmax_rows(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let c = x.cols();
    if c == 0 {
        return Err(PalError::Shape("softmax over an empty row".into()));
    }
    if let Some(m) = mask {
        if m.len() != c {
            return Err(PalError::Shape(format!("mask of {} for {} columns", m.len(), c)));
        }
        if !m.iter().any(|&b| b) {
            return Err(PalError::Invalid("softmax row is fully masked".into()));
        }
    }
    let keep = |j: usize| mask.is_none_or(|m| m[j]);
    let mut out = x.clone();
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let max = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| keep(j))
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if keep(j) {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// Gradient of the softmax input given the softmax output `y` and the
/// upstream gradient `dy`, for one row.
pub fn softmax_backward(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((d, &yi), &dyi) in dx.iter_mut().zip(y).zip(dy) {
        *d += yi * (dyi - dot);
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Tensor,
    pub rstd: Vec<f64>,
}

pub fn layer_norm_forward(x: &Tensor, gain: &Tensor, bias: &Tensor) -> (Tensor, LayerNormCache) {
    let (n, d) = (x.rows(), x.cols());
    let mut y = Tensor::zeros(&[n, d]);
    let mut xhat = Tensor::zeros(&[n, d]);
    let mut rstd = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(r);
        let xh = xhat.row_mut(i);
        for j in 0..d {
            xh[j] = (row[j] - mean) * r;
        }
        let yr = y.row_mut(i);
        for j in 0..d {
            yr[j] = xhat.row(i)[j] * gain.data()[j] + bias.data()[j];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

/// Returns the input gradient; accumulates into `dgain` and `dbias`.
pub fn layer_norm_backward(
    dy: &Tensor,
    cache: &LayerNormCache,
    gain: &Tensor,
    dgain: &mut Tensor,
    dbias: &mut Tensor,
) -> Tensor {
    let (n, d) = (dy.rows(), dy.cols());
    let mut dx = Tensor::zeros(&[n, d]);
    let g = gain.data();
    for i in 0..n {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for j in 0..d {
            dgain.data_mut()[j] += dyr[j] * xh[j];
            dbias.data_mut()[j] += dyr[j];
            let dxh = dyr[j] * g[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= d as f64;
        mean_dxh_xh /= d as f64;
        let r = cache.rstd[i];
        let out = dx.row_mut(i);
        for j in 0..d {
            out[j] = r * (dyr[j] * g[j] - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub x: Tensor,
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    /// One `n×n` probability matrix per head.
    pub probs: Vec<Tensor>,
    pub concat: Tensor,
    pub key_mask: Vec<bool>,
}

/// Bidirectional multi-head self-attention without projection biases.
/// `key_mask[j] == false` hides row `j` from every query.
pub fn attention_forward(
    x: &Tensor,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    wo: &Tensor,
    heads: usize,
    key_mask: &[bool],
) -> Result<(Tensor, AttentionCache)> {
    let (n, d) = (x.rows(), x.cols());
    if d % heads != 0 {
        return Err(PalError::Shape(format!("{heads} heads do not divide d={d}")));
    }
    if key_mask.len() != n {
        return Err(PalError::Shape(format!("key mask {} for {n} rows", key_mask.len())));
    }
    let q = matmul(x, wq)?;
    let k = matmul(x, wk)?;
    let v = matmul(x, wv)?;
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut concat = Tensor::zeros(&[n, d]);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        let mut scores = Tensor::zeros(&[n, n]);
        for i in 0..n {
            let qi = &q.row(i)[cols.clone()];
            for j in 0..n {
                let kj = &k.row(j)[cols.clone()];
                scores.row_mut(i)[j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
        }
        let p = softmax_rows(&scores, Some(key_mask))?;
        for i in 0..n {
            let pi = p.row(i);
            let out = &mut concat.row_mut(i)[cols.clone()];
            for (j, &pij) in pi.iter().enumerate() {
                if pij == 0.0 {
                    continue;
                }
                let vj = &v.row(j)[cols.clone()];
                for (o, &vv) in out.iter_mut().zip(vj) {
                    *o += pij * vv;
                }
            }
        }
        probs.push(p);
    }
    let out = matmul(&concat, wo)?;
    Ok((
        out,
        AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            probs,
            concat,
            key_mask: key_mask.to_vec(),
        },
    ))
}

/// Returns the input gradient; accumulates the four weight gradients.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    dout: &Tensor,
    cache: &AttentionCache,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    wo: &Tensor,
    heads: usize,
    grads: [&mut Tensor; 4],
) -> Tensor {
    let [dwq, dwk, dwv, dwo] = grads;
    let (n, d) = (dout.rows(), dout.cols());
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    matmul_tn_acc(&cache.concat, dout, dwo);
    let mut dconcat = Tensor::zeros(&[n, d]);
    matmul_nt_acc(dout, wo, &mut dconcat);
    let mut dq = Tensor::zeros(&[n, d]);
    let mut dk_ = Tensor::zeros(&[n, d]);
    let mut dv = Tensor::zeros(&[n, d]);
    let mut dp = vec![0.0; n];
    let mut ds = vec![0.0; n];
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        let p = &cache.probs[h];
        for i in 0..n {
            let doi = &dconcat.row(i)[cols.clone()];
            let pi = p.row(i);
            for j in 0..n {
                let vj = &cache.v.row(j)[cols.clone()];
                dp[j] = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                if pi[j] != 0.0 {
                    let dvj = &mut dv.row_mut(j)[cols.clone()];
                    for (g, &o) in dvj.iter_mut().zip(doi) {
                        *g += pi[j] * o;
                    }
                }
            }
            ds.iter_mut().for_each(|x| *x = 0.0);
            softmax_backward(pi, &dp, &mut ds);
            for j in 0..n {
                let s = ds[j] * scale;
                if s == 0.0 {
                    continue;
                }
                for c in cols.clone() {
                    dq.row_mut(i)[c] += s * cache.k.row(j)[c];
                    dk_.row_mut(j)[c] += s * cache.q.row(i)[c];
                }
            }
        }
    }
    matmul_tn_acc(&cache.x, &dq, dwq);
    matmul_tn_acc(&cache.x, &dk_, dwk);
    matmul_tn_acc(&cache.x, &dv, dwv);
    let mut dx = Tensor::zeros(&[n, d]);
    matmul_nt_acc(&dq, wq, &mut dx);
    matmul_nt_acc(&dk_, wk, &mut dx);
    matmul_nt_acc(&dv, wv, &mut dx);
    dx
}
