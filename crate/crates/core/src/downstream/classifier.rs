use serde::Serialize;

use crate::error::{PalError, Result};

/// Multinomial logistic regression with an L2 penalty on standardised
/// features, fitted by full-batch gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearClassifier {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `classes × dim`.
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub lambda: f64,
    pub iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda: 1e-2,
            iterations: 400,
        }
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

impl LinearClassifier {
    pub fn fit(x: &[Vec<f64>], y: &[usize], n_classes: usize, opts: FitOptions) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(PalError::Shape(format!("{} rows for {} labels", x.len(), y.len())));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
            return Err(PalError::Invalid(format!("label {bad} outside {n_classes} classes")));
        }
        let dim = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in x {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut scale = vec![0.0; dim];
        for r in x {
            scale.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
        }
        scale.iter_mut().for_each(|s| *s = if *s > 1e-12 { s.sqrt() } else { 1.0 });
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
            .collect();

        // Step size from the curvature bound 0.5·λmax(ZᵀZ/n) + 0.5 (bias) + λ.
        let mut u = vec![1.0 / (dim as f64).sqrt(); dim];
        let mut top = 0.0;
        for _ in 0..30 {
            let mut next = vec![0.0; dim];
            for r in &z {
                let p: f64 = r.iter().zip(&u).map(|(a, b)| a * b).sum();
                next.iter_mut().zip(r).for_each(|(o, v)| *o += p * v / n);
            }
            top = next.iter().map(|v| v * v).sum::<f64>().sqrt();
            if top == 0.0 {
                break;
            }
            u = next.into_iter().map(|v| v / top).collect();
        }
        let lr = 1.0 / (0.5 * (top + 1.0) + opts.lambda);

        let mut w = vec![vec![0.0; dim]; n_classes];
        let mut b = vec![0.0; n_classes];
        for _ in 0..opts.iterations {
            let mut gw = vec![vec![0.0; dim]; n_classes];
            let mut gb = vec![0.0; n_classes];
            for (r, &label) in z.iter().zip(y) {
                let mut logit: Vec<f64> = w
                    .iter()
                    .zip(&b)
                    .map(|(wc, bc)| bc + wc.iter().zip(r).map(|(a, v)| a * v).sum::<f64>())
                    .collect();
                softmax_in_place(&mut logit);
                logit[label] -= 1.0;
                for (c, &g) in logit.iter().enumerate() {
                    gb[c] += g / n;
                    gw[c].iter_mut().zip(r).for_each(|(o, v)| *o += g * v / n);
                }
            }
            for c in 0..n_classes {
                for j in 0..dim {
                    w[c][j] -= lr * (gw[c][j] + opts.lambda * w[c][j]);
                }
                b[c] -= lr * gb[c];
            }
        }
        Ok(LinearClassifier {
            mean,
            scale,
            weights: w,
            bias: b,
            lambda: opts.lambda,
        })
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = x
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        let mut logit: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(wc, bc)| bc + wc.iter().zip(&z).map(|(a, v)| a * v).sum::<f64>())
            .collect();
        softmax_in_place(&mut logit);
        logit
    }

    /// Most probable class, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.predict_proba(x);
        let mut best = 0;
        for (c, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = c;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_clusters() {
        let centers = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [5.0, 5.0]];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for k in 0..10 {
                let j = (k as f64 - 4.5) * 0.05;
                x.push(vec![ctr[0] + j, ctr[1] - j]);
                y.push(c);
            }
        }
        let m = LinearClassifier::fit(&x, &y, 4, FitOptions { lambda: 1e-4, iterations: 2000 }).unwrap();
        let pred: Vec<usize> = x.iter().map(|r| m.predict(r)).collect();
        assert_eq!(pred, y);
        let p = m.predict_proba(&x[0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(LinearClassifier::fit(&[vec![1.0]], &[2], 2, FitOptions::default()).is_err());
        assert!(LinearClassifier::fit(&[], &[], 2, FitOptions::default()).is_err());
    }
}
