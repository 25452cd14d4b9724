//! Fully connected softmax classifier on top of pooled features, trained with
//! mean cross-entropy. Only the CNN baseline uses it.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcHead {
    pub in_dim: usize,
    pub n_classes: usize,
    /// `n_classes x in_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FcHead {
    pub fn zeros(in_dim: usize, n_classes: usize) -> Self {
        Self {
            in_dim,
            n_classes,
            weight: vec![0.0; in_dim * n_classes],
            bias: vec![0.0; n_classes],
        }
    }

    /// Glorot-normal weights, zero bias.
    pub fn init<R: Rng>(rng: &mut R, in_dim: usize, n_classes: usize) -> Self {
        let std = (2.0 / (in_dim + n_classes) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut head = Self::zeros(in_dim, n_classes);
        head.weight.iter_mut().for_each(|w| *w = normal.sample(rng));
        head
    }

    pub fn logits(&self, latent: &Matrix) -> Result<Matrix> {
        if latent.cols() != self.in_dim {
            return Err(Error::Shape(format!(
                "head expects {} features, got {}",
                self.in_dim,
                latent.cols()
            )));
        }
        let mut out = Matrix::zeros(latent.rows(), self.n_classes);
        for i in 0..latent.rows() {
            let x = latent.row(i);
            for k in 0..self.n_classes {
                let w = &self.weight[k * self.in_dim..(k + 1) * self.in_dim];
                let z = self.bias[k] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                out.set(i, k, z);
            }
        }
        Ok(out)
    }

    /// Argmax class per row, ties to the lowest index.
    pub fn predict(&self, latent: &Matrix) -> Result<Vec<usize>> {
        let logits = self.logits(latent)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Mean cross-entropy of the head's softmax over the batch. Returns the loss,
/// the head gradients and the gradient with respect to `latent`.
pub fn fc_softmax_ce(latent: &Matrix, head: &FcHead, labels: &[usize]) -> Result<(f64, HeadGrads, Matrix)> {
    if labels.len() != latent.rows() {
        return Err(Error::Shape("one label per latent row required".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= head.n_classes) {
        return Err(Error::Param(format!("label {bad} outside [0, {})", head.n_classes)));
    }
    let n = latent.rows();
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let logits = head.logits(latent)?;
    let mut loss = 0.0;
    let mut gw = vec![0.0; head.weight.len()];
    let mut gb = vec![0.0; head.n_classes];
    let mut glat = Matrix::zeros(n, head.in_dim);
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let lp = log_softmax(logits.row(i));
        loss -= lp[labels[i]];
        let x = latent.row(i).to_vec();
        for k in 0..head.n_classes {
            // d(-log p_y)/dz_k = p_k - [k == y]
            let dz = (lp[k].exp() - f64::from(u8::from(k == labels[i]))) * inv_n;
            gb[k] += dz;
            let w = &head.weight[k * head.in_dim..(k + 1) * head.in_dim];
            let gwk = &mut gw[k * head.in_dim..(k + 1) * head.in_dim];
            let gl = glat.row_mut(i);
            for j in 0..head.in_dim {
                gwk[j] += dz * x[j];
                gl[j] += dz * w[j];
            }
        }
    }
    Ok((loss * inv_n, HeadGrads { weight: gw, bias: gb }, glat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{max_rel_err, numeric_grad, random_vec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln2() {
        let head = FcHead::zeros(3, 2);
        let x = Matrix::from_rows(&[vec![0.3, -1.0, 2.0], vec![1.0, 1.0, 1.0]]).unwrap();
        let (loss, _, _) = fc_softmax_ce(&x, &head, &[0, 1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_logits_give_zero_loss() {
        let mut head = FcHead::zeros(1, 2);
        head.weight = vec![-50.0, 50.0];
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let (loss, _, _) = fc_softmax_ce(&x, &head, &[1]).unwrap();
        assert!(loss < 1e-30);
    }

    #[test]
    fn label_out_of_range() {
        let head = FcHead::zeros(1, 2);
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(fc_softmax_ce(&x, &head, &[2]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let head = FcHead {
            in_dim: 4,
            n_classes: 3,
            weight: random_vec(&mut rng, 12),
            bias: random_vec(&mut rng, 3),
        };
        let x = Matrix::from_vec(5, 4, random_vec(&mut rng, 20)).unwrap();
        let labels = [0, 2, 1, 1, 0];
        let (_, g, gl) = fc_softmax_ce(&x, &head, &labels).unwrap();
        let num = numeric_grad(&head.weight, 1e-4, |w| {
            let mut h = head.clone();
            h.weight = w.to_vec();
            fc_softmax_ce(&x, &h, &labels).unwrap().0
        });
        assert!(max_rel_err(&g.weight, &num) < 1e-3);
        let num = numeric_grad(&head.bias, 1e-4, |b| {
            let mut h = head.clone();
            h.bias = b.to_vec();
            fc_softmax_ce(&x, &h, &labels).unwrap().0
        });
        assert!(max_rel_err(&g.bias, &num) < 1e-3);
        let num = numeric_grad(x.data(), 1e-4, |v| {
            let m = Matrix::from_vec(5, 4, v.to_vec()).unwrap();
            fc_softmax_ce(&m, &head, &labels).unwrap().0
        });
        assert!(max_rel_err(gl.data(), &num) < 1e-3);
    }
}
