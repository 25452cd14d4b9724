//! Binary C-SVM on a precomputed kernel, solved in the dual with SMO.
//!
//! The dual is `min ½ αᵀQα - eᵀα` subject to `0 <= α_i <= C` and
//! `Σ y_i α_i = 0`, with `Q_ij = y_i y_j K_ij`. Each iteration updates the
//! maximal violating pair: `i` maximizes `-y_t G_t` over the indices that may
//! move up, `j` minimizes it over those that may move down, which is the pair
//! with the largest error gap `|E_i - E_j|`. Scans run in index order and ties
//! keep the lowest index, so training is deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Dual coefficients above this are support vectors.
pub const SV_EPS: f64 = 1e-8;
pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_TOL: f64 = 1e-3;

const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoConfig {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SmoConfig {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            tol: DEFAULT_TOL,
            max_iter: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub alpha: Vec<f64>,
    pub b: f64,
    /// Training labels in {-1, +1}.
    pub y: Vec<f64>,
    pub sv_indices: Vec<usize>,
    pub c: f64,
    pub gamma: f64,
    pub iterations: usize,
}

fn check_inputs(k: &Matrix, y: &[f64], cfg: &SmoConfig) -> Result<()> {
    let n = y.len();
    if k.rows() != n || k.cols() != n {
        return Err(Error::Shape(format!(
            "kernel is {}x{}, labels have length {n}",
            k.rows(),
            k.cols()
        )));
    }
    if let Some(v) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::Param(format!("binary labels must be -1 or +1, got {v}")));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::SingleClass);
    }
    if !(cfg.c > 0.0 && cfg.c.is_finite()) || !(cfg.tol > 0.0) {
        return Err(Error::Param(format!("need C > 0 and tol > 0, got C={} tol={}", cfg.c, cfg.tol)));
    }
    if !k.is_finite() {
        return Err(Error::NonFinite("kernel matrix".into()));
    }
    Ok(())
}

#[inline]
fn in_up(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

#[inline]
fn in_low(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

/// Maximal violating pair `(i, j, m - M)` for gradient `g`.
fn select_pair(y: &[f64], alpha: &[f64], g: &[f64], c: f64) -> Option<(usize, usize, f64)> {
    let mut i = None;
    let mut m = f64::NEG_INFINITY;
    let mut j = None;
    let mut big_m = f64::INFINITY;
    for t in 0..y.len() {
        let v = -y[t] * g[t];
        if in_up(y[t], alpha[t], c) && v > m {
            m = v;
            i = Some(t);
        }
        if in_low(y[t], alpha[t], c) && v < big_m {
            big_m = v;
            j = Some(t);
        }
    }
    Some((i?, j?, m - big_m))
}

/// Dual gradient `G = Qα - e`, evaluated directly.
pub fn dual_gradient(k: &Matrix, y: &[f64], alpha: &[f64]) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|t| {
            let mut s = 0.0;
            for s_idx in 0..n {
                s += y[t] * y[s_idx] * k.get(t, s_idx) * alpha[s_idx];
            }
            s - 1.0
        })
        .collect()
}

/// Dual objective in maximization form, `eᵀα - ½ αᵀQα`.
pub fn dual_objective(k: &Matrix, y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k.get(i, j);
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Largest KKT violation `m(α) - M(α)`, recomputed from scratch; zero or
/// negative at an exact optimum.
pub fn max_kkt_violation(k: &Matrix, y: &[f64], alpha: &[f64], c: f64) -> f64 {
    let g = dual_gradient(k, y, alpha);
    select_pair(y, alpha, &g, c).map_or(0.0, |(_, _, gap)| gap)
}

fn bias(y: &[f64], alpha: &[f64], g: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut free = 0usize;
    for t in 0..y.len() {
        let yg = y[t] * g[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum += yg;
            free += 1;
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { 0.5 * (ub + lb) };
    -rho
}

/// Train on kernel `k` with labels `y` in {-1, +1}. `gamma` is recorded in
/// the model for later cross-kernel evaluation.
pub fn smo_train(k: &Matrix, y: &[f64], cfg: &SmoConfig, gamma: f64) -> Result<SvmModel> {
    check_inputs(k, y, cfg)?;
    let n = y.len();
    let c = cfg.c;
    let mut alpha = vec![0.0; n];
    let mut g = vec![-1.0; n];
    let mut iterations = 0;
    loop {
        let (i, j, gap) = select_pair(y, &alpha, &g, c).expect("both classes present");
        if gap < cfg.tol {
            break;
        }
        if iterations >= cfg.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                violation: gap,
                tol: cfg.tol,
            });
        }
        iterations += 1;

        // α_i += y_i t, α_j -= y_j t keeps Σ y α fixed; the objective falls
        // along t >= 0 with slope -(gap) and curvature η.
        let eta = (k.get(i, i) + k.get(j, j) - 2.0 * k.get(i, j)).max(TAU);
        let room_i = if y[i] > 0.0 { c - alpha[i] } else { alpha[i] };
        let room_j = if y[j] > 0.0 { alpha[j] } else { c - alpha[j] };
        let mut t = gap / eta;
        let (mut clip_i, mut clip_j) = (false, false);
        if t >= room_i {
            t = room_i;
            clip_i = true;
        }
        if t >= room_j {
            t = room_j;
            clip_j = true;
            clip_i = room_i == t;
        }
        let old_i = alpha[i];
        let old_j = alpha[j];
        alpha[i] = if clip_i { if y[i] > 0.0 { c } else { 0.0 } } else { old_i + y[i] * t };
        alpha[j] = if clip_j { if y[j] > 0.0 { 0.0 } else { c } } else { old_j - y[j] * t };
        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        for s in 0..n {
            g[s] += y[s] * (y[i] * k.get(s, i) * di + y[j] * k.get(s, j) * dj);
        }
    }
    let b = bias(y, &alpha, &g, c);
    let sv_indices = (0..n).filter(|&t| alpha[t] > SV_EPS).collect::<Vec<_>>();
    if sv_indices.is_empty() {
        return Err(Error::NoSupportVectors("SMO finished with all coefficients at zero".into()));
    }
    Ok(SvmModel {
        alpha,
        b,
        y: y.to_vec(),
        sv_indices,
        c,
        gamma,
        iterations,
    })
}

impl SvmModel {
    pub fn n_train(&self) -> usize {
        self.alpha.len()
    }

    /// `Σ α_i y_i k_i + b` for one row of query-vs-training kernel values.
    pub fn decision(&self, k_row: &[f64]) -> Result<f64> {
        if k_row.len() != self.alpha.len() {
            return Err(Error::Shape(format!(
                "kernel row has {} entries, model was trained on {}",
                k_row.len(),
                self.alpha.len()
            )));
        }
        let mut s = self.b;
        for &i in &self.sv_indices {
            s += self.alpha[i] * self.y[i] * k_row[i];
        }
        Ok(s)
    }

    /// Sign of the decision value; zero maps to +1.
    pub fn predict(&self, k_row: &[f64]) -> Result<f64> {
        Ok(if self.decision(k_row)? >= 0.0 { 1.0 } else { -1.0 })
    }

    /// Predictions for every row of a query-vs-training kernel block.
    pub fn predict_block(&self, k: &Matrix) -> Result<Vec<f64>> {
        (0..k.rows()).map(|i| self.predict(k.row(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cross_kernel, geometry, GammaRule};
    use crate::oracles::projected_gradient_dual_fn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tight() -> SmoConfig {
        SmoConfig {
            c: 1e6,
            tol: 1e-10,
            max_iter: 1_000_000,
        }
    }

    #[test]
    fn two_point_analytic_solution() {
        let t = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.5]]).unwrap();
        let g = geometry(&t, GammaRule::Fixed(0.8)).unwrap();
        let y = [-1.0, 1.0];
        let m = smo_train(&g.k, &y, &tight(), g.gamma).unwrap();
        let kk = g.k.get(0, 1);
        let want = 1.0 / (1.0 - kk);
        assert_eq!(m.sv_indices, vec![0, 1]);
        assert!((m.alpha[0] - want).abs() < 1e-8 && (m.alpha[1] - want).abs() < 1e-8);
        assert!(m.b.abs() < 1e-8);
        // midpoint is equidistant from both points
        let mid = Matrix::from_rows(&[vec![0.5, 0.25]]).unwrap();
        let kq = cross_kernel(&mid, &t, g.gamma).unwrap();
        assert!(m.decision(kq.row(0)).unwrap().abs() < 1e-8);
    }

    #[test]
    fn six_points_match_projected_gradient_oracle() {
        let t = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.3, 0.9],
            vec![1.0, 0.2],
            vec![1.2, 1.1],
            vec![0.6, 0.5],
            vec![2.0, 1.7],
        ])
        .unwrap();
        let y = [-1.0, -1.0, 1.0, 1.0, -1.0, 1.0];
        let g = geometry(&t, GammaRule::Fixed(1.0)).unwrap();
        let cfg = SmoConfig {
            c: 2.0,
            tol: 1e-10,
            max_iter: 1_000_000,
        };
        let m = smo_train(&g.k, &y, &cfg, g.gamma).unwrap();
        let oracle = projected_gradient_dual_fn(6, |i, j| g.k.get(i, j), &y, cfg.c);
        for (a, b) in m.alpha.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        let sv_oracle: Vec<usize> = (0..6).filter(|&i| oracle[i] > SV_EPS).collect();
        assert_eq!(m.sv_indices, sv_oracle);
    }

    #[test]
    fn single_class_is_rejected() {
        let k = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        assert!(matches!(
            smo_train(&k, &[1.0, 1.0], &SmoConfig::default(), 1.0),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn iteration_budget_exhaustion_reports_diagnostics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Matrix::from_vec(20, 2, (0..40).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let g = geometry(&t, GammaRule::Fixed(1.0)).unwrap();
        let cfg = SmoConfig {
            c: 10.0,
            tol: 1e-12,
            max_iter: 2,
        };
        let err = smo_train(&g.k, &y, &cfg, 1.0).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { iterations: 2, .. }));
    }

    #[test]
    fn kkt_holds_and_training_predictions_match_dual_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 40;
        let t = Matrix::from_vec(n, 3, (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y: Vec<f64> = (0..n).map(|i| if t.get(i, 0) + 0.3 * t.get(i, 1) > 0.0 { 1.0 } else { -1.0 }).collect();
        let g = geometry(&t, GammaRule::Fixed(0.5)).unwrap();
        let cfg = SmoConfig::default();
        let m = smo_train(&g.k, &y, &cfg, g.gamma).unwrap();
        assert!(max_kkt_violation(&g.k, &y, &m.alpha, cfg.c) < cfg.tol);
        let eq: f64 = m.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
        assert!(eq.abs() < 1e-9);
        assert!(m.alpha.iter().all(|&a| (0.0..=cfg.c).contains(&a)));
        for i in 0..n {
            let mut f = m.b;
            for j in 0..n {
                f += m.alpha[j] * y[j] * g.k.get(i, j);
            }
            let want = if f >= 0.0 { 1.0 } else { -1.0 };
            assert_eq!(m.predict(g.k.row(i)).unwrap(), want);
        }
        // retraining on the same kernel gives the same model
        assert_eq!(m, smo_train(&g.k, &y, &cfg, g.gamma).unwrap());
    }

    #[test]
    fn zero_kernel_row_predicts_sign_of_bias() {
        let m = SvmModel {
            alpha: vec![0.5, 0.5],
            b: -0.3,
            y: vec![1.0, -1.0],
            sv_indices: vec![0, 1],
            c: 1.0,
            gamma: 1.0,
            iterations: 0,
        };
        assert_eq!(m.predict(&[0.0, 0.0]).unwrap(), -1.0);
        assert!(m.decision(&[0.0]).is_err());
    }

    #[test]
    fn duplicated_dataset_keeps_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let t = Matrix::from_vec(n, 2, (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y: Vec<f64> = (0..n).map(|i| if t.get(i, 0) > 0.0 { 1.0 } else { -1.0 }).collect();
        let g = geometry(&t, GammaRule::Fixed(2.0)).unwrap();
        let cfg = SmoConfig {
            c: 1e4,
            tol: 1e-8,
            max_iter: 1_000_000,
        };
        let m = smo_train(&g.k, &y, &cfg, g.gamma).unwrap();
        let idx: Vec<usize> = (0..n).flat_map(|i| [i, i]).collect();
        let t2 = t.select_rows(&idx);
        let y2: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let g2 = geometry(&t2, GammaRule::Fixed(2.0)).unwrap();
        let m2 = smo_train(&g2.k, &y2, &cfg, g2.gamma).unwrap();
        let kq = cross_kernel(&t, &t2, 2.0).unwrap();
        for i in 0..n {
            assert_eq!(m.predict(g.k.row(i)).unwrap(), m2.predict(kq.row(i)).unwrap());
        }
    }
}
