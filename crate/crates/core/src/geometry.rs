//! Pairwise geometry of a latent matrix: squared distances, RBF kernel and
//! Euclidean distances. The kernel and distances are both derived from one
//! squared-distance matrix.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::Matrix;

/// How the RBF width γ is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum GammaRule {
    /// γ = 1 / latent width.
    InverseDim,
    /// γ = 1 / median of the off-diagonal squared distances.
    Median,
    Fixed(f64),
}

impl GammaRule {
    /// Resolve γ for squared distances `p` of points with `dim` coordinates.
    pub fn resolve(self, p: &Matrix, dim: usize) -> Result<f64> {
        let gamma = match self {
            GammaRule::InverseDim => 1.0 / dim.max(1) as f64,
            GammaRule::Fixed(g) => g,
            GammaRule::Median => {
                let n = p.rows();
                let mut off: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| p.get(i, j)).collect();
                if off.is_empty() {
                    1.0 / dim.max(1) as f64
                } else {
                    off.sort_by(f64::total_cmp);
                    let m = off.len();
                    let med = if m % 2 == 1 { off[m / 2] } else { 0.5 * (off[m / 2 - 1] + off[m / 2]) };
                    if med > 0.0 {
                        1.0 / med
                    } else {
                        log::warn!("median squared distance is zero; falling back to gamma = 1/dim");
                        1.0 / dim.max(1) as f64
                    }
                }
            }
        };
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Param(format!("RBF gamma must be positive and finite, got {gamma}")));
        }
        Ok(gamma)
    }
}

impl std::str::FromStr for GammaRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "inverse-dim" | "inverse_dim" => Ok(GammaRule::InverseDim),
            "median" => Ok(GammaRule::Median),
            other => other
                .parse::<f64>()
                .map(GammaRule::Fixed)
                .map_err(|_| format!("gamma must be a number, `median` or `inverse-dim`, got `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryMatrices {
    pub p: Matrix,
    pub k: Matrix,
    pub d: Matrix,
    pub gamma: f64,
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().max(0.0)
}

pub fn pairwise_sq_dist(t: &Matrix) -> Matrix {
    pairwise_sq_dist_with(Exec::default(), t)
}

/// Each unordered pair is evaluated once and mirrored.
pub fn pairwise_sq_dist_with(exec: Exec, t: &Matrix) -> Matrix {
    let n = t.rows();
    let upper = exec.map(n, |i| (i + 1..n).map(|j| sq_dist(t.row(i), t.row(j))).collect::<Vec<f64>>());
    let mut p = Matrix::zeros(n, n);
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            p.set(i, j, v);
            p.set(j, i, v);
        }
    }
    p
}

pub fn rbf_kernel(p: &Matrix, gamma: f64) -> Result<Matrix> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Param(format!("RBF gamma must be positive and finite, got {gamma}")));
    }
    let data = p.data().iter().map(|&v| (-gamma * v).exp()).collect();
    Matrix::from_vec(p.rows(), p.cols(), data)
}

pub fn dist_matrix(p: &Matrix) -> Matrix {
    let data = p.data().iter().map(|&v| v.sqrt()).collect();
    Matrix::from_vec(p.rows(), p.cols(), data).expect("same shape")
}

pub fn geometry(t: &Matrix, gamma: GammaRule) -> Result<GeometryMatrices> {
    let p = pairwise_sq_dist(t);
    let gamma = gamma.resolve(&p, t.cols())?;
    let k = rbf_kernel(&p, gamma)?;
    let d = dist_matrix(&p);
    Ok(GeometryMatrices { p, k, d, gamma })
}

pub fn cross_kernel(query: &Matrix, train: &Matrix, gamma: f64) -> Result<Matrix> {
    cross_kernel_with(Exec::default(), query, train, gamma)
}

/// `k_ij = exp(-γ ||q_i - t_j||²)`, an m x n block.
pub fn cross_kernel_with(exec: Exec, query: &Matrix, train: &Matrix, gamma: f64) -> Result<Matrix> {
    if query.cols() != train.cols() {
        return Err(Error::Shape(format!(
            "query latents have width {}, training latents {}",
            query.cols(),
            train.cols()
        )));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Param(format!("RBF gamma must be positive and finite, got {gamma}")));
    }
    let rows = exec.map(query.rows(), |i| {
        (0..train.rows())
            .map(|j| (-gamma * sq_dist(query.row(i), train.row(j))).exp())
            .collect::<Vec<f64>>()
    });
    Matrix::from_vec(query.rows(), train.rows(), rows.concat())
}

/// Plain CSV dump of a matrix; infinities are written as `inf`.
pub fn write_matrix_csv<W: Write>(mut w: W, m: &Matrix) -> Result<()> {
    for i in 0..m.rows() {
        let line: Vec<String> = m
            .row(i)
            .iter()
            .map(|v| if v.is_infinite() { "inf".to_string() } else { v.to_string() })
            .collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_latents(seed: u64, n: usize, dim: usize) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(n, dim, (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn coincident_and_scalar_cases() {
        let t = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(pairwise_sq_dist(&t).get(0, 1), 0.0);
        let t = Matrix::from_rows(&[vec![0.0], vec![3.0]]).unwrap();
        let p = pairwise_sq_dist(&t);
        assert_eq!(p.get(0, 1), 9.0);
        assert_eq!(dist_matrix(&p).get(1, 0), 3.0);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let t = random_latents(1, 10, 5);
        let p = pairwise_sq_dist(&t);
        for i in 0..10 {
            for j in 0..10 {
                let mut s = 0.0;
                for b in 0..5 {
                    s += (t.get(i, b) - t.get(j, b)).powi(2);
                }
                assert!((p.get(i, j) - s).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn kernel_closed_forms() {
        let p = Matrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        let k = rbf_kernel(&p, 0.5).unwrap();
        assert_eq!(k.get(0, 0), 1.0);
        assert!((k.get(0, 1) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(rbf_kernel(&p, 0.0).is_err());
        assert!(rbf_kernel(&p, -1.0).is_err());
    }

    #[test]
    fn kernel_two_by_two_minors_nonnegative() {
        let t = random_latents(2, 12, 3);
        let g = geometry(&t, GammaRule::Fixed(0.7)).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(g.k.get(i, j), g.k.get(j, i));
                let minor = g.k.get(i, i) * g.k.get(j, j) - g.k.get(i, j) * g.k.get(j, i);
                assert!(minor >= -1e-12);
            }
        }
    }

    #[test]
    fn triangle_inequality_on_random_sets() {
        for seed in 0..5 {
            let d = dist_matrix(&pairwise_sq_dist(&random_latents(10 + seed, 8, 4)));
            for i in 0..8 {
                assert_eq!(d.get(i, i), 0.0);
                for j in 0..8 {
                    for k in 0..8 {
                        assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn cross_kernel_cases() {
        let train = random_latents(3, 6, 4);
        let query = train.select_rows(&[2, 5]);
        let k = cross_kernel(&query, &train, 0.3).unwrap();
        assert_eq!(k.get(0, 2), 1.0);
        assert_eq!(k.get(1, 5), 1.0);
        let a = Matrix::from_rows(&[vec![1.5]]).unwrap();
        let b = Matrix::from_rows(&[vec![-0.5]]).unwrap();
        let kab = cross_kernel(&a, &b, 0.25).unwrap();
        let p = Matrix::from_rows(&[vec![4.0]]).unwrap();
        assert_eq!(kab.get(0, 0), rbf_kernel(&p, 0.25).unwrap().get(0, 0));
        assert!(cross_kernel(&Matrix::zeros(1, 3), &train, 0.3).is_err());
    }

    #[test]
    fn cross_kernel_matches_naive_oracle() {
        let train = random_latents(4, 7, 3);
        let query = random_latents(5, 4, 3);
        let k = cross_kernel(&query, &train, 0.4).unwrap();
        for i in 0..4 {
            for j in 0..7 {
                let s: f64 = (0..3).map(|b| (query.get(i, b) - train.get(j, b)).powi(2)).sum();
                assert!((k.get(i, j) - (-0.4 * s).exp()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cross_kernel_on_training_set_equals_gram() {
        let t = random_latents(6, 9, 4);
        let g = geometry(&t, GammaRule::Fixed(0.2)).unwrap();
        assert_eq!(cross_kernel(&t, &t, 0.2).unwrap(), g.k);
    }

    #[test]
    fn gamma_rules() {
        let t = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        let p = pairwise_sq_dist(&t);
        // off-diagonal: 1, 9, 4 -> median 4
        assert_eq!(GammaRule::Median.resolve(&p, 1).unwrap(), 0.25);
        assert_eq!(GammaRule::InverseDim.resolve(&p, 16).unwrap(), 1.0 / 16.0);
        assert!(GammaRule::Fixed(0.0).resolve(&p, 1).is_err());
        assert_eq!("median".parse::<GammaRule>().unwrap(), GammaRule::Median);
        assert_eq!("0.5".parse::<GammaRule>().unwrap(), GammaRule::Fixed(0.5));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let t = random_latents(7, 30, 5);
        assert_eq!(pairwise_sq_dist_with(Exec::Sequential, &t), pairwise_sq_dist_with(Exec::Parallel, &t));
    }

    proptest! {
        #[test]
        fn geometry_invariants(seed in 0u64..1000, n in 2usize..12, dim in 1usize..5, s in 0.1f64..5.0) {
            let t = random_latents(seed, n, dim);
            let g = geometry(&t, GammaRule::Fixed(0.5)).unwrap();
            for i in 0..n {
                prop_assert_eq!(g.p.get(i, i), 0.0);
                prop_assert_eq!(g.k.get(i, i), 1.0);
                for j in 0..n {
                    prop_assert_eq!(g.p.get(i, j), g.p.get(j, i));
                    prop_assert_eq!(g.k.get(i, j), g.k.get(j, i));
                    prop_assert!(g.k.get(i, j) > 0.0 && g.k.get(i, j) <= 1.0);
                    prop_assert_eq!(g.d.get(i, j), g.p.get(i, j).sqrt());
                }
            }
            // strict monotonicity of the kernel in the distance
            for a in 0..n * n {
                for b in 0..n * n {
                    if g.p.data()[a] < g.p.data()[b] {
                        prop_assert!(g.k.data()[a] >= g.k.data()[b]);
                    }
                }
            }
            // scaling latents by s scales P by s^2; gamma / s^2 restores K
            let mut ts = t.clone();
            ts.data_mut().iter_mut().for_each(|v| *v *= s);
            let gs = geometry(&ts, GammaRule::Fixed(0.5 / (s * s))).unwrap();
            for (a, b) in gs.p.data().iter().zip(g.p.data()) {
                prop_assert!((a - s * s * b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
            for (a, b) in gs.k.data().iter().zip(g.k.data()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
