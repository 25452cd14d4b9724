use rand::Rng;

use crate::tensor::Tensor4;

pub fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_tensor<R: Rng>(rng: &mut R, n: usize, c: usize, h: usize, w: usize) -> Tensor4 {
    Tensor4::from_vec(n, c, h, w, random_vec(rng, n * c * h * w)).unwrap()
}

/// Largest `|a - b| / max(|a|, |b|, 1e-6)` over paired entries.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x` for every coordinate.
pub fn numeric_grad(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let lp = f(&probe);
            probe[i] = orig - eps;
            let lm = f(&probe);
            probe[i] = orig;
            (lp - lm) / (2.0 * eps)
        })
        .collect()
}
