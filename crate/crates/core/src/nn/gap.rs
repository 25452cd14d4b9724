//! Global average pooling: one value per channel.

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor4};

#[derive(Clone, Copy, Debug)]
pub struct GapCache {
    in_dims: (usize, usize, usize, usize),
}

pub fn gap(input: &Tensor4) -> (Matrix, GapCache) {
    let (n, c, h, w) = input.dims();
    let hw = h * w;
    let data = input
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f64>() / hw as f64)
        .collect();
    (
        Matrix::from_vec(n, c, data).expect("gap output shape"),
        GapCache { in_dims: input.dims() },
    )
}

pub fn gap_backward(grad_out: &Matrix, cache: &GapCache) -> Result<Tensor4> {
    let (n, c, h, w) = cache.in_dims;
    if (grad_out.rows(), grad_out.cols()) != (n, c) {
        return Err(Error::Shape(format!(
            "gap grad_out is {}x{}, expected {n}x{c}",
            grad_out.rows(),
            grad_out.cols()
        )));
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * c * hw);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / hw as f64, hw));
    }
    Tensor4::from_vec(n, c, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{max_rel_err, numeric_grad, random_tensor, random_vec};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel() {
        let t = Tensor4::from_vec(1, 2, 2, 2, [vec![3.0; 4], vec![-1.0; 4]].concat()).unwrap();
        let (m, _) = gap(&t);
        assert_eq!(m.data(), &[3.0, -1.0]);
    }

    #[test]
    fn unit_spatial_is_identity() {
        let t = Tensor4::from_vec(2, 3, 1, 1, (0..6).map(f64::from).collect()).unwrap();
        let (m, _) = gap(&t);
        assert_eq!(m.data(), t.data());
    }

    #[test]
    fn spatial_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let t = random_tensor(&mut rng, 1, 2, 3, 3);
        let mut perm: Vec<usize> = (0..9).collect();
        perm.shuffle(&mut rng);
        let mut data = Vec::new();
        for ch in 0..2 {
            data.extend(perm.iter().map(|&p| t.data()[ch * 9 + p]));
        }
        let u = Tensor4::from_vec(1, 2, 3, 3, data).unwrap();
        let (a, _) = gap(&t);
        let (b, _) = gap(&u);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let t = random_tensor(&mut rng, 2, 3, 2, 4);
        let probe = Matrix::from_vec(2, 3, random_vec(&mut rng, 6)).unwrap();
        let (_, cache) = gap(&t);
        let g = gap_backward(&probe, &cache).unwrap();
        let num = numeric_grad(t.data(), 1e-4, |x| {
            let (m, _) = gap(&Tensor4::from_vec(2, 3, 2, 4, x.to_vec()).unwrap());
            m.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        });
        assert!(max_rel_err(g.data(), &num) < 1e-3);
    }
}
