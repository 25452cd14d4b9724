//! Per-channel batch normalization over (batch, height, width).
//!
//! Variances are the biased (population) estimate, both for normalizing and
//! for the running statistics, so a running state copied from a batch
//! reproduces that batch's normalization exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running statistics move toward them with
    /// [`BN_MOMENTUM`].
    Train,
    /// Running statistics, treated as constants.
    Eval,
    /// Batch statistics; running statistics are replaced by them.
    Calibrate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnParams {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnParams {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnGrads {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Tensor4,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

fn channel_stats(input: &Tensor4) -> (Vec<f64>, Vec<f64>) {
    let (n, c, h, w) = input.dims();
    let hw = h * w;
    let m = (n * hw) as f64;
    let data = input.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for (ch, mu) in mean.iter_mut().enumerate() {
        let mut s = 0.0;
        for b in 0..n {
            s += data[(b * c + ch) * hw..][..hw].iter().sum::<f64>();
        }
        *mu = s / m;
    }
    for (ch, v) in var.iter_mut().enumerate() {
        let mut s = 0.0;
        for b in 0..n {
            s += data[(b * c + ch) * hw..][..hw]
                .iter()
                .map(|x| (x - mean[ch]) * (x - mean[ch]))
                .sum::<f64>();
        }
        *v = s / m;
    }
    (mean, var)
}

/// Resolve the statistics for `mode`, updating running state as needed.
/// Returns (mean, inv_std, uses_batch_stats).
fn resolve(input: &Tensor4, params: &mut BnParams, mode: BnMode) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let c = input.channels();
    if params.channels() != c {
        return Err(Error::Shape(format!(
            "batchnorm has {} channels, input has {c}",
            params.channels()
        )));
    }
    let (mean, var, batch) = match mode {
        BnMode::Eval => (params.running_mean.clone(), params.running_var.clone(), false),
        BnMode::Train => {
            let (mean, var) = channel_stats(input);
            for ch in 0..c {
                params.running_mean[ch] =
                    (1.0 - BN_MOMENTUM) * params.running_mean[ch] + BN_MOMENTUM * mean[ch];
                params.running_var[ch] =
                    (1.0 - BN_MOMENTUM) * params.running_var[ch] + BN_MOMENTUM * var[ch];
            }
            (mean, var, true)
        }
        BnMode::Calibrate => {
            let (mean, var) = channel_stats(input);
            params.running_mean.clone_from(&mean);
            params.running_var.clone_from(&var);
            (mean, var, true)
        }
    };
    let inv_std = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    Ok((mean, inv_std, batch))
}

fn normalize(t: &mut Tensor4, mean: &[f64], inv_std: &[f64]) {
    let (_, c, h, w) = t.dims();
    let hw = h * w;
    for (p, plane) in t.data_mut().chunks_mut(hw).enumerate() {
        let ch = p % c;
        for x in plane {
            *x = (*x - mean[ch]) * inv_std[ch];
        }
    }
}

fn affine(t: &mut Tensor4, scale: &[f64], shift: &[f64]) {
    let (_, c, h, w) = t.dims();
    let hw = h * w;
    for (p, plane) in t.data_mut().chunks_mut(hw).enumerate() {
        let ch = p % c;
        for x in plane {
            *x = *x * scale[ch] + shift[ch];
        }
    }
}

pub fn batchnorm(input: &Tensor4, params: &mut BnParams, mode: BnMode) -> Result<(Tensor4, BnCache)> {
    let (mean, inv_std, batch_stats) = resolve(input, params, mode)?;
    let mut xhat = input.clone();
    normalize(&mut xhat, &mean, &inv_std);
    let mut out = xhat.clone();
    affine(&mut out, &params.scale, &params.shift);
    Ok((
        out,
        BnCache {
            xhat,
            inv_std,
            batch_stats,
        },
    ))
}

/// Eval-mode forward in place; the running statistics are only read.
pub fn batchnorm_eval_inplace(t: &mut Tensor4, params: &BnParams) -> Result<()> {
    if params.channels() != t.channels() {
        return Err(Error::Shape(format!(
            "batchnorm has {} channels, input has {}",
            params.channels(),
            t.channels()
        )));
    }
    let inv_std: Vec<f64> = params.running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    normalize(t, &params.running_mean, &inv_std);
    affine(t, &params.scale, &params.shift);
    Ok(())
}

/// Calibrate-mode forward over several batches that share one set of
/// statistics (e.g. the resolution groups of one dataset), in place.
pub fn batchnorm_calibrate_groups(groups: &mut [Tensor4], params: &mut BnParams) -> Result<()> {
    let c = params.channels();
    if groups.iter().any(|g| g.channels() != c) {
        return Err(Error::Shape("batchnorm channel mismatch across groups".into()));
    }
    let count: usize = groups.iter().map(|g| g.batch() * g.height() * g.width()).sum();
    if count == 0 {
        return Err(Error::Shape("no values to calibrate on".into()));
    }
    let m = count as f64;
    let mut mean = vec![0.0; c];
    for g in groups.iter() {
        let hw = g.height() * g.width();
        for (p, plane) in g.data().chunks(hw).enumerate() {
            mean[p % c] += plane.iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0; c];
    for g in groups.iter() {
        let hw = g.height() * g.width();
        for (p, plane) in g.data().chunks(hw).enumerate() {
            let mu = mean[p % c];
            var[p % c] += plane.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    params.running_mean = mean;
    params.running_var = var;
    for g in groups.iter_mut() {
        batchnorm_eval_inplace(g, params)?;
    }
    Ok(())
}

/// Forward pass in place, without a cache.
pub fn batchnorm_inplace(t: &mut Tensor4, params: &mut BnParams, mode: BnMode) -> Result<()> {
    let (mean, inv_std, _) = resolve(t, params, mode)?;
    normalize(t, &mean, &inv_std);
    affine(t, &params.scale, &params.shift);
    Ok(())
}

pub fn batchnorm_backward(grad_out: &Tensor4, cache: &BnCache, params: &BnParams) -> Result<(Tensor4, BnGrads)> {
    if grad_out.dims() != cache.xhat.dims() {
        return Err(Error::Shape("batchnorm grad_out does not match forward output".into()));
    }
    let (n, c, h, w) = grad_out.dims();
    let hw = h * w;
    let m = (n * hw) as f64;
    let g = grad_out.data();
    let xh = cache.xhat.data();

    let mut gscale = vec![0.0; c];
    let mut gshift = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for k in off..off + hw {
                gscale[ch] += g[k] * xh[k];
                gshift[ch] += g[k];
            }
        }
    }

    let mut grad_in = Tensor4::zeros(n, c, h, w);
    let gi = grad_in.data_mut();
    if cache.batch_stats {
        // dx = inv_std/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)), dxhat = g*scale
        for ch in 0..c {
            let sum_dxhat = gshift[ch] * params.scale[ch];
            let sum_dxhat_xhat = gscale[ch] * params.scale[ch];
            let k0 = cache.inv_std[ch] / m;
            for b in 0..n {
                let off = (b * c + ch) * hw;
                for k in off..off + hw {
                    let dxhat = g[k] * params.scale[ch];
                    gi[k] = k0 * (m * dxhat - sum_dxhat - xh[k] * sum_dxhat_xhat);
                }
            }
        }
    } else {
        for b in 0..n {
            for ch in 0..c {
                let f = params.scale[ch] * cache.inv_std[ch];
                let off = (b * c + ch) * hw;
                for k in off..off + hw {
                    gi[k] = g[k] * f;
                }
            }
        }
    }
    Ok((
        grad_in,
        BnGrads {
            scale: gscale,
            shift: gshift,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{max_rel_err, numeric_grad, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd_check(mode: BnMode, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = random_tensor(&mut rng, 3, 2, 3, 3);
        let mut params = BnParams::new(2);
        params.scale = vec![1.3, -0.6];
        params.shift = vec![0.2, 0.5];
        params.running_mean = vec![0.1, -0.2];
        params.running_var = vec![0.8, 1.7];
        let probe = random_tensor(&mut rng, 3, 2, 3, 3);
        let base = params.clone();
        let loss = |x: &Tensor4, p: &BnParams| -> f64 {
            let mut p = p.clone();
            let (o, _) = batchnorm(x, &mut p, mode).unwrap();
            o.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let mut fwd = base.clone();
        let (_, cache) = batchnorm(&input, &mut fwd, mode).unwrap();
        let (gin, gp) = batchnorm_backward(&probe, &cache, &base).unwrap();

        let num = numeric_grad(input.data(), 1e-4, |x| {
            loss(&Tensor4::from_vec(3, 2, 3, 3, x.to_vec()).unwrap(), &base)
        });
        assert!(max_rel_err(gin.data(), &num) < 1e-3, "{mode:?} input");
        let num = numeric_grad(&base.scale, 1e-4, |s| {
            let mut p = base.clone();
            p.scale = s.to_vec();
            loss(&input, &p)
        });
        assert!(max_rel_err(&gp.scale, &num) < 1e-3, "{mode:?} scale");
        let num = numeric_grad(&base.shift, 1e-4, |s| {
            let mut p = base.clone();
            p.shift = s.to_vec();
            loss(&input, &p)
        });
        assert!(max_rel_err(&gp.shift, &num) < 1e-3, "{mode:?} shift");
    }

    #[test]
    fn gradients_train_mode() {
        fd_check(BnMode::Train, 21);
    }

    #[test]
    fn gradients_eval_mode() {
        fd_check(BnMode::Eval, 22);
    }

    #[test]
    fn standardized_input_passes_through() {
        // two instances, one channel: values symmetric with unit variance
        let v = vec![1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0];
        let t = Tensor4::from_vec(2, 1, 2, 2, v.clone()).unwrap();
        let mut p = BnParams::new(1);
        let (out, _) = batchnorm(&t, &mut p, BnMode::Train).unwrap();
        for (a, b) in out.data().iter().zip(&v) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_input_yields_shift() {
        let t = Tensor4::from_vec(2, 1, 2, 2, vec![3.0; 8]).unwrap();
        let mut p = BnParams::new(1);
        p.shift[0] = 5.0;
        let (out, _) = batchnorm(&t, &mut p, BnMode::Train).unwrap();
        assert!(out.data().iter().all(|&v| (v - 5.0).abs() < 1e-9));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let t = Tensor4::from_vec(1, 1, 1, 2, vec![1.0, 3.0]).unwrap();
        let mut p = BnParams::new(1);
        batchnorm(&t, &mut p, BnMode::Train).unwrap();
        assert!((p.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((p.running_var[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn calibrated_eval_reproduces_batch_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let t = random_tensor(&mut rng, 4, 3, 2, 2);
        let mut p = BnParams::new(3);
        let (a, _) = batchnorm(&t, &mut p, BnMode::Calibrate).unwrap();
        let (b, _) = batchnorm(&t, &mut p, BnMode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn group_calibration_matches_single_batch_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let a = random_tensor(&mut rng, 2, 2, 2, 2);
        let b = random_tensor(&mut rng, 3, 2, 4, 4);
        let mut p = BnParams::new(2);
        let mut groups = vec![a.clone(), b.clone()];
        batchnorm_calibrate_groups(&mut groups, &mut p).unwrap();
        let mut a2 = a.clone();
        batchnorm_eval_inplace(&mut a2, &p).unwrap();
        assert_eq!(groups[0], a2);
        // joint statistics: normalized values have zero mean over all groups
        let total: f64 = groups.iter().flat_map(|g| g.data().iter()).sum();
        assert!(total.abs() < 1e-9);
    }

    #[test]
    fn single_instance_batch_is_permitted() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let t = random_tensor(&mut rng, 1, 2, 3, 3);
        let mut p = BnParams::new(2);
        let (out, _) = batchnorm(&t, &mut p, BnMode::Train).unwrap();
        assert!(out.is_finite());
    }
}
