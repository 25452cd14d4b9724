use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::Image;

/// Stripe distribution of one class. Angles in degrees, periods in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStripes {
    pub angle_mean: f64,
    pub angle_std: f64,
    pub period_mean: f64,
    pub period_std: f64,
    /// Phase offset drawn uniformly from `[0, phase_jitter)` radians.
    pub phase_jitter: f64,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripeSpec {
    pub classes: Vec<ClassStripes>,
    #[serde(default = "default_channels")]
    pub channels: usize,
}

fn default_channels() -> usize {
    3
}

impl ClassStripes {
    pub fn at_angle(angle: f64) -> Self {
        Self {
            angle_mean: angle,
            angle_std: 5.0,
            period_mean: 8.0,
            period_std: 1.0,
            phase_jitter: 2.0 * PI,
            noise_std: 0.1,
        }
    }
}

impl Default for StripeSpec {
    /// Two classes: 30° and 60° stripes.
    fn default() -> Self {
        Self::with_angles(&[30.0, 60.0])
    }
}

impl StripeSpec {
    pub fn with_angles(angles: &[f64]) -> Self {
        Self {
            classes: angles.iter().map(|&a| ClassStripes::at_angle(a)).collect(),
            channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Param("stripe spec has no classes".into()));
        }
        if self.channels == 0 {
            return Err(Error::Param("stripe spec needs at least one channel".into()));
        }
        for (k, c) in self.classes.iter().enumerate() {
            let stds = [c.angle_std, c.period_std, c.phase_jitter, c.noise_std];
            if stds.iter().any(|s| !s.is_finite() || *s < 0.0) {
                return Err(Error::Param(format!("class {k}: spreads must be finite and nonnegative")));
            }
            if !(c.period_mean > 2.0) || !c.angle_mean.is_finite() {
                return Err(Error::Param(format!("class {k}: period mean must exceed 2 pixels")));
            }
        }
        Ok(())
    }
}

fn render(c: &ClassStripes, channels: usize, size: usize, rng: &mut ChaCha8Rng) -> Image {
    let angle = Normal::new(c.angle_mean, c.angle_std).expect("validated").sample(rng).to_radians();
    // keep the period above the Nyquist limit
    let period = Normal::new(c.period_mean, c.period_std).expect("validated").sample(rng).max(2.0);
    let phase = if c.phase_jitter > 0.0 { rng.random_range(0.0..c.phase_jitter) } else { 0.0 };
    let noise = Normal::new(0.0, c.noise_std).expect("validated");
    let (cos, sin) = (angle.cos(), angle.sin());
    let plane: Vec<f64> = (0..size * size)
        .map(|p| {
            let (y, x) = ((p / size) as f64, (p % size) as f64);
            let s = 0.5 + 0.5 * (2.0 * PI * (x * cos + y * sin) / period + phase).sin();
            let n = if c.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
            (s + n).clamp(0.0, 1.0)
        })
        .collect();
    let data = plane.iter().copied().cycle().take(channels * size * size).collect();
    Image::new(channels, size, size, data).expect("consistent dims")
}

/// `n_per_class` images per class, class-major order. Image `t` draws from its
/// own ChaCha stream, so output does not depend on the execution strategy.
pub fn gen_gaussian_stripes(spec: &StripeSpec, n_per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    gen_gaussian_stripes_with(Exec::default(), spec, n_per_class, size, seed)
}

pub fn gen_gaussian_stripes_with(
    exec: Exec,
    spec: &StripeSpec,
    n_per_class: usize,
    size: usize,
    seed: u64,
) -> Result<Dataset> {
    spec.validate()?;
    if size == 0 || !size.is_multiple_of(4) {
        return Err(Error::Param(format!("image size {size} must be a positive multiple of 4")));
    }
    if n_per_class == 0 {
        return Err(Error::Param("need at least one image per class".into()));
    }
    let n = n_per_class * spec.classes.len();
    let images = exec.map(n, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        render(&spec.classes[t / n_per_class], spec.channels, size, &mut rng)
    });
    let labels = (0..n).map(|t| t / n_per_class).collect();
    let names = (0..n).map(|t| format!("stripes-{seed}-{t:05}")).collect();
    let class_names = spec.classes.iter().map(|c| format!("angle{:03}", c.angle_mean.round() as i64)).collect();
    Dataset::new(images, labels, names, class_names)
}
