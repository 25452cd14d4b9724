//! The fully convolutional feature extractor:
//!
//! ```text
//! conv3x3(c -> 64)   BN ReLU   maxpool2     w   x h   -> w/2 x h/2
//! conv3x3(64 -> 128) BN ReLU   maxpool2     w/2 x h/2 -> w/4 x h/4
//! conv3x3(128 -> φ)  BN ReLU   global average pool    -> φ
//! ```
//!
//! Images of different resolutions are grouped and each group runs as its own
//! batch; the pooled latent width is φ regardless of resolution.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{
    batchnorm, batchnorm_backward, batchnorm_calibrate_groups, batchnorm_eval_inplace, conv2d_backward_with,
    conv2d_infer_with, gap, gap_backward, maxpool2, maxpool2_backward, maxpool2_infer, relu_backward,
    relu_inplace, BnCache, BnGrads, BnMode, BnParams, ConvCache, ConvGrads, ConvParams, GapCache, ParamSlot,
    PoolCache, ReluCache,
};
use crate::tensor::{Image, Matrix, Tensor4};

pub const CONV1_CHANNELS: usize = 64;
pub const CONV2_CHANNELS: usize = 128;

/// Images per batch in the cache-free eval pass.
const EVAL_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcnParams {
    pub seed: u64,
    pub in_channels: usize,
    pub phi: usize,
    pub conv1: ConvParams,
    pub bn1: BnParams,
    pub conv2: ConvParams,
    pub bn2: BnParams,
    pub conv3: ConvParams,
    pub bn3: BnParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcnGrads {
    pub conv1: ConvGrads,
    pub bn1: BnGrads,
    pub conv2: ConvGrads,
    pub bn2: BnGrads,
    pub conv3: ConvGrads,
    pub bn3: BnGrads,
}

impl FcnGrads {
    /// Every gradient value in [`FcnParams::trainable_names`] order.
    pub fn flatten(&self) -> Vec<&[f64]> {
        vec![
            &self.conv1.weight,
            &self.conv1.bias,
            &self.bn1.scale,
            &self.bn1.shift,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.bn2.scale,
            &self.bn2.shift,
            &self.conv3.weight,
            &self.conv3.bias,
            &self.bn3.scale,
            &self.bn3.shift,
        ]
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|t| t.iter().all(|&v| v == 0.0))
    }
}

/// Mode of a cached (differentiable) forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FcnMode {
    /// Batch-norm uses batch statistics and updates its running statistics.
    Train,
    /// Batch-norm uses the stored running statistics as constants.
    Eval,
}

fn he_conv(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> ConvParams {
    let mut p = ConvParams::zeros(c_in, c_out);
    let std = (2.0 / p.fan_in() as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    p.weight.iter_mut().for_each(|w| *w = normal.sample(rng));
    p
}

/// He-normal conv weights (std sqrt(2/fan_in)), zero biases, identity BN.
pub fn fcn_init(seed: u64, in_channels: usize, phi: usize) -> Result<FcnParams> {
    if phi == 0 || in_channels == 0 {
        return Err(Error::Param("latent width and input channels must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(FcnParams {
        seed,
        in_channels,
        phi,
        conv1: he_conv(&mut rng, in_channels, CONV1_CHANNELS),
        bn1: BnParams::new(CONV1_CHANNELS),
        conv2: he_conv(&mut rng, CONV1_CHANNELS, CONV2_CHANNELS),
        bn2: BnParams::new(CONV2_CHANNELS),
        conv3: he_conv(&mut rng, CONV2_CHANNELS, phi),
        bn3: BnParams::new(phi),
    })
}

struct GroupTape {
    rows: Vec<usize>,
    conv1: ConvCache,
    bn1: BnCache,
    relu1: ReluCache,
    pool1: PoolCache,
    conv2: ConvCache,
    bn2: BnCache,
    relu2: ReluCache,
    pool2: PoolCache,
    conv3: ConvCache,
    bn3: BnCache,
    relu3: ReluCache,
    gap: GapCache,
}

/// Everything the backward pass needs from one cached forward pass.
pub struct FcnTape {
    n: usize,
    groups: Vec<GroupTape>,
}

impl FcnTape {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Indices of `images` grouped by (channels, height, width), groups in order
/// of first appearance.
fn group_by_size(images: &[&Image]) -> Vec<Vec<usize>> {
    let mut keys: Vec<(usize, usize, usize)> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, img) in images.iter().enumerate() {
        let key = (img.channels, img.height, img.width);
        match keys.iter().position(|k| *k == key) {
            Some(g) => groups[g].push(i),
            None => {
                keys.push(key);
                groups.push(vec![i]);
            }
        }
    }
    groups
}

impl FcnParams {
    pub const TENSOR_NAMES: [&'static str; 18] = [
        "conv1.weight",
        "conv1.bias",
        "bn1.scale",
        "bn1.shift",
        "bn1.running_mean",
        "bn1.running_var",
        "conv2.weight",
        "conv2.bias",
        "bn2.scale",
        "bn2.shift",
        "bn2.running_mean",
        "bn2.running_var",
        "conv3.weight",
        "conv3.bias",
        "bn3.scale",
        "bn3.shift",
        "bn3.running_mean",
        "bn3.running_var",
    ];

    pub fn trainable_names() -> [&'static str; 12] {
        [
            "conv1.weight",
            "conv1.bias",
            "bn1.scale",
            "bn1.shift",
            "conv2.weight",
            "conv2.bias",
            "bn2.scale",
            "bn2.shift",
            "conv3.weight",
            "conv3.bias",
            "bn3.scale",
            "bn3.shift",
        ]
    }

    /// All stored tensors in [`Self::TENSOR_NAMES`] order.
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut v = Vec::with_capacity(18);
        for (conv, bn) in [(&self.conv1, &self.bn1), (&self.conv2, &self.bn2), (&self.conv3, &self.bn3)] {
            v.extend([&conv.weight, &conv.bias, &bn.scale, &bn.shift, &bn.running_mean, &bn.running_var]);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = Vec::with_capacity(18);
        for (conv, bn) in [
            (&mut self.conv1, &mut self.bn1),
            (&mut self.conv2, &mut self.bn2),
            (&mut self.conv3, &mut self.bn3),
        ] {
            v.push(&mut conv.weight);
            v.push(&mut conv.bias);
            v.push(&mut bn.scale);
            v.push(&mut bn.shift);
            v.push(&mut bn.running_mean);
            v.push(&mut bn.running_var);
        }
        v
    }

    /// Trainable tensors paired with their gradients, for the optimizer.
    pub fn slots<'a>(&'a mut self, grads: &'a FcnGrads) -> Vec<ParamSlot<'a>> {
        let names = Self::trainable_names();
        let values: Vec<&mut Vec<f64>> = vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.bn1.scale,
            &mut self.bn1.shift,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.bn2.scale,
            &mut self.bn2.shift,
            &mut self.conv3.weight,
            &mut self.conv3.bias,
            &mut self.bn3.scale,
            &mut self.bn3.shift,
        ];
        values
            .into_iter()
            .zip(grads.flatten())
            .zip(names)
            .map(|((value, grad), name)| ParamSlot {
                name,
                value: value.as_mut_slice(),
                grad,
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_images(&self, images: &[&Image]) -> Result<()> {
        if images.is_empty() {
            return Err(Error::Shape("forward pass over zero images".into()));
        }
        for img in images {
            if img.channels != self.in_channels {
                return Err(Error::Shape(format!(
                    "network expects {} channels, image has {}",
                    self.in_channels, img.channels
                )));
            }
            if img.height < 4 || img.width < 4 {
                return Err(Error::Shape(format!(
                    "images must be at least 4x4, got {}x{}",
                    img.height, img.width
                )));
            }
        }
        Ok(())
    }

    fn scatter(&self, n: usize, parts: Vec<(Vec<usize>, Matrix)>) -> Matrix {
        let mut out = Matrix::zeros(n, self.phi);
        for (rows, m) in parts {
            for (k, &r) in rows.iter().enumerate() {
                out.row_mut(r).copy_from_slice(m.row(k));
            }
        }
        out
    }

    /// Eval-mode latents (running statistics), no caches kept.
    pub fn forward_eval(&self, images: &[&Image]) -> Result<Matrix> {
        self.forward_eval_with(Exec::default(), images)
    }

    pub fn forward_eval_with(&self, exec: Exec, images: &[&Image]) -> Result<Matrix> {
        self.check_images(images)?;
        let mut parts = Vec::new();
        for group in group_by_size(images) {
            for chunk in group.chunks(EVAL_CHUNK) {
                let batch: Vec<&Image> = chunk.iter().map(|&i| images[i]).collect();
                let mut t = Tensor4::from_images(&batch)?;
                for (conv, bn, pool) in [
                    (&self.conv1, &self.bn1, true),
                    (&self.conv2, &self.bn2, true),
                    (&self.conv3, &self.bn3, false),
                ] {
                    t = conv2d_infer_with(exec, &t, conv)?;
                    batchnorm_eval_inplace(&mut t, bn)?;
                    relu_inplace(&mut t);
                    if pool {
                        t = maxpool2_infer(&t)?;
                    }
                }
                parts.push((chunk.to_vec(), gap(&t).0));
            }
        }
        Ok(self.scatter(images.len(), parts))
    }

    /// Set every batch-norm layer's running statistics to the statistics of
    /// `images` (layer by layer, all images jointly) and return the resulting
    /// latents. A later [`forward_eval`](Self::forward_eval) on the same images
    /// reproduces the returned matrix bit for bit.
    pub fn calibrate(&mut self, images: &[&Image]) -> Result<Matrix> {
        self.calibrate_with(Exec::default(), images)
    }

    pub fn calibrate_with(&mut self, exec: Exec, images: &[&Image]) -> Result<Matrix> {
        self.check_images(images)?;
        let groups = group_by_size(images);
        let mut maps: Vec<Tensor4> = groups
            .iter()
            .map(|g| {
                let batch: Vec<&Image> = g.iter().map(|&i| images[i]).collect();
                Tensor4::from_images(&batch)
            })
            .collect::<Result<_>>()?;
        let layers = [
            (&self.conv1, &mut self.bn1, true),
            (&self.conv2, &mut self.bn2, true),
            (&self.conv3, &mut self.bn3, false),
        ];
        for (conv, bn, pool) in layers {
            for m in maps.iter_mut() {
                *m = conv2d_infer_with(exec, m, conv)?;
            }
            batchnorm_calibrate_groups(&mut maps, bn)?;
            for m in maps.iter_mut() {
                relu_inplace(m);
                if pool {
                    *m = maxpool2_infer(m)?;
                }
            }
        }
        let parts = groups
            .into_iter()
            .zip(&maps)
            .map(|(rows, m)| (rows, gap(m).0))
            .collect();
        Ok(self.scatter(images.len(), parts))
    }

    /// Differentiable forward pass. In [`FcnMode::Train`] the batch-norm
    /// running statistics are updated.
    pub fn forward(&mut self, images: &[&Image], mode: FcnMode) -> Result<(Matrix, FcnTape)> {
        self.forward_with(Exec::default(), images, mode)
    }

    pub fn forward_with(&mut self, exec: Exec, images: &[&Image], mode: FcnMode) -> Result<(Matrix, FcnTape)> {
        self.check_images(images)?;
        let bn_mode = match mode {
            FcnMode::Train => BnMode::Train,
            FcnMode::Eval => BnMode::Eval,
        };
        let mut parts = Vec::new();
        let mut tapes = Vec::new();
        for rows in group_by_size(images) {
            let batch: Vec<&Image> = rows.iter().map(|&i| images[i]).collect();
            let x = Tensor4::from_images(&batch)?;

            let y = conv2d_infer_with(exec, &x, &self.conv1)?;
            let conv1 = cache_of(x);
            let (mut y, bn1) = batchnorm(&y, &mut self.bn1, bn_mode)?;
            let relu1 = relu_inplace(&mut y);
            let (x, pool1) = maxpool2(&y)?;

            let y = conv2d_infer_with(exec, &x, &self.conv2)?;
            let conv2 = cache_of(x);
            let (mut y, bn2) = batchnorm(&y, &mut self.bn2, bn_mode)?;
            let relu2 = relu_inplace(&mut y);
            let (x, pool2) = maxpool2(&y)?;

            let y = conv2d_infer_with(exec, &x, &self.conv3)?;
            let conv3 = cache_of(x);
            let (mut y, bn3) = batchnorm(&y, &mut self.bn3, bn_mode)?;
            let relu3 = relu_inplace(&mut y);
            let (latent, gap) = gap(&y);

            parts.push((rows.clone(), latent));
            tapes.push(GroupTape {
                rows,
                conv1,
                bn1,
                relu1,
                pool1,
                conv2,
                bn2,
                relu2,
                pool2,
                conv3,
                bn3,
                relu3,
                gap,
            });
        }
        Ok((
            self.scatter(images.len(), parts),
            FcnTape {
                n: images.len(),
                groups: tapes,
            },
        ))
    }

    /// Parameter gradients given d(loss)/d(latent), one row per image of the
    /// taped forward pass. Gradients of all groups are summed.
    pub fn backward(&self, tape: &FcnTape, latent_grads: &Matrix) -> Result<FcnGrads> {
        self.backward_with(Exec::default(), tape, latent_grads)
    }

    pub fn backward_with(&self, exec: Exec, tape: &FcnTape, latent_grads: &Matrix) -> Result<FcnGrads> {
        if latent_grads.rows() != tape.n || latent_grads.cols() != self.phi {
            return Err(Error::Shape(format!(
                "latent gradients are {}x{}, forward pass produced {}x{}",
                latent_grads.rows(),
                latent_grads.cols(),
                tape.n,
                self.phi
            )));
        }
        let mut total = self.zero_grads();
        for g in &tape.groups {
            let go = latent_grads.select_rows(&g.rows);
            let d = gap_backward(&go, &g.gap)?;
            let d = relu_backward(&d, &g.relu3)?;
            let (d, bn3) = batchnorm_backward(&d, &g.bn3, &self.bn3)?;
            let (d, conv3) = conv2d_backward_with(exec, &d, &g.conv3, &self.conv3)?;
            let d = maxpool2_backward(&d, &g.pool2)?;
            let d = relu_backward(&d, &g.relu2)?;
            let (d, bn2) = batchnorm_backward(&d, &g.bn2, &self.bn2)?;
            let (d, conv2) = conv2d_backward_with(exec, &d, &g.conv2, &self.conv2)?;
            let d = maxpool2_backward(&d, &g.pool1)?;
            let d = relu_backward(&d, &g.relu1)?;
            let (d, bn1) = batchnorm_backward(&d, &g.bn1, &self.bn1)?;
            let (_, conv1) = conv2d_backward_with(exec, &d, &g.conv1, &self.conv1)?;
            let part = FcnGrads {
                conv1,
                bn1,
                conv2,
                bn2,
                conv3,
                bn3,
            };
            total.accumulate(&part);
        }
        Ok(total)
    }

    pub fn zero_grads(&self) -> FcnGrads {
        let conv = |p: &ConvParams| ConvGrads {
            weight: vec![0.0; p.weight.len()],
            bias: vec![0.0; p.bias.len()],
        };
        let bn = |p: &BnParams| BnGrads {
            scale: vec![0.0; p.channels()],
            shift: vec![0.0; p.channels()],
        };
        FcnGrads {
            conv1: conv(&self.conv1),
            bn1: bn(&self.bn1),
            conv2: conv(&self.conv2),
            bn2: bn(&self.bn2),
            conv3: conv(&self.conv3),
            bn3: bn(&self.bn3),
        }
    }
}

impl FcnGrads {
    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &FcnGrads) {
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.conv1.weight, &other.conv1.weight);
        add(&mut self.conv1.bias, &other.conv1.bias);
        add(&mut self.bn1.scale, &other.bn1.scale);
        add(&mut self.bn1.shift, &other.bn1.shift);
        add(&mut self.conv2.weight, &other.conv2.weight);
        add(&mut self.conv2.bias, &other.conv2.bias);
        add(&mut self.bn2.scale, &other.bn2.scale);
        add(&mut self.bn2.shift, &other.bn2.shift);
        add(&mut self.conv3.weight, &other.conv3.weight);
        add(&mut self.conv3.bias, &other.conv3.bias);
        add(&mut self.bn3.scale, &other.bn3.scale);
        add(&mut self.bn3.shift, &other.bn3.shift);
    }
}

fn cache_of(input: Tensor4) -> ConvCache {
    ConvCache::new(input)
}
