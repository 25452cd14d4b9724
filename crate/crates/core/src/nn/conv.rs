//! 3x3 convolution, stride 1, zero padding 1, lowered to GEMM through im2col.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::Tensor4;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Instances per work item. Fixed so gradient sums do not depend on the
/// number of threads.
const CHUNK: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub c_in: usize,
    pub c_out: usize,
    /// `c_out x c_in x 3 x 3`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            c_in,
            c_out,
            weight: vec![0.0; c_out * c_in * TAPS],
            bias: vec![0.0; c_out],
        }
    }

    #[inline]
    pub fn fan_in(&self) -> usize {
        self.c_in * TAPS
    }

    fn check(&self, input: &Tensor4) -> Result<()> {
        if input.channels() != self.c_in {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.c_in,
                input.channels()
            )));
        }
        if self.weight.len() != self.c_out * self.c_in * TAPS || self.bias.len() != self.c_out {
            return Err(Error::Shape("conv weight/bias length mismatch".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// The forward input; im2col columns are rebuilt during backward.
#[derive(Clone, Debug)]
pub struct ConvCache {
    input: Tensor4,
}

impl ConvCache {
    pub fn new(input: Tensor4) -> Self {
        Self { input }
    }

    pub fn input(&self) -> &Tensor4 {
        &self.input
    }
}

fn im2col(src: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    debug_assert_eq!(cols.len(), c * TAPS * hw);
    for ch in 0..c {
        let plane = &src[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[((ch * TAPS) + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, d) in dst.iter_mut().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        *d = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src_row[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, dst: &mut [f64]) {
    let hw = h * w;
    dst.fill(0.0);
    for ch in 0..c {
        let plane = &mut dst[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[((ch * TAPS) + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            plane[sy as usize * w + sx as usize] += row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * a(m x k) * b(k x n) + beta * c`, all strides explicit.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index reachable through the given
    // strides; callers pass buffers sized exactly for m, k, n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d(input: &Tensor4, params: &ConvParams) -> Result<(Tensor4, ConvCache)> {
    conv2d_with(Exec::default(), input, params)
}

pub fn conv2d_with(exec: Exec, input: &Tensor4, params: &ConvParams) -> Result<(Tensor4, ConvCache)> {
    let out = conv2d_infer_with(exec, input, params)?;
    Ok((
        out,
        ConvCache {
            input: input.clone(),
        },
    ))
}

/// Forward pass without keeping a cache.
pub fn conv2d_infer_with(exec: Exec, input: &Tensor4, params: &ConvParams) -> Result<Tensor4> {
    params.check(input)?;
    let (n, c_in, h, w) = input.dims();
    let c_out = params.c_out;
    let hw = h * w;
    let k = c_in * TAPS;
    let mut out = Tensor4::zeros(n, c_out, h, w);
    exec.for_each_chunk_mut(out.data_mut(), c_out * hw, |i, dst| {
        let mut cols = vec![0.0; k * hw];
        im2col(input.instance(i), c_in, h, w, &mut cols);
        for (o, plane) in dst.chunks_mut(hw).enumerate() {
            plane.fill(params.bias[o]);
        }
        gemm(c_out, k, hw, &params.weight, (k as isize, 1), &cols, (hw as isize, 1), 1.0, dst);
    });
    Ok(out)
}

pub fn conv2d_backward(
    grad_out: &Tensor4,
    cache: &ConvCache,
    params: &ConvParams,
) -> Result<(Tensor4, ConvGrads)> {
    conv2d_backward_with(Exec::default(), grad_out, cache, params)
}

pub fn conv2d_backward_with(
    exec: Exec,
    grad_out: &Tensor4,
    cache: &ConvCache,
    params: &ConvParams,
) -> Result<(Tensor4, ConvGrads)> {
    let input = &cache.input;
    params.check(input)?;
    let (n, c_in, h, w) = input.dims();
    let c_out = params.c_out;
    if grad_out.dims() != (n, c_out, h, w) {
        return Err(Error::Shape(format!(
            "conv grad_out dims {:?} do not match forward output ({n}, {c_out}, {h}, {w})",
            grad_out.dims()
        )));
    }
    let hw = h * w;
    let k = c_in * TAPS;
    let n_chunks = n.div_ceil(CHUNK);

    let partials = exec.map(n_chunks, |ci| {
        let lo = ci * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let mut gw = vec![0.0; c_out * k];
        let mut gb = vec![0.0; c_out];
        let mut gin = vec![0.0; (hi - lo) * c_in * hw];
        let mut cols = vec![0.0; k * hw];
        let mut gcols = vec![0.0; k * hw];
        for (slot, i) in (lo..hi).enumerate() {
            let go = grad_out.instance(i);
            im2col(input.instance(i), c_in, h, w, &mut cols);
            // dW += dY * cols^T
            gemm(c_out, hw, k, go, (hw as isize, 1), &cols, (1, hw as isize), 1.0, &mut gw);
            for (o, g) in gb.iter_mut().enumerate() {
                *g += go[o * hw..(o + 1) * hw].iter().sum::<f64>();
            }
            // dcols = W^T * dY
            gemm(k, c_out, hw, &params.weight, (1, k as isize), go, (hw as isize, 1), 0.0, &mut gcols);
            col2im(&gcols, c_in, h, w, &mut gin[slot * c_in * hw..(slot + 1) * c_in * hw]);
        }
        (gw, gb, gin)
    });

    let mut grad_w = vec![0.0; c_out * k];
    let mut grad_b = vec![0.0; c_out];
    let mut grad_in = Vec::with_capacity(n * c_in * hw);
    for (gw, gb, gin) in partials {
        grad_w.iter_mut().zip(&gw).for_each(|(a, b)| *a += b);
        grad_b.iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
        grad_in.extend_from_slice(&gin);
    }
    Ok((
        Tensor4::from_vec(n, c_in, h, w, grad_in)?,
        ConvGrads {
            weight: grad_w,
            bias: grad_b,
        },
    ))
}
