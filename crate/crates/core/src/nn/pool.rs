//! 2x2 max pooling, stride 2. Odd trailing rows/columns are dropped.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Clone, Debug)]
pub struct PoolCache {
    in_dims: (usize, usize, usize, usize),
    /// Flat input index of the winning element for every output element.
    argmax: Vec<u32>,
}

pub fn maxpool2(input: &Tensor4) -> Result<(Tensor4, PoolCache)> {
    let (n, c, h, w) = input.dims();
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::Shape(format!("cannot 2x2-pool a {h}x{w} map")));
    }
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for x in 0..ow {
                // row-major scan; ties keep the first index
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * x + dx;
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                out.push(src[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok((
        Tensor4::from_vec(n, c, oh, ow, out)?,
        PoolCache {
            in_dims: input.dims(),
            argmax,
        },
    ))
}

/// Forward pass without keeping a cache.
pub fn maxpool2_infer(input: &Tensor4) -> Result<Tensor4> {
    maxpool2(input).map(|(t, _)| t)
}

pub fn maxpool2_backward(grad_out: &Tensor4, cache: &PoolCache) -> Result<Tensor4> {
    if grad_out.data().len() != cache.argmax.len() {
        return Err(Error::Shape("pool grad_out does not match forward output".into()));
    }
    let (n, c, h, w) = cache.in_dims;
    let mut grad = Tensor4::zeros(n, c, h, w);
    let g = grad.data_mut();
    for (&src, &go) in cache.argmax.iter().zip(grad_out.data()) {
        g[src as usize] += go;
    }
    Ok(grad)
}
