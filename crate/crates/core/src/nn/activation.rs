use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Positions where the forward input was strictly positive.
#[derive(Clone, Debug)]
pub struct ReluCache {
    mask: Vec<bool>,
}

pub fn relu(input: &Tensor4) -> (Tensor4, ReluCache) {
    let mut out = input.clone();
    let cache = relu_inplace(&mut out);
    (out, cache)
}

pub fn relu_inplace(t: &mut Tensor4) -> ReluCache {
    let mask = t
        .data_mut()
        .iter_mut()
        .map(|x| {
            let on = *x > 0.0;
            if !on {
                *x = 0.0;
            }
            on
        })
        .collect();
    ReluCache { mask }
}

pub fn relu_backward(grad_out: &Tensor4, cache: &ReluCache) -> Result<Tensor4> {
    if grad_out.data().len() != cache.mask.len() {
        return Err(Error::Shape("relu grad_out does not match forward output".into()));
    }
    let mut g = grad_out.clone();
    for (v, &on) in g.data_mut().iter_mut().zip(&cache.mask) {
        if !on {
            *v = 0.0;
        }
    }
    Ok(g)
}
