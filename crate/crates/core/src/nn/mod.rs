//! Layer kernels (forward and backward) and the optimizer.

mod activation;
mod batchnorm;
mod conv;
mod gap;
mod head;
mod optim;
mod pool;
#[cfg(test)]
pub(crate) mod testutil;

pub use activation::{relu, relu_backward, relu_inplace, ReluCache};
pub use batchnorm::{
    batchnorm, batchnorm_backward, batchnorm_calibrate_groups, batchnorm_eval_inplace, batchnorm_inplace, BnCache, BnGrads, BnMode, BnParams, BN_EPS,
    BN_MOMENTUM,
};
pub use conv::{
    conv2d, conv2d_backward, conv2d_backward_with, conv2d_infer_with, conv2d_with, ConvCache,
    ConvGrads, ConvParams, KERNEL,
};
pub use gap::{gap, gap_backward, GapCache};
pub use head::{fc_softmax_ce, FcHead, HeadGrads};
pub(crate) use head::argmax;
pub use optim::{OptimState, ParamSlot, DEFAULT_LR};
pub use pool::{maxpool2, maxpool2_backward, maxpool2_infer, PoolCache};
