//! RBF support vector machines on precomputed kernels.

mod ova;
mod smo;

pub use ova::{ova_predict, ova_train, MulticlassSvm};
pub use smo::{
    dual_gradient, dual_objective, max_kkt_violation, smo_train, SmoConfig, SvmModel, DEFAULT_C, DEFAULT_TOL,
    SV_EPS,
};
