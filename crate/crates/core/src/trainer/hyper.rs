use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GammaRule;
use crate::nn::DEFAULT_LR;
use crate::svm::{SmoConfig, DEFAULT_C, DEFAULT_TOL};

/// Training configuration shared by the LMFCN and the baselines. Unknown JSON
/// keys are rejected; missing keys take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub sv_close: usize,
    pub wr_close: usize,
    pub sh_close: usize,
    pub gamma: GammaRule,
    pub c: f64,
    pub tol: f64,
    pub lr: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub phi: usize,
    pub in_channels: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// Epoch budget of each binary sub-problem in the multiclass procedure.
    pub epochs_per_class: usize,
    pub cnn_max_epochs: usize,
    /// Images per batch-norm batch inside the baseline's full-dataset step.
    pub cnn_batch: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            sv_close: 5,
            wr_close: 1,
            sh_close: 0,
            gamma: GammaRule::InverseDim,
            c: DEFAULT_C,
            tol: DEFAULT_TOL,
            lr: DEFAULT_LR,
            max_epochs: 20,
            seed: 0,
            phi: 16,
            in_channels: 3,
            patience: None,
            epochs_per_class: 10,
            cnn_max_epochs: 100,
            cnn_batch: 32,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Param(m.to_string()));
        if self.max_epochs == 0 || self.epochs_per_class == 0 || self.cnn_max_epochs == 0 {
            return bad("epoch budgets must be at least 1");
        }
        if self.phi == 0 || self.in_channels == 0 {
            return bad("phi and in_channels must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.c > 0.0 && self.c.is_finite()) || !(self.tol > 0.0) {
            return bad("C and tol must be positive");
        }
        if let GammaRule::Fixed(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad("fixed gamma must be positive");
            }
        }
        if self.cnn_batch == 0 {
            return bad("cnn_batch must be at least 1");
        }
        if self.patience == Some(0) {
            return bad("patience must be at least 1 when set");
        }
        Ok(())
    }

    pub fn smo(&self) -> SmoConfig {
        SmoConfig {
            c: self.c,
            tol: self.tol,
            ..SmoConfig::default()
        }
    }

    pub fn closes(&self) -> (usize, usize, usize) {
        (self.sv_close, self.wr_close, self.sh_close)
    }
}
