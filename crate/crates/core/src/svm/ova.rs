//! One-vs-all multiclass wrapper: one binary RBF SVM per class, all sharing
//! the same training kernel.

use serde::{Deserialize, Serialize};

use super::smo::{smo_train, SmoConfig, SvmModel};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{geometry, GammaRule};
use crate::nn::argmax;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MulticlassSvm {
    pub n_classes: usize,
    pub gamma: f64,
    /// `models[k]` separates class `k` (+1) from the rest (-1).
    pub models: Vec<SvmModel>,
}

/// Train `n_classes` binary SVMs on the RBF kernel of `latents`.
pub fn ova_train(
    latents: &Matrix,
    labels: &[usize],
    n_classes: usize,
    cfg: &SmoConfig,
    gamma: GammaRule,
) -> Result<MulticlassSvm> {
    if n_classes < 2 {
        return Err(Error::Param("one-vs-all needs at least two classes".into()));
    }
    if labels.len() != latents.rows() {
        return Err(Error::Shape("one label per latent row required".into()));
    }
    for k in 0..n_classes {
        if !labels.contains(&k) {
            return Err(Error::Data(format!("class {k} has no training instances")));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Param(format!("label {bad} outside [0, {n_classes})")));
    }
    let geo = geometry(latents, gamma)?;
    let models = Exec::default()
        .map(n_classes, |k| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
            smo_train(&geo.k, &y, cfg, geo.gamma)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(MulticlassSvm {
        n_classes,
        gamma: geo.gamma,
        models,
    })
}

impl MulticlassSvm {
    /// Decision value of every binary model for one kernel row.
    pub fn decisions(&self, k_row: &[f64]) -> Result<Vec<f64>> {
        self.models.iter().map(|m| m.decision(k_row)).collect()
    }

    /// Class with the largest decision value; ties go to the lowest index.
    pub fn predict(&self, k_row: &[f64]) -> Result<usize> {
        Ok(argmax(&self.decisions(k_row)?))
    }

    pub fn predict_block(&self, k: &Matrix) -> Result<Vec<usize>> {
        (0..k.rows()).map(|i| self.predict(k.row(i))).collect()
    }
}

/// Class prediction from per-class decision values, ties to the lowest index.
pub fn ova_predict(decisions: &[f64]) -> usize {
    argmax(decisions)
}
