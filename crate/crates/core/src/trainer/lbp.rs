use super::Classifier;
use crate::data::{lbp_matrix, Dataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{cross_kernel_with, GammaRule};
use crate::svm::{ova_train, MulticlassSvm, SmoConfig};
use crate::tensor::{Image, Matrix};

/// Uniform-LBP histograms, standardized per bin, classified by a one-vs-all
/// RBF SVM.
#[derive(Clone, Debug, PartialEq)]
pub struct LbpModel {
    pub mean: Vec<f64>,
    /// Reciprocal standard deviation per bin (0 for constant bins).
    pub inv_std: Vec<f64>,
    pub svm: MulticlassSvm,
    pub train_features: Matrix,
}

impl LbpModel {
    pub fn features(&self, exec: Exec, images: &[&Image]) -> Result<Matrix> {
        let mut f = lbp_matrix(exec, images)?;
        standardize(&mut f, &self.mean, &self.inv_std);
        Ok(f)
    }
}

fn standardize(f: &mut Matrix, mean: &[f64], inv_std: &[f64]) {
    for i in 0..f.rows() {
        for ((v, m), s) in f.row_mut(i).iter_mut().zip(mean).zip(inv_std) {
            *v = (*v - m) * s;
        }
    }
}

impl Classifier for LbpModel {
    fn n_classes(&self) -> usize {
        self.svm.n_classes
    }

    fn predict_with(&self, exec: Exec, images: &[&Image]) -> Result<Vec<usize>> {
        let f = self.features(exec, images)?;
        self.svm.predict_block(&cross_kernel_with(exec, &f, &self.train_features, self.svm.gamma)?)
    }
}

pub fn fit_lbp_baseline(train: &Dataset, cfg: &SmoConfig, gamma: GammaRule) -> Result<LbpModel> {
    if train.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    let exec = Exec::default();
    let mut f = lbp_matrix(exec, &train.image_refs())?;
    let (n, dim) = (f.rows() as f64, f.cols());
    let mean: Vec<f64> = (0..dim).map(|j| (0..f.rows()).map(|i| f.get(i, j)).sum::<f64>() / n).collect();
    let inv_std: Vec<f64> = (0..dim)
        .map(|j| {
            let var = (0..f.rows()).map(|i| (f.get(i, j) - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 { 1.0 / var.sqrt() } else { 0.0 }
        })
        .collect();
    standardize(&mut f, &mean, &inv_std);
    let svm = ova_train(&f, &train.labels, train.n_classes(), cfg, gamma)?;
    Ok(LbpModel {
        mean,
        inv_std,
        svm,
        train_features: f,
    })
}
