//! Training procedures: the binary LMFCN epoch loop, the one-vs-all multiclass
//! procedure, and the CNN and LBP baselines.

mod cnn;
mod hyper;
mod lbp;
mod lmfcn;
mod multiclass;

pub use cnn::{fit_cnn_baseline, fit_cnn_baseline_observed, CnnModel};
pub use hyper::Hyperparams;
pub use lbp::{fit_lbp_baseline, LbpModel};
pub use lmfcn::{fit, fit_observed, EpochRecord, EpochTrace, LmfcnTrainer, TrainedModel};
pub use multiclass::{fit_multiclass, MulticlassModel};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::SplitReport;
use crate::tensor::Image;

pub trait Classifier {
    fn n_classes(&self) -> usize;

    fn predict_with(&self, exec: Exec, images: &[&Image]) -> Result<Vec<usize>>;

    fn predict(&self, images: &[&Image]) -> Result<Vec<usize>> {
        self.predict_with(Exec::default(), images)
    }
}

/// Classify `dataset` and summarize the result under the name `split`.
pub fn evaluate(model: &dyn Classifier, dataset: &Dataset, split: &str) -> Result<SplitReport> {
    if dataset.is_empty() {
        return Err(Error::Data(format!("split `{split}` is empty")));
    }
    if dataset.n_classes() != model.n_classes() {
        return Err(Error::Data(format!(
            "model has {} classes, dataset has {}",
            model.n_classes(),
            dataset.n_classes()
        )));
    }
    let preds = model.predict(&dataset.image_refs())?;
    SplitReport::new(split, &dataset.labels, &preds, model.n_classes())
}

fn check_split(train: &Dataset, val: &Dataset) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation splits must be nonempty".into()));
    }
    if train.n_classes() != val.n_classes() {
        return Err(Error::Data("training and validation class lists differ".into()));
    }
    if train.names.iter().any(|n| val.names.contains(n)) {
        return Err(Error::Data("training and validation splits overlap".into()));
    }
    Ok(())
}
