use super::{check_split, fit_observed, Classifier, EpochRecord, Hyperparams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fcn::FcnParams;
use crate::geometry::cross_kernel_with;
use crate::svm::{ova_train, MulticlassSvm};
use crate::tensor::{Image, Matrix};

/// One FCN per class (its binary discriminant discarded) and a one-vs-all SVM
/// on the concatenated latents.
#[derive(Clone, Debug, PartialEq)]
pub struct MulticlassModel {
    pub fcns: Vec<FcnParams>,
    pub svm: MulticlassSvm,
    /// `n x (φ · n_classes)`.
    pub train_latents: Matrix,
    pub hp: Hyperparams,
    /// Per-class epoch logs of the binary sub-problems.
    pub sub_records: Vec<Vec<EpochRecord>>,
    pub sub_best_epochs: Vec<usize>,
}

impl MulticlassModel {
    pub fn latents(&self, exec: Exec, images: &[&Image]) -> Result<Matrix> {
        let parts = self.fcns.iter().map(|f| f.forward_eval_with(exec, images)).collect::<Result<Vec<_>>>()?;
        Matrix::hconcat(&parts)
    }
}

impl Classifier for MulticlassModel {
    fn n_classes(&self) -> usize {
        self.svm.n_classes
    }

    fn predict_with(&self, exec: Exec, images: &[&Image]) -> Result<Vec<usize>> {
        let z = self.latents(exec, images)?;
        self.svm.predict_block(&cross_kernel_with(exec, &z, &self.train_latents, self.svm.gamma)?)
    }
}

fn one_vs_rest(d: &Dataset, class: usize) -> Dataset {
    Dataset {
        images: d.images.clone(),
        labels: d.labels.iter().map(|&l| usize::from(l == class)).collect(),
        names: d.names.clone(),
        class_names: vec!["rest".into(), d.class_names[class].clone()],
    }
}

/// Train one binary LMFCN per class for `hp.epochs_per_class` epochs, then an
/// OVA SVM on the concatenated latents of the best snapshots.
pub fn fit_multiclass(train: &Dataset, val: &Dataset, hp: &Hyperparams, n_classes: usize) -> Result<MulticlassModel> {
    hp.validate()?;
    check_split(train, val)?;
    if n_classes < 3 {
        return Err(Error::Param(format!("multiclass training needs at least 3 classes, got {n_classes}")));
    }
    if train.n_classes() != n_classes {
        return Err(Error::Data(format!("dataset has {} classes, expected {n_classes}", train.n_classes())));
    }
    let counts = train.class_counts();
    if let Some(k) = counts.iter().position(|&c| c < 2) {
        return Err(Error::Data(format!("class {k} has {} training instances; at least 2 required", counts[k])));
    }
    let exec = Exec::default();
    let sub_hp = Hyperparams {
        max_epochs: hp.epochs_per_class,
        ..hp.clone()
    };
    let mut fcns = Vec::with_capacity(n_classes);
    let mut sub_records = Vec::with_capacity(n_classes);
    let mut sub_best_epochs = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        log::info!("sub-problem {k}: class `{}` vs rest", train.class_names[k]);
        let hp_k = Hyperparams {
            seed: hp.seed.wrapping_add(k as u64),
            ..sub_hp.clone()
        };
        let m = fit_observed(exec, &one_vs_rest(train, k), &one_vs_rest(val, k), &hp_k, |_| Ok(()))?;
        fcns.push(m.fcn);
        sub_records.push(m.records);
        sub_best_epochs.push(m.best_epoch);
    }
    let parts = fcns
        .iter()
        .map(|f| f.forward_eval_with(exec, &train.image_refs()))
        .collect::<Result<Vec<_>>>()?;
    let train_latents = Matrix::hconcat(&parts)?;
    let svm = ova_train(&train_latents, &train.labels, n_classes, &hp.smo(), hp.gamma)?;
    Ok(MulticlassModel {
        fcns,
        svm,
        train_latents,
        hp: hp.clone(),
        sub_records,
        sub_best_epochs,
    })
}
