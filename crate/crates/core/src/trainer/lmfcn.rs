use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{check_split, Classifier, Hyperparams};
use crate::anchors::{build_anchor_tables, partition, AnchorTables, InstancePartition};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fcn::{fcn_init, FcnMode, FcnParams};
use crate::geometry::{cross_kernel_with, geometry};
use crate::loss::{loss_cc, loss_mc, loss_sv, total_loss, LossBreakdown};
use crate::metrics::balanced_accuracy;
use crate::nn::OptimState;
use crate::svm::{smo_train, SvmModel};
use crate::tensor::{Image, Matrix};

/// One row of the per-epoch log. Loss terms and set sizes describe the SVM
/// fitted at the start of the epoch, with the losses evaluated on the training
/// latents that SVM was fitted on; accuracies describe the network after the
/// epoch's update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_sv: f64,
    pub l_mc: f64,
    pub l_cc: f64,
    pub total: f64,
    pub n_sv: usize,
    pub n_q: usize,
    pub n_r: usize,
    pub train_bacc: f64,
    pub val_bacc: f64,
    pub ms: u64,
    /// Instances that received gradient.
    #[serde(skip)]
    pub n_backprop: usize,
}

impl EpochRecord {
    pub fn loss(&self, hp: &Hyperparams) -> LossBreakdown {
        total_loss((self.l_sv, self.l_mc, self.l_cc), (self.n_sv, self.n_q, self.n_r), hp.closes())
    }
}

pub(crate) fn binary_y(labels: &[usize]) -> Vec<f64> {
    labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect()
}

pub(crate) fn binary_class(v: f64) -> usize {
    usize::from(v > 0.0)
}

/// Steps 1 to 3 on the current parameters, plus the validation score.
#[derive(Clone, Debug)]
struct Observation {
    params: FcnParams,
    t: Matrix,
    d: Matrix,
    svm: SvmModel,
    preds: Vec<usize>,
    train_bacc: f64,
    val_bacc: f64,
    stamps: [Instant; 3],
}

/// What happened inside the last epoch, for inspection.
#[derive(Clone, Debug)]
pub struct EpochTrace {
    pub partition: InstancePartition,
    pub tables: AnchorTables,
    /// Instances that received gradient, ascending.
    pub selected: Vec<usize>,
    /// Ends of: latents, geometry, SVM, anchors, update.
    pub stage_ends: [Instant; 5],
}

pub struct LmfcnTrainer<'a> {
    exec: Exec,
    hp: Hyperparams,
    train: &'a Dataset,
    val: &'a Dataset,
    params: FcnParams,
    opt: OptimState,
    current: Observation,
    records: Vec<EpochRecord>,
    last_trace: Option<EpochTrace>,
}

impl<'a> LmfcnTrainer<'a> {
    pub fn new(exec: Exec, train: &'a Dataset, val: &'a Dataset, hp: &Hyperparams) -> Result<Self> {
        hp.validate()?;
        check_split(train, val)?;
        if train.n_classes() != 2 || train.labels.iter().any(|&l| l > 1) {
            return Err(Error::Data("binary training needs labels 0 and 1".into()));
        }
        if !train.labels.contains(&0) || !train.labels.contains(&1) {
            return Err(Error::SingleClass);
        }
        let mut params = fcn_init(hp.seed, hp.in_channels, hp.phi)?;
        let current = observe(exec, &mut params, train, val, hp)?;
        Ok(Self {
            exec,
            hp: hp.clone(),
            train,
            val,
            params,
            opt: OptimState::adam(hp.lr),
            current,
            records: Vec::new(),
            last_trace: None,
        })
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn last_trace(&self) -> Option<&EpochTrace> {
        self.last_trace.as_ref()
    }

    /// The current SVM's support vectors (fitted on the current parameters).
    pub fn support_vectors(&self) -> &[usize] {
        &self.current.svm.sv_indices
    }

    /// One full epoch: anchors from the current SVM, the update, then steps 1
    /// to 3 on the updated parameters to score it. A non-finite loss still
    /// logs a record (with NaN losses) before the error is returned.
    pub fn train_epoch(&mut self) -> Result<EpochRecord> {
        let start = Instant::now();
        let epoch = self.records.len() + 1;
        let obs = &self.current;
        let labels = &self.train.labels;

        let part = partition(labels, &obs.preds, &obs.svm.sv_indices)?;
        let tables = build_anchor_tables(&obs.d, &part, labels, &obs.preds, self.hp.closes())?;
        let anchors_done = Instant::now();

        let n = labels.len();
        let mut used = vec![false; n];
        part.s.iter().chain(&part.q).for_each(|&i| used[i] = true);
        part.r.iter().zip(&tables.g).filter(|(_, g)| !g.is_empty()).for_each(|(&i, _)| used[i] = true);
        let selected: Vec<usize> = (0..n).filter(|&i| used[i]).collect();
        let images: Vec<&Image> = selected.iter().map(|&i| &self.train.images[i]).collect();
        let (live, tape) = self.params.forward_with(self.exec, &images, FcnMode::Train)?;
        let pos = |i: usize| selected.binary_search(&i).ok();
        let live_rows = |members: &[usize]| -> Result<Matrix> {
            // instances without anchors contribute nothing; their stored latent stands in
            let rows: Vec<Vec<f64>> = members
                .iter()
                .map(|&i| pos(i).map_or_else(|| obs.t.row(i).to_vec(), |p| live.row(p).to_vec()))
                .collect();
            if rows.is_empty() { Ok(Matrix::zeros(0, obs.t.cols())) } else { Matrix::from_rows(&rows) }
        };

        let terms = live_rows(&part.s).and_then(|ls| {
            let sv = loss_sv(&ls, &obs.t, &tables.a)?;
            let mc = loss_mc(&live_rows(&part.q)?, &obs.t, &tables.m)?;
            let cc = loss_cc(&live_rows(&part.r)?, &obs.t, &tables.g)?;
            Ok((sv, mc, cc))
        });
        let ((l_sv, g_sv), (l_mc, g_mc), (l_cc, g_cc)) = match terms {
            Ok(t) => t,
            Err(e @ Error::NonFinite(_)) => {
                let nan = f64::NAN;
                self.records.push(EpochRecord {
                    epoch,
                    l_sv: nan,
                    l_mc: nan,
                    l_cc: nan,
                    total: nan,
                    n_sv: part.s.len(),
                    n_q: part.q.len(),
                    n_r: part.r.len(),
                    train_bacc: obs.train_bacc,
                    val_bacc: obs.val_bacc,
                    ms: start.elapsed().as_millis() as u64,
                    n_backprop: 0,
                });
                return Err(e);
            }
            Err(e) => return Err(e),
        };

        let mut latent_grads = Matrix::zeros(selected.len(), live.cols());
        for (members, grads) in [(&part.s, &g_sv), (&part.q, &g_mc), (&part.r, &g_cc)] {
            for (row, &i) in members.iter().enumerate() {
                if let Some(p) = pos(i) {
                    latent_grads.row_mut(p).copy_from_slice(grads.row(row));
                }
            }
        }
        let grads = self.params.backward_with(self.exec, &tape, &latent_grads)?;
        self.opt.step(&mut self.params.slots(&grads))?;
        let update_done = Instant::now();

        let stage_ends = [obs.stamps[0], obs.stamps[1], obs.stamps[2], anchors_done, update_done];
        log::debug!("epoch {epoch}: batch-mode loss terms sv {l_sv:.5}, mc {l_mc:.5}, cc {l_cc:.5}");
        // the record scores the stored latents the SVM and the anchors came from
        let stored = |members: &[usize]| obs.t.select_rows(members);
        let logged = (
            loss_sv(&stored(&part.s), &obs.t, &tables.a)?.0,
            loss_mc(&stored(&part.q), &obs.t, &tables.m)?.0,
            loss_cc(&stored(&part.r), &obs.t, &tables.g)?.0,
        );
        let loss = total_loss(logged, (part.s.len(), part.q.len(), part.r.len()), self.hp.closes());
        let next = observe(self.exec, &mut self.params, self.train, self.val, &self.hp)?;
        let record = EpochRecord {
            epoch,
            l_sv: loss.l_sv,
            l_mc: loss.l_mc,
            l_cc: loss.l_cc,
            total: loss.total,
            n_sv: loss.n_s,
            n_q: loss.n_q,
            n_r: loss.n_r,
            train_bacc: next.train_bacc,
            val_bacc: next.val_bacc,
            ms: start.elapsed().as_millis() as u64,
            n_backprop: selected.len(),
        };
        log::info!(
            "epoch {epoch}: L={:.5} (sv {:.5}, mc {:.5}, cc {:.5}) |S|={} |Q|={} |R|={} train={:.4} val={:.4}",
            record.total,
            record.l_sv,
            record.l_mc,
            record.l_cc,
            record.n_sv,
            record.n_q,
            record.n_r,
            record.train_bacc,
            record.val_bacc
        );
        self.current = next;
        self.last_trace = Some(EpochTrace {
            partition: part,
            tables,
            selected,
            stage_ends,
        });
        self.records.push(record.clone());
        Ok(record)
    }
}

/// Steps 1 to 3: calibrated latents of the training set, geometry, SVM.
fn observe(exec: Exec, params: &mut FcnParams, train: &Dataset, val: &Dataset, hp: &Hyperparams) -> Result<Observation> {
    let t = params.calibrate_with(exec, &train.image_refs())?;
    if !t.is_finite() {
        return Err(Error::NonFinite("training latents".into()));
    }
    let latents_done = Instant::now();
    let geo = geometry(&t, hp.gamma)?;
    let geometry_done = Instant::now();
    let svm = smo_train(&geo.k, &binary_y(&train.labels), &hp.smo(), geo.gamma)?;
    let preds: Vec<usize> = svm.predict_block(&geo.k)?.into_iter().map(binary_class).collect();
    let svm_done = Instant::now();
    let train_bacc = balanced_accuracy(&train.labels, &preds)?;
    let val_latents = params.forward_eval_with(exec, &val.image_refs())?;
    let kv = cross_kernel_with(exec, &val_latents, &t, svm.gamma)?;
    let val_preds: Vec<usize> = svm.predict_block(&kv)?.into_iter().map(binary_class).collect();
    let val_bacc = balanced_accuracy(&val.labels, &val_preds)?;
    Ok(Observation {
        params: params.clone(),
        t,
        d: geo.d,
        svm,
        preds,
        train_bacc,
        val_bacc,
        stamps: [latents_done, geometry_done, svm_done],
    })
}

/// The network snapshot with the best validation score, its training latents
/// and the SVM fitted on them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub fcn: FcnParams,
    pub svm: SvmModel,
    pub train_latents: Matrix,
    pub hp: Hyperparams,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainedModel {
    pub fn latents(&self, exec: Exec, images: &[&Image]) -> Result<Matrix> {
        self.fcn.forward_eval_with(exec, images)
    }
}

impl Classifier for TrainedModel {
    fn n_classes(&self) -> usize {
        2
    }

    fn predict_with(&self, exec: Exec, images: &[&Image]) -> Result<Vec<usize>> {
        let z = self.latents(exec, images)?;
        let k = cross_kernel_with(exec, &z, &self.train_latents, self.svm.gamma)?;
        Ok(self.svm.predict_block(&k)?.into_iter().map(binary_class).collect())
    }
}

/// Train for up to `max_epochs` epochs (or until `patience` epochs pass
/// without a validation improvement) and keep the best-validation snapshot.
/// Ties keep the earlier epoch.
pub fn fit(train: &Dataset, val: &Dataset, hp: &Hyperparams) -> Result<TrainedModel> {
    fit_observed(Exec::default(), train, val, hp, |_| Ok(()))
}

/// [`fit`] with a callback after every epoch.
pub fn fit_observed(
    exec: Exec,
    train: &Dataset,
    val: &Dataset,
    hp: &Hyperparams,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainedModel> {
    let mut trainer = LmfcnTrainer::new(exec, train, val, hp)?;
    let mut best: Option<(usize, f64, FcnParams)> = None;
    for _ in 0..hp.max_epochs {
        let record = trainer.train_epoch()?;
        on_epoch(&record)?;
        if best.as_ref().is_none_or(|b| record.val_bacc > b.1) {
            best = Some((record.epoch, record.val_bacc, trainer.current.params.clone()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if hp.patience.is_some_and(|p| record.epoch - best_epoch >= p) {
            log::info!("no validation improvement for {} epochs; stopping", record.epoch - best_epoch);
            break;
        }
    }
    let (best_epoch, _, fcn) = best.ok_or_else(|| Error::Param("no epoch was run".into()))?;
    let train_latents = fcn.forward_eval_with(exec, &train.image_refs())?;
    let geo = geometry(&train_latents, hp.gamma)?;
    let svm = smo_train(&geo.k, &binary_y(&train.labels), &hp.smo(), geo.gamma)?;
    Ok(TrainedModel {
        fcn,
        svm,
        train_latents,
        hp: hp.clone(),
        records: trainer.records.clone(),
        best_epoch,
    })
}
