use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_split, Classifier, EpochRecord, Hyperparams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fcn::{fcn_init, FcnMode, FcnParams};
use crate::metrics::balanced_accuracy;
use crate::nn::{fc_softmax_ce, FcHead, HeadGrads, OptimState, ParamSlot};
use crate::tensor::Image;

/// Stream of the head initialization.
const CNN_STREAM: u64 = 0xC99;

/// The same convolutional stack topped by a softmax layer, trained end to end
/// with cross-entropy.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel {
    pub fcn: FcnParams,
    pub head: FcHead,
    pub hp: Hyperparams,
    /// `l_sv`, `l_mc`, `l_cc` and the set sizes are 0; `total` is the mean
    /// cross-entropy over the epoch's batches.
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl Classifier for CnnModel {
    fn n_classes(&self) -> usize {
        self.head.n_classes
    }

    fn predict_with(&self, exec: Exec, images: &[&Image]) -> Result<Vec<usize>> {
        self.head.predict(&self.fcn.forward_eval_with(exec, images)?)
    }
}

pub fn fit_cnn_baseline(train: &Dataset, val: &Dataset, hp: &Hyperparams) -> Result<CnnModel> {
    fit_cnn_baseline_observed(Exec::default(), train, val, hp, |_| Ok(()))
}

/// Full-dataset epochs: one optimizer step per epoch on the mean cross-entropy
/// over every training image, for up to `hp.cnn_max_epochs` epochs. Batch-norm
/// statistics are taken over consecutive chunks of `hp.cnn_batch` images. Training stops early once validation
/// accuracy is perfect (no later epoch could replace it) or `hp.patience`
/// epochs pass without improvement.
pub fn fit_cnn_baseline_observed(
    exec: Exec,
    train: &Dataset,
    val: &Dataset,
    hp: &Hyperparams,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<CnnModel> {
    hp.validate()?;
    check_split(train, val)?;
    let n_classes = train.n_classes();
    if n_classes < 2 {
        return Err(Error::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(CNN_STREAM);
    let mut fcn = fcn_init(hp.seed, hp.in_channels, hp.phi)?;
    let mut head = FcHead::init(&mut rng, hp.phi, n_classes);
    let mut opt = OptimState::adam(hp.lr);
    let order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::new();
    let mut best: Option<(usize, f64, FcnParams, FcHead)> = None;

    for epoch in 1..=hp.cnn_max_epochs {
        let start = Instant::now();
        let n = train.len() as f64;
        let mut loss = 0.0;
        let mut fg = fcn.zero_grads();
        let mut hg = HeadGrads {
            weight: vec![0.0; head.weight.len()],
            bias: vec![0.0; head.bias.len()],
        };
        for batch in order.chunks(hp.cnn_batch) {
            let images: Vec<&Image> = batch.iter().map(|&i| &train.images[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let (z, tape) = fcn.forward_with(exec, &images, FcnMode::Train)?;
            let (chunk_loss, chunk_hg, mut gz) = fc_softmax_ce(&z, &head, &labels)?;
            if !chunk_loss.is_finite() {
                return Err(Error::NonFinite(format!("cross-entropy at epoch {epoch}")));
            }
            // chunk means become one mean over the whole training set
            let w = batch.len() as f64 / n;
            loss += w * chunk_loss;
            gz.data_mut().iter_mut().for_each(|g| *g *= w);
            fg.accumulate(&fcn.backward_with(exec, &tape, &gz)?);
            hg.weight.iter_mut().zip(&chunk_hg.weight).for_each(|(a, b)| *a += w * b);
            hg.bias.iter_mut().zip(&chunk_hg.bias).for_each(|(a, b)| *a += w * b);
        }
        let mut slots = fcn.slots(&fg);
        slots.push(ParamSlot {
            name: "head.weight",
            value: &mut head.weight,
            grad: &hg.weight,
        });
        slots.push(ParamSlot {
            name: "head.bias",
            value: &mut head.bias,
            grad: &hg.bias,
        });
        opt.step(&mut slots)?;
        let model = CnnModel {
            fcn: fcn.clone(),
            head: head.clone(),
            hp: hp.clone(),
            records: Vec::new(),
            best_epoch: epoch,
        };
        let train_bacc = balanced_accuracy(&train.labels, &model.predict_with(exec, &train.image_refs())?)?;
        let val_bacc = balanced_accuracy(&val.labels, &model.predict_with(exec, &val.image_refs())?)?;
        let mean_loss = loss;
        let record = EpochRecord {
            epoch,
            l_sv: 0.0,
            l_mc: 0.0,
            l_cc: 0.0,
            total: mean_loss,
            n_sv: 0,
            n_q: 0,
            n_r: 0,
            train_bacc,
            val_bacc,
            ms: start.elapsed().as_millis() as u64,
            n_backprop: train.len(),
        };
        log::info!("cnn epoch {epoch}: ce={mean_loss:.5} train={train_bacc:.4} val={val_bacc:.4}");
        on_epoch(&record)?;
        records.push(record);
        if best.as_ref().is_none_or(|b| val_bacc > b.1) {
            best = Some((epoch, val_bacc, fcn.clone(), head.clone()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if val_bacc >= 1.0 || hp.patience.is_some_and(|p| epoch - best_epoch >= p) {
            break;
        }
    }
    let (best_epoch, _, fcn, head) = best.ok_or_else(|| Error::Param("no epoch was run".into()))?;
    Ok(CnnModel {
        fcn,
        head,
        hp: hp.clone(),
        records,
        best_epoch,
    })
}
