//! Run directories.
//!
//! ```text
//! <run>/config.json        effective configuration (model kind, hyperparameters, split)
//! <run>/splits.json        dataset image names and the train/val/test index lists
//! <run>/epochs.csv         per-epoch log (LMFCN and CNN baseline)
//! <run>/epochs_class<k>.csv  per-sub-problem logs (multiclass)
//! <run>/fcn.ckpt           network checkpoint (fcn_<k>.ckpt for multiclass)
//! <run>/classifier.json    discriminant and the training representation it needs
//! <run>/metrics.json       evaluation report on the three splits
//! ```
//!
//! A run is assembled in a hidden sibling directory and renamed into place
//! when complete. An existing run directory is never written to.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitIndices};
use crate::error::{Error, Result};
use crate::fcn::{read_checkpoint, write_checkpoint, FcnParams};
use crate::metrics::SplitReport;
use crate::nn::FcHead;
use crate::svm::{MulticlassSvm, SvmModel};
use crate::tensor::Matrix;
use crate::trainer::{
    evaluate, Classifier, CnnModel, EpochRecord, Hyperparams, LbpModel, MulticlassModel, TrainedModel,
};

pub const CONFIG_FILE: &str = "config.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const CLASSIFIER_FILE: &str = "classifier.json";
pub const METRICS_FILE: &str = "metrics.json";

pub fn fcn_file(class: Option<usize>) -> String {
    class.map_or_else(|| "fcn.ckpt".to_string(), |k| format!("fcn_{k}.ckpt"))
}

pub fn class_epochs_file(class: usize) -> String {
    format!("epochs_class{class}.csv")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Lmfcn,
    Multiclass,
    CnnBaseline,
    LbpBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kind: ModelKind,
    pub hyperparams: Hyperparams,
    /// Train, validation and test shares.
    pub split: [f64; 3],
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSplits {
    pub names: Vec<String>,
    pub indices: SplitIndices,
}

/// Evaluation summary. Contains no paths or timestamps, so evaluating the same
/// model on the same data always produces the same bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: ModelKind,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    pub version: String,
    pub class_names: Vec<String>,
    pub splits: Vec<SplitReport>,
}

impl EvalReport {
    pub fn split(&self, name: &str) -> Option<&SplitReport> {
        self.splits.iter().find(|s| s.split == name)
    }
}

pub enum SavedModel {
    Lmfcn(TrainedModel),
    Multiclass(MulticlassModel),
    Cnn(CnnModel),
    Lbp(LbpModel),
}

impl SavedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            SavedModel::Lmfcn(_) => ModelKind::Lmfcn,
            SavedModel::Multiclass(_) => ModelKind::Multiclass,
            SavedModel::Cnn(_) => ModelKind::CnnBaseline,
            SavedModel::Lbp(_) => ModelKind::LbpBaseline,
        }
    }

    pub fn classifier(&self) -> &dyn Classifier {
        match self {
            SavedModel::Lmfcn(m) => m,
            SavedModel::Multiclass(m) => m,
            SavedModel::Cnn(m) => m,
            SavedModel::Lbp(m) => m,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum ClassifierFile {
    Lmfcn {
        best_epoch: usize,
        svm: SvmModel,
        train_latents: Matrix,
    },
    Multiclass {
        sub_best_epochs: Vec<usize>,
        svm: MulticlassSvm,
        train_latents: Matrix,
    },
    CnnBaseline {
        best_epoch: usize,
        head: FcHead,
    },
    LbpBaseline {
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        svm: MulticlassSvm,
        train_features: Matrix,
    },
}

/// Evaluate on whichever of the three splits are nonempty.
pub fn eval_report(
    model: &SavedModel,
    hp: &Hyperparams,
    class_names: &[String],
    splits: &[(&str, &Dataset)],
) -> Result<EvalReport> {
    let splits = splits
        .iter()
        .filter(|(_, d)| !d.is_empty())
        .map(|(name, d)| evaluate(model.classifier(), d, name))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        kind: model.kind(),
        seed: hp.seed,
        hyperparams: hp.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        class_names: class_names.to_vec(),
        splits,
    })
}

/// Appends epoch records to a CSV file, flushing after every row.
pub struct EpochLog {
    writer: csv::Writer<File>,
}

impl EpochLog {
    pub fn append(&mut self, record: &EpochRecord) -> Result<()> {
        self.writer.serialize(record)?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn read_epochs(path: &Path) -> Result<Vec<EpochRecord>> {
    csv::Reader::from_path(path)?.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Hidden sibling of `target` used while it is being assembled.
fn staging_path(target: &Path) -> Result<PathBuf> {
    let name = target
        .file_name()
        .ok_or_else(|| Error::Data(format!("{} is not a directory name", target.display())))?;
    Ok(target.with_file_name(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id())))
}

/// Builds a directory next to its destination and moves it into place on
/// [`finish`](Self::finish). Dropped without finishing, it deletes itself.
pub struct StagedDir {
    target: PathBuf,
    staging: PathBuf,
    done: bool,
}

impl StagedDir {
    pub fn create(target: &Path) -> Result<Self> {
        if target.exists() {
            return Err(Error::Data(format!("{} already exists; refusing to overwrite it", target.display())));
        }
        if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let staging = staging_path(target)?;
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging)?;
        Ok(Self {
            target: target.to_path_buf(),
            staging,
            done: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        write_json_file(&self.staging.join(name), value)
    }

    pub fn write_checkpoint(&self, name: &str, params: &FcnParams) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.staging.join(name))?);
        write_checkpoint(&mut w, params)?;
        w.flush()?;
        Ok(())
    }

    pub fn epoch_log(&self, name: &str) -> Result<EpochLog> {
        Ok(EpochLog {
            writer: csv::Writer::from_path(self.staging.join(name))?,
        })
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        if self.target.exists() {
            return Err(Error::Data(format!("{} appeared while the run was in progress", self.target.display())));
        }
        fs::rename(&self.staging, &self.target)?;
        self.done = true;
        Ok(self.target.clone())
    }
}

impl Drop for StagedDir {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

/// Write the model artifacts (not the epoch logs, which are streamed).
pub fn save_model(dir: &StagedDir, model: &SavedModel) -> Result<()> {
    let file = match model {
        SavedModel::Lmfcn(m) => {
            dir.write_checkpoint(&fcn_file(None), &m.fcn)?;
            ClassifierFile::Lmfcn {
                best_epoch: m.best_epoch,
                svm: m.svm.clone(),
                train_latents: m.train_latents.clone(),
            }
        }
        SavedModel::Multiclass(m) => {
            for (k, f) in m.fcns.iter().enumerate() {
                dir.write_checkpoint(&fcn_file(Some(k)), f)?;
            }
            ClassifierFile::Multiclass {
                sub_best_epochs: m.sub_best_epochs.clone(),
                svm: m.svm.clone(),
                train_latents: m.train_latents.clone(),
            }
        }
        SavedModel::Cnn(m) => {
            dir.write_checkpoint(&fcn_file(None), &m.fcn)?;
            ClassifierFile::CnnBaseline {
                best_epoch: m.best_epoch,
                head: m.head.clone(),
            }
        }
        SavedModel::Lbp(m) => ClassifierFile::LbpBaseline {
            mean: m.mean.clone(),
            inv_std: m.inv_std.clone(),
            svm: m.svm.clone(),
            train_features: m.train_features.clone(),
        },
    };
    dir.write_json(CLASSIFIER_FILE, &file)
}

fn load_fcn(path: &Path) -> Result<FcnParams> {
    let file = File::open(path).map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    read_checkpoint(BufReader::new(file))
}

/// Load a finished run: its configuration, splits and model.
pub fn load_run(dir: &Path) -> Result<(RunConfig, RunSplits, SavedModel)> {
    let cfg: RunConfig = read_json(&dir.join(CONFIG_FILE))?;
    let splits: RunSplits = read_json(&dir.join(SPLITS_FILE))?;
    let hp = cfg.hyperparams.clone();
    let logged = |name: &str| -> Result<Vec<EpochRecord>> {
        let p = dir.join(name);
        if p.exists() { read_epochs(&p) } else { Ok(Vec::new()) }
    };
    let model = match read_json::<ClassifierFile>(&dir.join(CLASSIFIER_FILE))? {
        ClassifierFile::Lmfcn {
            best_epoch,
            svm,
            train_latents,
        } => SavedModel::Lmfcn(TrainedModel {
            fcn: load_fcn(&dir.join(fcn_file(None)))?,
            svm,
            train_latents,
            hp,
            records: logged(EPOCHS_FILE)?,
            best_epoch,
        }),
        ClassifierFile::Multiclass {
            sub_best_epochs,
            svm,
            train_latents,
        } => {
            let n = svm.n_classes;
            SavedModel::Multiclass(MulticlassModel {
                fcns: (0..n).map(|k| load_fcn(&dir.join(fcn_file(Some(k))))).collect::<Result<_>>()?,
                svm,
                train_latents,
                hp,
                sub_records: (0..n).map(|k| logged(&class_epochs_file(k))).collect::<Result<_>>()?,
                sub_best_epochs,
            })
        }
        ClassifierFile::CnnBaseline { best_epoch, head } => SavedModel::Cnn(CnnModel {
            fcn: load_fcn(&dir.join(fcn_file(None)))?,
            head,
            hp,
            records: logged(EPOCHS_FILE)?,
            best_epoch,
        }),
        ClassifierFile::LbpBaseline {
            mean,
            inv_std,
            svm,
            train_features,
        } => SavedModel::Lbp(LbpModel {
            mean,
            inv_std,
            svm,
            train_features,
        }),
    };
    if model.kind() != cfg.kind {
        return Err(Error::Data("classifier file does not match the run configuration".into()));
    }
    Ok((cfg, splits, model))
}

/// Plot-ready series: one row per epoch.
#[derive(Debug, Serialize)]
struct ReportRow {
    epoch: usize,
    l_sv: f64,
    l_mc: f64,
    l_cc: f64,
    total: f64,
    n_sv: usize,
    train_bacc: f64,
    val_bacc: f64,
}

/// Write `epoch,l_sv,l_mc,l_cc,total,n_sv,train_bacc,val_bacc`.
pub fn write_report<W: Write>(w: W, records: &[EpochRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if records.is_empty() {
        out.write_record(["epoch", "l_sv", "l_mc", "l_cc", "total", "n_sv", "train_bacc", "val_bacc"])?;
    }
    for r in records {
        out.serialize(ReportRow {
            epoch: r.epoch,
            l_sv: r.l_sv,
            l_mc: r.l_mc,
            l_cc: r.l_cc,
            total: r.total,
            n_sv: r.n_sv,
            train_bacc: r.train_bacc,
            val_bacc: r.val_bacc,
        })?;
    }
    out.flush()?;
    Ok(())
}
