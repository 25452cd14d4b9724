use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use lmfcn::data::{gen_gaussian_stripes, load_image_dir, split_indices, write_image_dir, Dataset, StripeSpec};
use lmfcn::geometry::GammaRule;
use lmfcn::run::{
    class_epochs_file, eval_report, load_run, read_epochs, read_json, save_model, write_report, EvalReport,
    ModelKind, RunConfig, RunSplits, SavedModel, StagedDir, CONFIG_FILE, EPOCHS_FILE, METRICS_FILE, SPLITS_FILE,
};
use lmfcn::trainer::{
    fit_cnn_baseline_observed, fit_lbp_baseline, fit_multiclass, fit_observed, Hyperparams,
};
use lmfcn::Exec;

#[derive(Parser)]
#[command(name = "lmfcn", version, about = "Large-margin fully convolutional network")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a striped-texture dataset as class directories of PNGs.
    GenData(GenDataArgs),
    /// Train a binary LMFCN.
    Train(TrainArgs),
    /// Train one LMFCN per class and a one-vs-all SVM on their joint latents.
    TrainMulticlass(TrainArgs),
    /// Train the same network with a softmax head and cross-entropy.
    TrainCnnBaseline(TrainArgs),
    /// Fit an SVM on uniform LBP histograms.
    TrainLbpBaseline(TrainArgs),
    /// Evaluate a run on a dataset and emit the report as JSON.
    Eval(EvalArgs),
    /// Convert an epoch log into plot-ready CSV series.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    /// Stripe specification (JSON); defaults to 30° vs 60° stripes.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Class angles in degrees with the default spreads, e.g. `0,45,90`.
    #[arg(long, value_delimiter = ',', conflicts_with = "spec")]
    angles: Option<Vec<f64>>,
    #[arg(long, default_value_t = 200)]
    n_per_class: usize,
    /// Image side in pixels (multiple of 4).
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (one subdirectory of PNGs per class).
    #[arg(long)]
    data: PathBuf,
    /// Run directory to create; must not exist.
    #[arg(long)]
    out: PathBuf,
    /// Hyperparameters as JSON; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train, validation and test shares.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.5, 0.25, 0.25])]
    split: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    phi: Option<usize>,
    /// RBF width: a number, `inverse-dim` or `median`.
    #[arg(long)]
    gamma: Option<GammaRule>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    sv_close: Option<usize>,
    #[arg(long)]
    wr_close: Option<usize>,
    #[arg(long)]
    sh_close: Option<usize>,
    /// Epoch budget (per sub-problem for train-multiclass).
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory or epoch CSV file.
    #[arg(long)]
    run: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("error: invalid arguments"));
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a, ModelKind::Lmfcn),
        Command::TrainMulticlass(a) => train(a, ModelKind::Multiclass),
        Command::TrainCnnBaseline(a) => train(a, ModelKind::CnnBaseline),
        Command::TrainLbpBaseline(a) => train(a, ModelKind::LbpBaseline),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn gen_data(a: GenDataArgs) -> anyhow::Result<()> {
    let spec: StripeSpec = match (&a.spec, &a.angles) {
        (Some(p), _) => read_json(p)?,
        (None, Some(angles)) => StripeSpec::with_angles(angles),
        (None, None) => StripeSpec::default(),
    };
    let dataset = gen_gaussian_stripes(&spec, a.n_per_class, a.size, a.seed)?;
    let staged = StagedDir::create(&a.out)?;
    write_image_dir(&dataset, staged.path())?;
    staged.write_json("stripes.json", &spec)?;
    let out = staged.finish()?;
    println!("{} images in {} classes -> {}", dataset.len(), dataset.n_classes(), out.display());
    Ok(())
}

/// Defaults, then the config file, then flags.
fn hyperparams(a: &TrainArgs, kind: ModelKind) -> anyhow::Result<Hyperparams> {
    let mut hp = match &a.config {
        Some(p) => read_json(p).with_context(|| format!("reading {}", p.display()))?,
        None => Hyperparams::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(if let Some(v) = a.$flag { hp.$field = v; })*};
    }
    set!(seed => seed, phi => phi, gamma => gamma, c => c, sv_close => sv_close, wr_close => wr_close,
        sh_close => sh_close, lr => lr);
    if a.patience.is_some() {
        hp.patience = a.patience;
    }
    if let Some(e) = a.epochs {
        match kind {
            ModelKind::Multiclass => hp.epochs_per_class = e,
            ModelKind::CnnBaseline => hp.cnn_max_epochs = e,
            _ => hp.max_epochs = e,
        }
    }
    Ok(hp)
}

fn train(a: TrainArgs, kind: ModelKind) -> anyhow::Result<()> {
    let mut hp = hyperparams(&a, kind)?;
    let dataset = load_image_dir(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    hp.in_channels = dataset.channels()?;
    hp.validate()?;
    let ratios = (a.split[0], a.split[1], a.split[2]);
    let indices = split_indices(&dataset.labels, ratios, hp.seed)?;
    let (tr, va, te) = (dataset.subset(&indices.train), dataset.subset(&indices.val), dataset.subset(&indices.test));
    if kind == ModelKind::Lmfcn && dataset.n_classes() != 2 {
        bail!("train needs exactly 2 classes, found {}; use train-multiclass", dataset.n_classes());
    }

    let staged = StagedDir::create(&a.out)?;
    let cfg = RunConfig {
        kind,
        hyperparams: hp.clone(),
        split: [ratios.0, ratios.1, ratios.2],
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    staged.write_json(CONFIG_FILE, &cfg)?;
    staged.write_json(
        SPLITS_FILE,
        &RunSplits {
            names: dataset.names.clone(),
            indices,
        },
    )?;

    let exec = Exec::default();
    let model = match kind {
        ModelKind::Lmfcn => {
            let mut log = staged.epoch_log(EPOCHS_FILE)?;
            SavedModel::Lmfcn(fit_observed(exec, &tr, &va, &hp, |r| log.append(r))?)
        }
        ModelKind::CnnBaseline => {
            let mut log = staged.epoch_log(EPOCHS_FILE)?;
            SavedModel::Cnn(fit_cnn_baseline_observed(exec, &tr, &va, &hp, |r| log.append(r))?)
        }
        ModelKind::Multiclass => {
            let m = fit_multiclass(&tr, &va, &hp, dataset.n_classes())?;
            for (k, records) in m.sub_records.iter().enumerate() {
                let mut log = staged.epoch_log(&class_epochs_file(k))?;
                records.iter().try_for_each(|r| log.append(r))?;
            }
            SavedModel::Multiclass(m)
        }
        ModelKind::LbpBaseline => SavedModel::Lbp(fit_lbp_baseline(&tr, &hp.smo(), hp.gamma)?),
    };
    save_model(&staged, &model)?;
    let report = eval_report(&model, &hp, &dataset.class_names, &[("train", &tr), ("val", &va), ("test", &te)])?;
    staged.write_json(METRICS_FILE, &report)?;
    let out = staged.finish()?;
    let summary: Vec<String> = report.splits.iter().map(|s| format!("{} {:.4}", s.split, s.balanced_accuracy)).collect();
    println!("balanced accuracy: {} -> {}", summary.join(", "), out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let (cfg, splits, model) = load_run(&a.run).with_context(|| format!("loading run {}", a.run.display()))?;
    let dataset: Dataset = load_image_dir(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let report: EvalReport = if dataset.names == splits.names {
        let i = &splits.indices;
        let parts = [
            ("train", dataset.subset(&i.train)),
            ("val", dataset.subset(&i.val)),
            ("test", dataset.subset(&i.test)),
        ];
        let refs: Vec<(&str, &Dataset)> = parts.iter().map(|(n, d)| (*n, d)).collect();
        eval_report(&model, &cfg.hyperparams, &dataset.class_names, &refs)?
    } else {
        eval_report(&model, &cfg.hyperparams, &dataset.class_names, &[("all", &dataset)])?
    };
    let mut w = output(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn report(a: ReportArgs) -> anyhow::Result<()> {
    let log = if a.run.is_dir() { a.run.join(EPOCHS_FILE) } else { a.run.clone() };
    let records = read_epochs(&log).with_context(|| format!("reading {}", log.display()))?;
    let mut w = output(a.out.as_deref())?;
    write_report(&mut w, &records)?;
    w.flush()?;
    Ok(())
}
