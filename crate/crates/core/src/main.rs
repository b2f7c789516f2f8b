use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use eigpool::attribution::{
    eigen_saliency, perturb, EigSelection, PerturbMode, ReluRule, SelectionMode, DEFAULT_PERTURB_LR,
    DEFAULT_PERTURB_STEPS,
};
use eigpool::diagnostics::spectrum_histogram;
use eigpool::export::{write_perturb_csv, write_pgm};
use eigpool::gcp::GcpConfig;
use eigpool::harness::rng::RNG_ALGORITHM;
use eigpool::harness::train::write_sweep_csv;
use eigpool::harness::{
    accuracy, generate, gradcheck, pooled_spectra, train, truncation_sweep, Dataset, DatasetConfig, GradOp,
    SubsetMode, ToyModel, TrainConfig,
};
use eigpool::linalg::save_spm;
use eigpool::{Error, Result};

#[derive(Parser)]
#[command(name = "eigpool", version, about = "Covariance pooling experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare an analytic backward pass with central finite differences.
    Gradcheck {
        /// Operation id, e.g. covariance_backward or gcp_backward_seb.
        #[arg(long)]
        op: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV report path (trial,max_rel_err,pass).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy classifier and write per-epoch metrics.
    Train {
        #[arg(long, value_enum, default_value_t = Toggle::On)]
        seb: Toggle,
        #[arg(long, default_value_t = TrainConfig::default().epochs)]
        epochs: usize,
        /// Keep only the top-k eigenvalues during training.
        #[arg(long)]
        truncate: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Directory for the trained parameters (SPM1 files).
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Accuracy with only a subset of eigenvalues kept at inference.
    Sweep {
        /// Comma-separated subset sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
        #[arg(long, value_enum, default_value_t = CliSubsetMode::Top)]
        subset_mode: CliSubsetMode,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Eigen-selective saliency map of one training sample.
    Attribute {
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, value_enum, default_value_t = CliSelection::All)]
        mode: CliSelection,
        #[arg(long, value_enum, default_value_t = CliRule::Vanilla)]
        rule: CliRule,
        /// Number of large eigenvalues (default: d − signal dimensions).
        #[arg(long)]
        t: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
        /// 8-bit PGM output.
        #[arg(long)]
        out: PathBuf,
        /// Raw map values as SPM1.
        #[arg(long)]
        raw_out: Option<PathBuf>,
    },
    /// Gradient descent on an input towards the l1 or l2 objective.
    Perturb {
        #[arg(long, value_enum)]
        mode: CliPerturbMode,
        #[arg(long, default_value_t = DEFAULT_PERTURB_STEPS)]
        steps: usize,
        #[arg(long, default_value_t = DEFAULT_PERTURB_LR)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Number of large eigenvalues (default: d − signal dimensions).
        #[arg(long)]
        t: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
        /// Loss trace CSV (step,loss).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Final perturbed input as SPM1.
        #[arg(long)]
        image_out: Option<PathBuf>,
    },
    /// log₂ histogram of the pooled covariance spectra of the training set.
    Spectrum {
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Where the model comes from: a saved directory or a fresh seeded training run.
#[derive(Args)]
struct ModelArgs {
    /// Load parameters written by `train --model-out` instead of training.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    seb: Toggle,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliSubsetMode {
    Top,
    FirstPlusSmall,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliSelection {
    Large,
    Small,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliRule {
    Vanilla,
    Deconv,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliPerturbMode {
    L1,
    L2,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn finish(mut w: BufWriter<File>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn datasets(seed: u64) -> Result<(Dataset, Dataset)> {
    Ok(generate(&DatasetConfig::default().with_seed(seed))?.split_validation())
}

fn gcp_config(seb: Toggle) -> GcpConfig {
    GcpConfig::default().with_seb(matches!(seb, Toggle::On))
}

fn obtain_model(args: &ModelArgs, train_set: &Dataset, val_set: &Dataset) -> Result<ToyModel> {
    match &args.model {
        Some(dir) => ToyModel::load(dir),
        None => {
            let tc = TrainConfig { epochs: args.epochs, seed: args.seed, ..TrainConfig::default() };
            Ok(train(train_set, val_set, &gcp_config(args.seb), &tc)?.model)
        }
    }
}

fn default_split(train_set: &Dataset, model: &ToyModel) -> usize {
    model.d().saturating_sub(train_set.config.signal_dims).max(1)
}

fn sample_x(ds: &Dataset, i: usize) -> Result<&eigpool::Mat> {
    ds.samples
        .get(i)
        .map(|s| &s.x)
        .ok_or_else(|| Error::Validation(format!("sample {i} out of range for {} samples", ds.len())))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gradcheck { op, trials, seed, out } => {
            let op: GradOp = op.parse()?;
            let report = gradcheck(op, trials, seed)?;
            if let Some(path) = out {
                let mut w = create(&path)?;
                report.write_csv(&mut w)?;
                finish(w)?;
            }
            let failed = report.trials.iter().filter(|t| !t.pass).count();
            println!(
                "{op}: {} trials, worst relative error {:.3e}, tolerance {:.0e}, {} failed",
                report.trials.len(),
                report.worst(),
                report.tolerance,
                failed
            );
            Ok(report.passed())
        }
        Command::Train { seb, epochs, truncate, seed, out, model_out } => {
            let (train_set, val_set) = datasets(seed)?;
            let cfg = gcp_config(seb).with_truncation(truncate);
            let tc = TrainConfig { epochs, seed, ..TrainConfig::default() };
            let outcome = train(&train_set, &val_set, &cfg, &tc)?;
            let mut w = create(&out)?;
            outcome.report.write_csv(&mut w)?;
            finish(w)?;
            if let Some(dir) = model_out {
                outcome.model.save(dir)?;
            }
            println!(
                "rng {RNG_ALGORITHM}, seed {seed}: final train accuracy {:.4}, validation accuracy {:.4}",
                outcome.report.final_train_accuracy(),
                outcome.report.val_accuracy.last().copied().unwrap_or(f64::NAN)
            );
            Ok(true)
        }
        Command::Sweep { ks, subset_mode, model, out } => {
            let (train_set, val_set) = datasets(model.seed)?;
            let toy = obtain_model(&model, &train_set, &val_set)?;
            let cfg = gcp_config(model.seb);
            let mode = match subset_mode {
                CliSubsetMode::Top => SubsetMode::Top,
                CliSubsetMode::FirstPlusSmall => SubsetMode::FirstPlusSmall,
            };
            let rows = truncation_sweep(&toy, &train_set, &cfg, &ks, mode)?;
            match out {
                Some(path) => {
                    let mut w = create(&path)?;
                    write_sweep_csv(&mut w, mode, &rows)?;
                    finish(w)?;
                }
                None => write_sweep_csv(std::io::stdout().lock(), mode, &rows)?,
            }
            let full = accuracy(&toy, &train_set, &cfg, eigpool::gcp::EigenSubset::All)?;
            eprintln!("untruncated accuracy {full:.4}");
            Ok(true)
        }
        Command::Attribute { sample, mode, rule, t, model, out, raw_out } => {
            let (train_set, val_set) = datasets(model.seed)?;
            let toy = obtain_model(&model, &train_set, &val_set)?;
            let t = t.unwrap_or_else(|| default_split(&train_set, &toy));
            let mode = match mode {
                CliSelection::Large => SelectionMode::Large,
                CliSelection::Small => SelectionMode::Small,
                CliSelection::All => SelectionMode::All,
            };
            let rule = match rule {
                CliRule::Vanilla => ReluRule::Vanilla,
                CliRule::Deconv => ReluRule::DeConv,
            };
            let x = sample_x(&train_set, sample)?;
            let map = eigen_saliency(&toy, x, &gcp_config(model.seb), EigSelection::new(mode, t), rule)?;
            let mut w = create(&out)?;
            write_pgm(&mut w, &map.values)?;
            finish(w)?;
            if let Some(path) = raw_out {
                save_spm(path, &map.values)?;
            }
            Ok(true)
        }
        Command::Perturb { mode, steps, lr, sample, t, model, out, image_out } => {
            let (train_set, val_set) = datasets(model.seed)?;
            let toy = obtain_model(&model, &train_set, &val_set)?;
            let t = t.unwrap_or_else(|| default_split(&train_set, &toy));
            let mode = match mode {
                CliPerturbMode::L1 => PerturbMode::L1,
                CliPerturbMode::L2 => PerturbMode::L2,
            };
            let trace = perturb(&toy, sample_x(&train_set, sample)?, t, mode, steps, lr)?;
            match out {
                Some(path) => {
                    let mut w = create(&path)?;
                    write_perturb_csv(&mut w, &trace)?;
                    finish(w)?;
                }
                None => write_perturb_csv(std::io::stdout().lock(), &trace)?,
            }
            if let Some(path) = image_out {
                save_spm(path, &trace.image)?;
            }
            Ok(true)
        }
        Command::Spectrum { bins, model, out } => {
            let (train_set, val_set) = datasets(model.seed)?;
            let toy = obtain_model(&model, &train_set, &val_set)?;
            let spectra = pooled_spectra(&toy, &train_set, &gcp_config(model.seb))?;
            let hist = spectrum_histogram(&spectra, bins)?;
            let mut w = create(&out)?;
            hist.write_csv(&mut w)?;
            finish(w)?;
            Ok(true)
        }
    }
}
