use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use occrel::calib::{apply_calibrator, fit_calibrator, write_params, CalibratorKind, FitConfig};
use occrel::io::{emit_reports, loss_csv, metrics_csv, read_dump, write_dump};
use occrel::metrics::{evaluate, evaluate_probs, EvalOptions, MetricReport, UncertaintySource};
use occrel::toynet::{self, Mode, PerturbKind, SceneConfig, ToyNet, TrainConfig};

#[derive(Parser)]
#[command(name = "occrel", version, about = "Reliability evaluation and calibration for voxel occupancy predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum UncertaintyArg {
    /// One minus the confidence of each view.
    Conf,
    /// The dump's per-voxel uncertainty field.
    Sigma,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Hau,
    Dul,
    Mcd,
    Reliocc,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Hau => Mode::Hau,
            ModeArg::Dul => Mode::Dul,
            ModeArg::Mcd => Mode::Mcd,
            ModeArg::Reliocc => Mode::ReliOcc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Temps,
    Diris,
    Metac,
    Depts,
    Reliocc,
}

impl From<KindArg> for CalibratorKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Temps => CalibratorKind::TempS,
            KindArg::Diris => CalibratorKind::DiriS,
            KindArg::Metac => CalibratorKind::MetaC,
            KindArg::Depts => CalibratorKind::DeptS,
            KindArg::Reliocc => CalibratorKind::ReliOcc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PerturbArg {
    FeatureNoise,
    LogitNoise,
    BlockDrop,
}

impl From<PerturbArg> for PerturbKind {
    fn from(k: PerturbArg) -> Self {
        match k {
            PerturbArg::FeatureNoise => PerturbKind::FeatureNoise,
            PerturbArg::LogitNoise => PerturbKind::LogitNoise,
            PerturbArg::BlockDrop => PerturbKind::BlockDrop,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/val/test scenes as dumps.
    GenScenes {
        /// Scene config in TOML; every key is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = toynet::REFERENCE_SEED)]
        seed: u64,
        /// Output directory for train.occd, val.occd, test.occd and scene.toml.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy network and dump its predictions on val and test.
    Train {
        /// Directory written by gen-scenes.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "baseline")]
        mode: ModeArg,
        #[arg(long, default_value_t = TrainConfig::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = TrainConfig::default().batch_size)]
        batch_size: usize,
        #[arg(long, default_value_t = toynet::REFERENCE_SEED)]
        seed: u64,
        #[arg(long)]
        out_model: PathBuf,
        /// Output directory for val.occd, test.occd and loss.csv.
        #[arg(long)]
        out_dump: PathBuf,
    },
    /// Compute metrics of a dump and write metrics.csv.
    Eval {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long, value_enum, default_value = "conf")]
        uncertainty: UncertaintyArg,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit a calibrator on one dump and report on another.
    Calibrate {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        fit_dump: PathBuf,
        #[arg(long)]
        apply_dump: PathBuf,
        #[arg(long)]
        out_params: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = toynet::REFERENCE_SEED)]
        seed: u64,
    },
    /// Write a perturbed copy of a dump.
    Perturb {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long, value_enum)]
        kind: PerturbArg,
        #[arg(long)]
        magnitude: f64,
        #[arg(long, default_value_t = toynet::REFERENCE_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write every CSV and SVG report of a dump.
    Report {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long, value_enum, default_value = "conf")]
        uncertainty: UncertaintyArg,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn source(u: UncertaintyArg) -> UncertaintySource {
    match u {
        UncertaintyArg::Conf => UncertaintySource::OneMinusConfidence,
        UncertaintyArg::Sigma => UncertaintySource::ExplicitSigma,
    }
}

fn load(path: &Path) -> Result<occrel::occ::VoxelBatch> {
    read_dump(path).with_context(|| format!("reading {}", path.display()))
}

fn print_report(r: &MetricReport) {
    for (k, v) in r.rows() {
        match v {
            Some(x) => println!("{k:>14}  {x:.6}"),
            None => println!("{k:>14}  {}", occrel::io::UNDEFINED),
        }
    }
}

fn write_metrics(r: &MetricReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(r))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let opts = EvalOptions::default();
    match cli.command {
        Command::GenScenes { config, seed, out } => {
            let cfg = match config {
                Some(p) => SceneConfig::from_toml(
                    &fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
                )?,
                None => SceneConfig::default(),
            };
            let ds = toynet::generate_scenes(&cfg, seed)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("scene.toml"), cfg.to_toml())?;
            for (name, b) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
                write_dump(b, &out.join(format!("{name}.occd")))?;
                println!("{name}: {} voxels", b.n());
            }
        }
        Command::Train {
            data,
            mode,
            epochs,
            batch_size,
            seed,
            out_model,
            out_dump,
        } => {
            let mode = Mode::from(mode);
            let train = load(&data.join("train.occd"))?;
            let val = load(&data.join("val.occd"))?;
            let test = load(&data.join("test.occd"))?;
            let mut net = ToyNet::new(train.feature_dim, train.num_classes, seed);
            let cfg = TrainConfig {
                epochs,
                batch_size,
                seed,
                ..TrainConfig::default()
            };
            let curve = toynet::train(&mut net, &train, mode, &cfg)?;
            if let Some(parent) = out_model.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            net.save(&out_model)?;
            fs::create_dir_all(&out_dump)?;
            fs::write(out_dump.join("loss.csv"), loss_csv(&curve))?;
            for (name, b) in [("val", &val), ("test", &test)] {
                let d = toynet::predict_dump(&net, b, mode, seed)?;
                write_dump(&d, &out_dump.join(format!("{name}.occd")))?;
            }
            if let Some(last) = curve.last() {
                println!("epoch {} total loss {:.6}", last.epoch, last.loss.total);
            }
        }
        Command::Eval {
            dump,
            uncertainty,
            out_dir,
        } => {
            let b = load(&dump)?;
            let r = evaluate(&b, source(uncertainty), &opts)?;
            write_metrics(&r, &out_dir)?;
            print_report(&r);
        }
        Command::Calibrate {
            kind,
            fit_dump,
            apply_dump,
            out_params,
            out_dir,
            seed,
        } => {
            let fit = load(&fit_dump)?;
            let apply = load(&apply_dump)?;
            let params = fit_calibrator(kind.into(), &fit, &FitConfig { seed, ..FitConfig::default() })?;
            write_params(&out_params, &params)?;
            let probs = apply_calibrator(&params, &apply)?;
            let r = evaluate_probs(&probs, &apply.labels, apply.num_classes, None, &opts)?;
            emit_reports(&r, &out_dir)?;
            print_report(&r);
        }
        Command::Perturb {
            dump,
            kind,
            magnitude,
            seed,
            out,
        } => {
            let b = load(&dump)?;
            write_dump(&toynet::perturb(&b, kind.into(), magnitude, seed)?, &out)?;
        }
        Command::Report {
            dump,
            uncertainty,
            out_dir,
        } => {
            let b = load(&dump)?;
            let r = evaluate(&b, source(uncertainty), &opts)?;
            for p in emit_reports(&r, &out_dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

