//! `depthnet` command-line driver. Data goes to files under `--out`;
//! diagnostics go to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use depthnet::data::{generate_dataset, load_samples, save_samples, write_container, DepthSample, Entry, TensorData};
use depthnet::gradcheck::GRAD_TOL;
use depthnet::model::{infer_flip_averaged, DepthNet, DepthPredictor, ModelConfig};
use depthnet::objective::MetricReport;
use depthnet::probe::{ablation_matrix, bins_probe, erf_extents, format_erf, gradient_suite, zero_width_head, SuiteDims};
use depthnet::train::{evaluate, evaluate_oracle, write_loss_csv, TrainConfig, Trainer};
use depthnet::Scalar;

const PRECISION_VAR: &str = "DEPTHNET_PRECISION";

#[derive(Parser)]
#[command(name = "depthnet", version, about = "Monocular depth estimation on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on generated scenes; writes checkpoint.dten, loss.csv, config.json.
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes report.txt and report.json.
    Eval(EvalArgs),
    /// Predict depth maps; writes depth.dten.
    Infer(InferArgs),
    /// Generate synthetic samples; writes samples.dten.
    Generate(DataArgs),
    /// Verification probes; exit code is nonzero if any check fails.
    Probe(ProbeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn on(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Args, Clone, Debug, Serialize)]
struct DataArgs {
    /// Square input size in pixels; a multiple of 32.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 8)]
    scenes: usize,
    #[arg(long, default_value_t = 1e-3)]
    dmin: f64,
    #[arg(long, default_value_t = 10.0)]
    dmax: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize)]
struct ModelArgs {
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 32)]
    bins: usize,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    glkam: Toggle,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    gbpm: Toggle,
}

impl ModelArgs {
    fn config(&self, data: &DataArgs) -> ModelConfig {
        ModelConfig {
            base_channels: self.channels,
            n_bins: self.bins,
            d_min: data.dmin,
            d_max: data.dmax,
            use_glkam: self.glkam.on(),
            use_gbpm: self.gbpm.on(),
            seed: data.seed,
            ..ModelConfig::default()
        }
        .fit_to_input(data.size, data.size)
    }
}

#[derive(Args, Clone, Debug, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = depthnet::train::DEFAULT_LR_START)]
    lr_start: f64,
    #[arg(long, default_value_t = depthnet::train::DEFAULT_LR_END)]
    lr_end: f64,
    #[arg(long, default_value_t = depthnet::train::DEFAULT_BATCH)]
    batch: usize,
    /// Disable flip, rotation and brightness augmentation.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Args, Clone, Debug, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, required_unless_present = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Read samples from a container instead of generating them.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Average the prediction with the un-mirrored prediction of the mirrored image.
    #[arg(long)]
    flip_average: bool,
    /// Score ground truth against itself.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args, Clone, Debug, Serialize)]
struct InferArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long)]
    flip_average: bool,
}

#[derive(Args, Clone, Debug, Serialize)]
struct ProbeArgs {
    #[command(subcommand)]
    #[serde(skip)]
    which: ProbeKind,
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
    #[arg(long, default_value_t = 0, global = true)]
    seed: u64,
}

#[derive(Subcommand, Clone, Debug)]
enum ProbeKind {
    /// Finite-difference gradient checks of every op and module (64-bit).
    Gradcheck,
    /// Impulse-response extents of the three LKA cascades.
    Erf,
    /// Bin layout of a fresh model on one generated image.
    Bins {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Zero the width MLP output layer first; expects uniform widths.
        #[arg(long)]
        zero_width: bool,
    },
    /// Forward, backward and evaluation for all four module toggles.
    Ablate {
        #[arg(long, default_value_t = 16)]
        channels: usize,
        #[arg(long, default_value_t = 32)]
        bins: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
enum Precision {
    F32,
    F64,
}

fn precision() -> Result<Option<Precision>> {
    match std::env::var(PRECISION_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim() {
            "32" => Ok(Some(Precision::F32)),
            "64" => Ok(Some(Precision::F64)),
            other => bail!("{PRECISION_VAR} must be 32 or 64, got {other:?}"),
        },
    }
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct Echo<'a, A: Serialize> {
    command: &'a str,
    precision: Precision,
    flags: &'a A,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<&'a TrainConfig>,
}

fn samples_for<T: Scalar>(data: &DataArgs, file: Option<&Path>) -> Result<Vec<DepthSample<T>>> {
    match file {
        Some(p) => load_samples(p).with_context(|| format!("reading samples from {}", p.display())),
        None => Ok(generate_dataset(data.seed, data.scenes, data.size, data.size, data.dmin, data.dmax)?),
    }
}

fn train<T: Scalar>(args: &TrainArgs, precision: Precision) -> Result<()> {
    if args.data.scenes == 0 {
        bail!("--scenes must be at least 1");
    }
    if !(args.lr_start > 0.0 && args.lr_end > 0.0) {
        bail!("learning rates must be positive");
    }
    let cfg = args.model.config(&args.data);
    cfg.validate()?;
    cfg.validate_input(args.data.size, args.data.size)?;
    let train = TrainConfig {
        steps: args.steps,
        batch_size: args.batch,
        lr_start: args.lr_start,
        lr_end: args.lr_end,
        augment: (!args.no_augment).then(Default::default),
        seed: args.data.seed,
        ..TrainConfig::default()
    };
    let out = &args.data.out;
    prepare_out(out)?;
    write_json(
        &out.join("config.json"),
        &Echo {
            command: "train",
            precision,
            flags: args,
            model: Some(&cfg),
            train: Some(&train),
        },
    )?;
    let samples = samples_for::<T>(&args.data, None)?;
    let mut trainer = Trainer::new(DepthNet::<T>::new(cfg)?, train);
    let every = (args.steps / 20).max(1);
    let logs = trainer.run(&samples, |l| {
        if l.step % every == 0 || l.step + 1 == args.steps {
            eprintln!("step {:>6}  lr {:.3e}  loss {:.5}", l.step, l.lr, l.loss);
        }
    })?;
    trainer.model.save(out.join("checkpoint.dten"))?;
    write_loss_csv(out.join("loss.csv"), &logs)?;
    eprintln!("wrote {}", out.join("checkpoint.dten").display());
    Ok(())
}

fn write_report(out: &Path, report: &MetricReport) -> Result<()> {
    fs::write(out.join("report.txt"), report.to_key_value())?;
    write_json(&out.join("report.json"), report)
}

fn eval<T: Scalar>(args: &EvalArgs, precision: Precision) -> Result<()> {
    let out = &args.data.out;
    let samples = samples_for::<T>(&args.data, args.samples.as_deref())?;
    let (report, model_cfg) = if args.oracle {
        (evaluate_oracle(&samples)?, None)
    } else {
        let path = args.checkpoint.as_ref().expect("clap requires --checkpoint");
        if !path.exists() {
            bail!("checkpoint {} does not exist", path.display());
        }
        let model = DepthNet::<T>::load(path).with_context(|| format!("loading {}", path.display()))?;
        (evaluate(&model, &samples, args.flip_average)?, Some(model.config))
    };
    prepare_out(out)?;
    write_json(
        &out.join("config.json"),
        &Echo {
            command: "eval",
            precision,
            flags: args,
            model: model_cfg.as_ref(),
            train: None,
        },
    )?;
    write_report(out, &report)?;
    eprint!("{}", report.to_key_value());
    Ok(())
}

fn infer<T: Scalar>(args: &InferArgs, precision: Precision) -> Result<()> {
    let model = DepthNet::<T>::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let samples = samples_for::<T>(&args.data, args.samples.as_deref())?;
    let mut entries = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let depth = if args.flip_average {
            infer_flip_averaged(&model, &s.rgb)?
        } else {
            model.predict(&s.rgb)?
        };
        entries.push(Entry::new(format!("depth{i}"), TensorData::from_tensor(&depth)));
    }
    let out = &args.data.out;
    prepare_out(out)?;
    write_json(
        &out.join("config.json"),
        &Echo {
            command: "infer",
            precision,
            flags: args,
            model: Some(&model.config),
            train: None,
        },
    )?;
    write_container(out.join("depth.dten"), &entries)?;
    eprintln!("wrote {} depth maps to {}", entries.len(), out.join("depth.dten").display());
    Ok(())
}

fn generate(args: &DataArgs) -> Result<()> {
    let samples = samples_for::<f32>(args, None)?;
    prepare_out(&args.out)?;
    save_samples(args.out.join("samples.dten"), &samples)?;
    eprintln!("wrote {} samples to {}", samples.len(), args.out.join("samples.dten").display());
    Ok(())
}

/// Returns the names of failed checks.
fn probe(args: &ProbeArgs, requested: Option<Precision>) -> Result<Vec<String>> {
    prepare_out(&args.out)?;
    let mut failed = Vec::new();
    let mut lines = Vec::new();
    let name = match &args.which {
        ProbeKind::Gradcheck => {
            if requested == Some(Precision::F32) {
                bail!("gradient checks run in 64-bit only; unset {PRECISION_VAR} or set it to 64");
            }
            let reports = gradient_suite(SuiteDims {
                seed: args.seed,
                ..SuiteDims::default()
            })?;
            let mut worst = 0.0f64;
            for r in &reports {
                let ok = r.passed(GRAD_TOL);
                worst = worst.max(r.max_rel_err);
                lines.push(format!(
                    "{} {} max_rel_err={:.3e} checked={} worst={}",
                    if ok { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_rel_err,
                    r.checked,
                    r.worst
                ));
                if !ok {
                    failed.push(format!("gradcheck {}: rel. err {:.3e} > {GRAD_TOL:e} at {}", r.name, r.max_rel_err, r.worst));
                }
            }
            lines.push(format!("max_rel_err={worst:.3e}"));
            "gradcheck"
        }
        ProbeKind::Erf => {
            let e = erf_extents()?;
            lines.push(format_erf(&e));
            if e != [11, 23, 39] {
                failed.push(format!("erf: expected group0: 11, group1: 23, group2: 39, got {}", format_erf(&e)));
            }
            "erf"
        }
        ProbeKind::Bins { model, size, zero_width } => {
            let data = DataArgs {
                size: *size,
                scenes: 1,
                dmin: 1e-3,
                dmax: 10.0,
                seed: args.seed,
                out: args.out.clone(),
            };
            let mut net = DepthNet::<f64>::new(model.config(&data))?;
            if *zero_width {
                zero_width_head(&mut net)?;
            }
            let sample = &samples_for::<f64>(&data, None)?[0];
            match bins_probe(&net, &sample.rgb) {
                Ok(spec) => {
                    lines.push(format!("n_bins={}", spec.len()));
                    lines.push(format!("widths={:?}", spec.widths()));
                    lines.push(format!("centers={:?}", spec.centers()));
                    if *zero_width {
                        let n = spec.len() as f64;
                        let dev = spec.widths().iter().map(|w| (w - 1.0 / n).abs()).fold(0.0, f64::max);
                        lines.push(format!("max_uniform_deviation={dev:.3e}"));
                        if dev > 1e-12 {
                            failed.push(format!("bins: zero width head gives non-uniform widths (dev {dev:.3e})"));
                        }
                    }
                }
                Err(e) => failed.push(format!("bins: {e}")),
            }
            "bins"
        }
        ProbeKind::Ablate { channels, bins, size } => {
            let base = ModelConfig {
                base_channels: *channels,
                n_bins: *bins,
                seed: args.seed,
                ..ModelConfig::default()
            };
            for r in ablation_matrix::<f32>(&base, *size, args.seed)? {
                let ok = r.is_valid(base.d_min, base.d_max);
                lines.push(format!(
                    "{} {} loss={:.5} grad_norm={:.4e} depth=[{:.4}, {:.4}] delta1={:.4} abs_rel={:.4}",
                    if ok { "PASS" } else { "FAIL" },
                    r.label(),
                    r.loss,
                    r.grad_norm,
                    r.depth_min,
                    r.depth_max,
                    r.metrics.delta1,
                    r.metrics.abs_rel
                ));
                if !ok {
                    failed.push(format!("ablate {}: invalid depth range or gradients", r.label()));
                }
            }
            "ablate"
        }
    };
    let text = lines.join("\n") + "\n";
    fs::write(args.out.join(format!("probe_{name}.txt")), &text)?;
    eprint!("{text}");
    Ok(failed)
}

fn run(cli: Cli) -> Result<bool> {
    let requested = precision()?;
    let p = requested.unwrap_or(Precision::F32);
    match &cli.command {
        Command::Train(a) => match p {
            Precision::F32 => train::<f32>(a, p)?,
            Precision::F64 => train::<f64>(a, p)?,
        },
        Command::Eval(a) => match p {
            Precision::F32 => eval::<f32>(a, p)?,
            Precision::F64 => eval::<f64>(a, p)?,
        },
        Command::Infer(a) => match p {
            Precision::F32 => infer::<f32>(a, p)?,
            Precision::F64 => infer::<f64>(a, p)?,
        },
        Command::Generate(a) => generate(a)?,
        Command::Probe(a) => {
            let failed = probe(a, requested)?;
            for f in &failed {
                eprintln!("probe failed: {f}");
            }
            return Ok(failed.is_empty());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
