//! `suction` subcommands.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use suction_core::dataset::{split, SceneSample, TrainingExample};
use suction_core::evaluation::{evaluate, format_table, EvalConfig, Metric, DEFAULT_THRESHOLDS};
use suction_core::geometry::WorkspaceBounds;
use suction_core::postprocess::{map_from_tensor, process_map, select_suction_point};
use suction_core::synth::SynthConfig;
use suction_core::training::{default_alpha, train, LossConfig, TrainConfig, DEFAULT_BETA, DEFAULT_CLAMP_EPS};
use suction_core::{InputMode, UNet};

use crate::artifacts::{metrics_path, write_pgm, write_raw_f32, MetricsLog};
use crate::{checkpoint, dataset_io, generate_dataset};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "suction", version, about = "Predict suction grasp regions in cluttered bins")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic dataset.
    Synth(SynthArgs),
    /// Train a network on a dataset directory.
    Train(TrainArgs),
    /// Pick a suction point in one scene.
    Predict(PredictArgs),
    /// Score one or more checkpoints on a dataset.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = SynthConfig::default().n_objects)]
    pub objects: usize,
    /// Chance that a depth pixel reads as missing.
    #[arg(long, default_value_t = SynthConfig::default().p_null)]
    pub p_null: f64,
}

/// `auto` or a positive number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Alpha {
    Auto,
    Value(f64),
}

impl FromStr for Alpha {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Alpha::Auto);
        }
        s.parse::<f64>().map(Alpha::Value).map_err(|e| format!("expected `auto` or a number: {e}"))
    }
}

impl Alpha {
    pub fn resolve(self, mode: InputMode) -> f64 {
        match self {
            Alpha::Auto => default_alpha(mode),
            Alpha::Value(v) => v,
        }
    }
}

fn parse_mode(s: &str) -> Result<InputMode, String> {
    s.parse::<InputMode>().map_err(|e| e.to_string())
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse::<Metric>().map_err(|e| e.to_string())
}

/// Deterministic train/eval partition of a dataset directory.
#[derive(Args, Debug, Clone, Copy)]
pub struct SplitArgs {
    /// Use only one side of a seeded split: the training side for `train`,
    /// the held-out side for `eval`.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: InputMode,
    #[arg(long)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.8)]
    pub decay: f64,
    #[arg(long, default_value_t = 5)]
    pub decay_every: usize,
    #[arg(long, default_value = "auto")]
    pub alpha: Alpha,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Disable random flips and rotations.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    /// Processed map as an 8-bit PGM.
    #[arg(long)]
    pub emit_map: Option<PathBuf>,
    /// Raw network map as little-endian f32.
    #[arg(long)]
    pub emit_raw: Option<PathBuf>,
    #[arg(long)]
    pub no_smooth: bool,
    /// Fail unless the checkpoint expects this input.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<InputMode>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, required = true)]
    pub ckpt: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS)]
    pub thresholds: Vec<f64>,
    #[arg(long, value_parser = parse_metric, default_value = "standard")]
    pub metric: Metric,
    #[arg(long)]
    pub no_smooth: bool,
    /// Also write the table here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth_cmd(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Predict(a) => predict_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

enum Failure {
    /// Bad flag values, detected before any work starts.
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<checkpoint::CheckpointError> for Failure {
    fn from(e: checkpoint::CheckpointError) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<dataset_io::IoError> for Failure {
    fn from(e: dataset_io::IoError) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn synth_cmd(a: &SynthArgs) -> Result<(), Failure> {
    let cfg = SynthConfig { n_objects: a.objects, p_null: a.p_null, ..SynthConfig::default() };
    cfg.validate().map_err(usage)?;
    let skipped = generate_dataset(&a.out, a.count, a.seed, &cfg)?;
    if skipped > 0 {
        eprintln!("warning: {skipped} objects could not be placed and were skipped");
    }
    eprintln!("wrote {} scenes to {}", a.count, a.out.display());
    Ok(())
}

fn check_split(s: &SplitArgs) -> Result<(), Failure> {
    match s.train_fraction {
        Some(f) if !(f > 0.0 && f < 1.0) => Err(usage(format!("--train-fraction {f} is not in (0, 1)"))),
        _ => Ok(()),
    }
}

/// Load, validate and assemble a dataset directory for `mode`. Every bad
/// scene is reported before failing.
pub fn load_examples(data: &Path, mode: InputMode, input_size: usize, split_args: &SplitArgs, train_side: bool) -> anyhow::Result<Vec<TrainingExample>> {
    let scenes = dataset_io::load_dataset(data).map_err(|errors| {
        for e in &errors {
            eprintln!("invalid scene: {e}");
        }
        anyhow!("{} scene(s) in {} failed validation", errors.len(), data.display())
    })?;
    let scenes: Vec<SceneSample> = match split_args.train_fraction {
        Some(f) => {
            let (tr, ev) = split(scenes, f, split_args.split_seed)?;
            if train_side { tr } else { ev }
        }
        None => scenes,
    }
    .into_iter()
    .map(|(_, s)| s)
    .collect();
    let bounds = WorkspaceBounds::default();
    scenes
        .iter()
        .map(|s| s.resampled(input_size).to_example(mode, &bounds).map_err(anyhow::Error::from))
        .collect()
}

fn train_cmd(a: &TrainArgs) -> Result<(), Failure> {
    let tcfg = TrainConfig {
        lr0: a.lr,
        decay: a.decay,
        decay_every: a.decay_every,
        momentum: a.momentum,
        batch_size: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        augment: !a.no_augment,
    };
    tcfg.validate().map_err(usage)?;
    let lcfg = LossConfig::new(a.alpha.resolve(a.mode), a.beta, DEFAULT_CLAMP_EPS).map_err(usage)?;
    check_split(&a.split)?;

    let mut model = UNet::<f32>::new(a.mode, a.seed);
    let examples = load_examples(&a.data, a.mode, model.input_size(), &a.split, true)?;
    if examples.is_empty() {
        return Err(anyhow!("no scenes to train on in {}", a.data.display()).into());
    }
    eprintln!(
        "training {} on {} scenes: alpha {}, beta {}, lr {}, {} epochs",
        a.mode.label(),
        examples.len(),
        lcfg.alpha,
        lcfg.beta,
        tcfg.lr0,
        tcfg.epochs
    );
    let log_path = metrics_path(&a.out);
    let mut log = MetricsLog::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut log_err = None;
    train(&mut model, &examples, &tcfg, &lcfg, |m| {
        eprintln!("epoch {:>4}  lr {:.6}  loss {:.5}  data {:.5}", m.epoch, m.lr, m.mean_loss, m.mean_data_loss);
        if let Err(e) = log.append(m) {
            log_err.get_or_insert(e);
        }
    })
    .context("training failed")?;
    if let Some(e) = log_err {
        return Err(anyhow::Error::new(e).context(format!("writing {}", log_path.display())).into());
    }
    checkpoint::save(&a.out, &model)?;
    Ok(())
}

fn predict_cmd(a: &PredictArgs) -> Result<(), Failure> {
    let model = checkpoint::load(&a.ckpt)?;
    if let Some(m) = a.mode {
        if m != model.mode() {
            return Err(anyhow!(
                "checkpoint {} expects {} input but --mode {} was requested",
                a.ckpt.display(),
                model.mode().label(),
                m
            )
            .into());
        }
    }
    let scene = dataset_io::load_scene(&a.scene)?.resampled(model.input_size());
    let example = scene.to_example(model.mode(), &WorkspaceBounds::default()).map_err(anyhow::Error::from)?;
    let raw = map_from_tensor(&model.predict(&example.input).map_err(anyhow::Error::from)?, 0).map_err(anyhow::Error::from)?;
    if let Some(p) = &a.emit_raw {
        write_raw_f32(p, &raw).with_context(|| format!("writing {}", p.display()))?;
    }
    let map = process_map(&raw, !a.no_smooth);
    if let Some(p) = &a.emit_map {
        write_pgm(p, &map).with_context(|| format!("writing {}", p.display()))?;
    }
    let result = select_suction_point(&map, &scene.depth, &scene.intrinsics).map_err(anyhow::Error::from)?;
    println!("{}", result.to_line());
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<(), Failure> {
    let cfg = EvalConfig { thresholds: a.thresholds.clone(), metric: a.metric, use_gaussian: !a.no_smooth };
    cfg.validate().map_err(usage)?;
    check_split(&a.split)?;
    let mut columns = Vec::with_capacity(a.ckpt.len());
    for path in &a.ckpt {
        let model = checkpoint::load(path)?;
        let examples = load_examples(&a.data, model.mode(), model.input_size(), &a.split, false)?;
        if examples.is_empty() {
            return Err(anyhow!("no scenes to evaluate in {}", a.data.display()).into());
        }
        columns.push(evaluate(&model, &examples, &cfg).with_context(|| format!("evaluating {}", path.display()))?);
    }
    let table = format_table(&cfg.thresholds, &columns);
    print!("{table}");
    if let Some(p) = &a.out {
        fs::write(p, &table).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}
