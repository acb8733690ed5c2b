//! Command-line workflows around the attribution toolkit: dataset
//! generation, fixture training, single-image attribution, method
//! comparison, and the reconstruction, defense, and sanity diagnostics.
//!
//! Every subcommand writes a `manifest.json` recording the resolved flags,
//! seeds, tool version, and input hashes. Outputs contain no timestamps or
//! other machine state, so rerunning a subcommand with the flags recorded
//! in its manifest reproduces every primary output byte for byte.
//!
//! Exit codes: 0 on success, 1 on runtime errors (reported as one JSON
//! object on stderr), 2 on usage errors (left to clap).

pub mod cmd;
pub mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use fei_core::diagnostics::SuccessRule;
use fei_core::nn::FixtureConfig;
use fei_core::vizio::Split;
use fei_core::{ClipMode, Error, Objective, OptMode, Result};

#[derive(Debug, Parser)]
#[command(
    name = "fei",
    version,
    about = "Fractile-ensemble attribution workflows on the shapes fixture"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a shapes dataset: PGM images, shape masks, dataset JSON.
    GenData(GenDataArgs),
    /// Train the fixture CNN; writes its weights and a training report.
    TrainFixture(TrainFixtureArgs),
    /// Optimize an attribution for one image; writes maps and a JSON sidecar.
    Attribute(AttributeArgs),
    /// Compare attribution methods over a dataset by faithfulness AUC.
    Eval(EvalArgs),
    /// Rebuild an image from seeded noise by ascending a class score.
    Reconstruct(ReconstructArgs),
    /// Attribute an all-black image toward every class under each clip rule.
    Defense(DefenseArgs),
    /// Re-attribute under progressively randomized weights and track rank
    /// agreement with the unperturbed attribution.
    Sanity(SanityArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::TrainFixture(_) => "train-fixture",
            Command::Attribute(_) => "attribute",
            Command::Eval(_) => "eval",
            Command::Reconstruct(_) => "reconstruct",
            Command::Defense(_) => "defense",
            Command::Sanity(_) => "sanity",
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct GenDataArgs {
    /// Dataset seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Number of images to generate.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Dataset split: `train` or `test`.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct TrainFixtureArgs {
    /// Seed for the training and held-out datasets.
    #[arg(long, default_value_t = FixtureConfig::default().dataset_seed)]
    pub dataset_seed: u64,
    /// Seed for weight initialization and batch shuffling.
    #[arg(long, default_value_t = FixtureConfig::default().weight_seed)]
    pub weight_seed: u64,
    /// Training set size.
    #[arg(long, default_value_t = FixtureConfig::default().train_count)]
    pub train_count: usize,
    /// Held-out set size.
    #[arg(long, default_value_t = FixtureConfig::default().test_count)]
    pub test_count: usize,
    /// Training epochs.
    #[arg(long, default_value_t = FixtureConfig::default().epochs)]
    pub epochs: usize,
    /// Minibatch size.
    #[arg(long, default_value_t = FixtureConfig::default().batch_size)]
    pub batch_size: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = FixtureConfig::default().lr)]
    pub lr: f64,
    /// Held-out accuracy the fixture must reach.
    #[arg(long, default_value_t = FixtureConfig::default().accuracy_target)]
    pub accuracy_target: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct AttributeArgs {
    /// Fixture weights file.
    #[arg(long)]
    pub model: PathBuf,
    /// Input image (PGM).
    #[arg(long)]
    pub image: PathBuf,
    /// Target class index, or `predicted` for the model's argmax.
    #[arg(long, default_value = "predicted", value_parser = parse_target)]
    pub target: TargetArg,
    /// Gradient clip rule: none, vm, ivm, avm, or ibm.
    #[arg(long, default_value = "vm", value_parser = parse_clip)]
    pub clip: ClipMode,
    /// Optimization objective: preservation or deletion.
    #[arg(long, default_value = "preservation", value_parser = parse_objective)]
    pub objective: Objective,
    /// Optimizer mode: ensemble, single, or l1.
    #[arg(long, default_value = "ensemble", value_parser = parse_opt_mode)]
    pub mode: OptMode,
    /// Comma-separated keep fractions. Defaults to the descending ensemble
    /// schedule, or to 0.5 in single mode; l1 mode always uses 1.
    #[arg(long, value_parser = parse_fractions)]
    pub fractions: Option<FractionList>,
    /// Optimization iterations per fraction.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Base seed for the optimizer and its reference stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Fixture weights file.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory produced by `gen-data`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated methods. A bare clip rule (`ibm`) runs the full
    /// ensemble; `<clip>-single` and `<clip>-l1` run the ablations.
    #[arg(long, value_parser = parse_methods)]
    pub methods: MethodList,
    /// Number of optimization seeds (runs seeds 1 through N).
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// Optimization iterations per fraction.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Output CSV path; the summary and manifest are written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ReconstructArgs {
    /// Fixture weights file.
    #[arg(long)]
    pub model: PathBuf,
    /// Image whose activation trace clips the ascent (PGM).
    #[arg(long)]
    pub image: PathBuf,
    /// Target class index, or `predicted` for the model's argmax.
    #[arg(long, default_value = "predicted", value_parser = parse_target)]
    pub target: TargetArg,
    /// Gradient clip rule: none, vm, ivm, avm, or ibm.
    #[arg(long, default_value = "vm", value_parser = parse_clip)]
    pub clip: ClipMode,
    /// Ascent iterations; 0 writes the seeded noise unchanged.
    #[arg(long, default_value_t = 300)]
    pub iters: usize,
    /// Ascent step size.
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Seed for the starting noise image.
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct DefenseArgs {
    /// Fixture weights file.
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated clip rules to test.
    #[arg(long, default_value = "none,vm,ivm,avm,ibm", value_parser = parse_clips)]
    pub clips: ClipList,
    /// When an optimization counts as an explanation: `argmax` or
    /// `threshold:P`.
    #[arg(long, default_value = "argmax", value_parser = parse_rule)]
    pub rule: SuccessRule,
    /// Optimization iterations per fraction. Success rates are sensitive to
    /// this budget; the default reuses the attribution schedule's.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Base seed shared across clip rules.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct SanityArgs {
    /// Fixture weights file.
    #[arg(long)]
    pub model: PathBuf,
    /// Input image (PGM).
    #[arg(long)]
    pub image: PathBuf,
    /// Target class index, or `predicted` for the model's argmax.
    #[arg(long, default_value = "predicted", value_parser = parse_target)]
    pub target: TargetArg,
    /// Number of cascading randomization stages (top-down over weighted
    /// layers); stage 0, the untouched model, always runs.
    #[arg(long, default_value_t = 4)]
    pub stages: usize,
    /// Gradient clip rule for the attributions.
    #[arg(long, default_value = "vm", value_parser = parse_clip)]
    pub clip: ClipMode,
    /// Optimization iterations per fraction.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Base seed for attribution and weight randomization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Attribution target: a fixed class or the model's prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetArg {
    Predicted,
    Class(usize),
}

impl fmt::Display for TargetArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetArg::Predicted => write!(f, "predicted"),
            TargetArg::Class(c) => write!(f, "{c}"),
        }
    }
}

/// Comma-separated keep fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionList(pub Vec<f64>);

impl fmt::Display for FractionList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Comma-separated clip rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipList(pub Vec<ClipMode>);

impl fmt::Display for ClipList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.0.iter().map(|c| c.name()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// One method token: a clip rule plus an optimizer mode suffix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodToken {
    pub name: String,
    pub clip: ClipMode,
    pub mode: OptMode,
}

impl FromStr for MethodToken {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<MethodToken, String> {
        let (clip_part, mode) = if let Some(head) = s.strip_suffix("-l1") {
            (head, OptMode::SingleMapL1)
        } else if let Some(head) = s.strip_suffix("-single") {
            (head, OptMode::SingleMapNoArea)
        } else {
            (s, OptMode::Ensemble)
        };
        let clip = ClipMode::parse(clip_part).ok_or_else(|| {
            format!("unknown method `{s}` (expected a clip rule, optionally with a -single or -l1 suffix)")
        })?;
        Ok(MethodToken {
            name: s.to_string(),
            clip,
            mode,
        })
    }
}

/// Comma-separated method tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodList(pub Vec<MethodToken>);

impl fmt::Display for MethodList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.0.iter().map(|m| m.name.as_str()).collect();
        write!(f, "{}", parts.join(","))
    }
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s.to_ascii_lowercase().as_str() {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split `{s}` (expected train or test)")),
    }
}

fn parse_clip(s: &str) -> std::result::Result<ClipMode, String> {
    ClipMode::parse(s)
        .ok_or_else(|| format!("unknown clip rule `{s}` (expected none, vm, ivm, avm, or ibm)"))
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    Objective::parse(s)
        .ok_or_else(|| format!("unknown objective `{s}` (expected preservation or deletion)"))
}

fn parse_opt_mode(s: &str) -> std::result::Result<OptMode, String> {
    OptMode::parse(s).ok_or_else(|| format!("unknown mode `{s}` (expected ensemble, single, or l1)"))
}

fn parse_target(s: &str) -> std::result::Result<TargetArg, String> {
    if s.eq_ignore_ascii_case("predicted") {
        return Ok(TargetArg::Predicted);
    }
    s.parse::<usize>()
        .map(TargetArg::Class)
        .map_err(|_| format!("target must be a class index or `predicted`, got `{s}`"))
}

fn parse_fractions(s: &str) -> std::result::Result<FractionList, String> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|_| format!("bad fraction `{part}` in `{s}`"))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err("need at least one fraction".into());
    }
    Ok(FractionList(out))
}

fn parse_clips(s: &str) -> std::result::Result<ClipList, String> {
    let mut out = Vec::new();
    for part in s.split(',') {
        out.push(parse_clip(part.trim())?);
    }
    Ok(ClipList(out))
}

fn parse_methods(s: &str) -> std::result::Result<MethodList, String> {
    let mut out = Vec::new();
    for part in s.split(',') {
        out.push(part.trim().parse::<MethodToken>()?);
    }
    Ok(MethodList(out))
}

fn parse_rule(s: &str) -> std::result::Result<SuccessRule, String> {
    if s.eq_ignore_ascii_case("argmax") {
        return Ok(SuccessRule::Argmax);
    }
    if let Some(value) = s.strip_prefix("threshold:") {
        let threshold: f64 = value
            .parse()
            .map_err(|_| format!("bad threshold `{value}` in `{s}`"))?;
        if !(0.0..=1.0).contains(&threshold) {
            return Err(format!("threshold must lie in [0, 1], got {threshold}"));
        }
        return Ok(SuccessRule::ProbThreshold { threshold });
    }
    Err(format!(
        "unknown rule `{s}` (expected argmax or threshold:P)"
    ))
}

/// Manifest token for a success rule, matching what `--rule` accepts.
pub fn rule_token(rule: SuccessRule) -> String {
    match rule {
        SuccessRule::Argmax => "argmax".to_string(),
        SuccessRule::ProbThreshold { threshold } => format!("threshold:{threshold}"),
    }
}

/// Caps the global rayon pool when `FEI_THREADS` is set.
pub fn init_threads() -> Result<()> {
    let value = match std::env::var("FEI_THREADS") {
        Ok(value) => value,
        Err(std::env::VarError::NotPresent) => return Ok(()),
        Err(std::env::VarError::NotUnicode(_)) => {
            return Err(Error::InvalidArgument(
                "FEI_THREADS is not valid unicode".into(),
            ))
        }
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "FEI_THREADS must be a positive integer, got `{value}`"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("failed to size the thread pool: {e}")))
}

/// Runs one subcommand to completion.
pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::GenData(args) => cmd::gen_data::run(args),
        Command::TrainFixture(args) => cmd::train_fixture::run(args),
        Command::Attribute(args) => cmd::attribute::run(args),
        Command::Eval(args) => cmd::eval::run(args),
        Command::Reconstruct(args) => cmd::reconstruct::run(args),
        Command::Defense(args) => cmd::defense::run(args),
        Command::Sanity(args) => cmd::sanity::run(args),
    }
}
