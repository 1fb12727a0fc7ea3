//! Command-line experiment runner: a manifest drives every stage, each
//! stage writes into one run directory, and finished work is never redone.

pub mod context;
pub mod manifest;
pub mod presets;
pub mod remote;
pub mod report;
pub mod rundir;
pub mod stages;
pub mod studies;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use encodermi::classifiers::ClassifierKind;
use encodermi::contrastive::write_atomic;
use encodermi::eval::BackgroundKnowledge;
use encodermi::{Error, Result};

use crate::context::Ctx;
use crate::manifest::ExperimentManifest;
use crate::presets::Preset;
use crate::studies::{StudyAxis, StudyRequest};

#[derive(Debug, Parser)]
#[command(name = "encodermi", version, about = "Membership inference against contrastive image encoders")]
pub struct Cli {
    /// Experiment manifest (JSON).
    #[arg(long, global = true, default_value = "manifest.json")]
    pub manifest: PathBuf,
    /// Override a manifest field, e.g. `--set trials=2` or
    /// `--set target.pretrain.epochs=100`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for independent jobs (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Keep the finished jobs of an interrupted stage instead of redoing it.
    #[arg(long, global = true)]
    pub resume: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a preset manifest.
    Init {
        #[arg(long, default_value = "desk")]
        preset: String,
        /// Run name (defaults to the preset name).
        #[arg(long)]
        name: Option<String>,
        /// Replace an existing manifest file.
        #[arg(long)]
        force: bool,
    },
    /// Draw and store the record splits.
    PrepareData,
    /// Pre-train the target and every shadow encoder.
    Pretrain,
    /// Compute and cache membership features.
    Extract,
    /// Train the inference classifiers on shadow features.
    TrainAttack,
    /// Evaluate the inference classifiers against the target.
    Evaluate,
    /// Train and evaluate the baseline attacks.
    Baselines,
    /// Run a one-factor study.
    Study(StudyArgs),
    /// Write tables, summaries and plots from existing reports.
    Report,
    /// prepare-data, pretrain, extract, train-attack, evaluate, baselines, report.
    RunAll,
    /// Serve an encoder checkpoint over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8470")]
        bind: String,
        /// Checkpoint to serve (default: the final target checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Bearer token clients must present (or ENCODERMI_TOKEN).
        #[arg(long)]
        token: Option<String>,
    },
    /// Decide membership of local images in a remote encoder's pre-training set.
    AuditRemote(AuditArgs),
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long)]
    pub axis: String,
    /// Comma-separated axis values (default depends on the axis).
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<String>,
    /// Comma-separated methods: vector, set, threshold.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub endpoint: String,
    /// Bearer token (or ENCODERMI_TOKEN).
    #[arg(long)]
    pub token: Option<String>,
    /// Inference classifier file.
    #[arg(long)]
    pub classifier: PathBuf,
    /// Directory of PNG/JPEG images to audit.
    #[arg(long)]
    pub images: PathBuf,
    /// Knowledge setting the classifier was trained under.
    #[arg(long, default_value = "yes-yes-yes")]
    pub knowledge: String,
}

fn parse_kind(s: &str) -> Result<ClassifierKind> {
    ClassifierKind::ALL
        .into_iter()
        .find(|k| k.as_str() == s || k.method_id().eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::InvalidParameter(format!("unknown method `{s}` (vector, set, threshold)")))
}

fn init(cli: &Cli, preset: &str, name: Option<&str>, force: bool) -> Result<()> {
    let preset = Preset::parse(preset)?;
    if cli.manifest.exists() && !force {
        return Err(Error::InvalidParameter(format!(
            "{} already exists (use --force to replace it)",
            cli.manifest.display()
        )));
    }
    let name = name.map(str::to_string).unwrap_or_else(|| format!("{preset:?}").to_lowercase());
    let manifest = preset.manifest(&name).with_overrides(&cli.overrides)?;
    manifest.validate()?;
    write_atomic(&cli.manifest, manifest.to_json().as_bytes())?;
    println!("wrote {}", cli.manifest.display());
    Ok(())
}

pub fn load_manifest(cli: &Cli) -> Result<ExperimentManifest> {
    let manifest = ExperimentManifest::load(&cli.manifest)?.with_overrides(&cli.overrides)?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn run_all(ctx: &Ctx) -> Result<()> {
    stages::prepare_data(ctx)?;
    stages::pretrain(ctx)?;
    stages::extract(ctx)?;
    stages::train_attack(ctx)?;
    stages::evaluate(ctx)?;
    stages::baselines(ctx)?;
    report::report(ctx)?;
    Ok(())
}

/// Executes one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    if let Command::Init { preset, name, force } = &cli.command {
        return init(&cli, preset, name.as_deref(), *force);
    }
    let manifest = load_manifest(&cli)?;
    let ctx = Ctx::new(manifest, cli.resume, cli.workers)?;
    match &cli.command {
        Command::Init { .. } => unreachable!("handled above"),
        Command::PrepareData => drop(stages::prepare_data(&ctx)?),
        Command::Pretrain => drop(stages::pretrain(&ctx)?),
        Command::Extract => drop(stages::extract(&ctx)?),
        Command::TrainAttack => drop(stages::train_attack(&ctx)?),
        Command::Evaluate => drop(stages::evaluate(&ctx)?),
        Command::Baselines => drop(stages::baselines(&ctx)?),
        Command::Report => drop(report::report(&ctx)?),
        Command::RunAll => run_all(&ctx)?,
        Command::Study(args) => {
            let req = StudyRequest {
                axis: args.axis.parse::<StudyAxis>()?,
                values: args.values.clone(),
                methods: args.methods.iter().map(|m| parse_kind(m)).collect::<Result<_>>()?,
            };
            studies::study(&ctx, &req)?;
        }
        Command::Serve { bind, checkpoint, token } => remote::serve(&ctx, bind, checkpoint.as_deref(), token.clone())?,
        Command::AuditRemote(a) => {
            let req = remote::AuditRequest {
                endpoint: a.endpoint.clone(),
                token: a.token.clone(),
                classifier: a.classifier.clone(),
                images: a.images.clone(),
                knowledge: a.knowledge.parse::<BackgroundKnowledge>()?,
            };
            let report = remote::audit_remote(&ctx, &req)?;
            let members = report.decisions.iter().filter(|d| d.member).count();
            println!("{members} of {} images classified as members", report.decisions.len());
        }
    }
    ctx.run.check_orphans(&ctx.manifest)
}
