//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration or usage,
//! 3 missing upstream artifact under `--stage-only`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::harness::config::RunConfig;
use crate::harness::stages::{self, RunOptions, Stage};

#[derive(Debug, Parser)]
#[command(name = "diffcascade", version, about = "Teacher-student adaptive diffusion sampling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, env = "DIFFCASCADE_CONFIG")]
    pub config: PathBuf,
    /// Override the configured output directory.
    #[arg(long, env = "DIFFCASCADE_OUT")]
    pub out: Option<PathBuf>,
    /// Override the global seed.
    #[arg(long, env = "DIFFCASCADE_SEED")]
    pub seed: Option<u64>,
    /// Single-threaded execution.
    #[arg(long, env = "DIFFCASCADE_DETERMINISTIC")]
    pub deterministic: bool,
    /// Fail instead of re-running stale upstream stages.
    #[arg(long)]
    pub stage_only: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the conditional noise-prediction teacher.
    TrainTeacher(CommonArgs),
    /// Distil the teacher into a consistency student.
    Distill(CommonArgs),
    /// Fit the quality cutoff on student hold-out samples.
    Calibrate(CommonArgs),
    /// Run the adaptive student-then-teacher pipeline.
    RunAdaptive(CommonArgs),
    /// Paired student/teacher comparison and trajectory statistics.
    Analyze(CommonArgs),
    /// Sweep the simulated oracle accuracy.
    SweepOracle(CommonArgs),
    /// Sweep rollback level, teacher steps and percentile.
    SweepBudget(CommonArgs),
    /// Render SVG charts from the tables.
    Plot(CommonArgs),
}

impl Command {
    fn split(&self) -> (Stage, &CommonArgs) {
        match self {
            Command::TrainTeacher(a) => (Stage::TrainTeacher, a),
            Command::Distill(a) => (Stage::Distill, a),
            Command::Calibrate(a) => (Stage::Calibrate, a),
            Command::RunAdaptive(a) => (Stage::RunAdaptive, a),
            Command::Analyze(a) => (Stage::Analyze, a),
            Command::SweepOracle(a) => (Stage::SweepOracle, a),
            Command::SweepBudget(a) => (Stage::SweepBudget, a),
            Command::Plot(a) => (Stage::Plot, a),
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Dependency { .. } => 3,
        _ => 1,
    }
}

/// Parse `args` and run the requested stage; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (stage, common) = cli.command.split();
    let result = RunConfig::load(&common.config).and_then(|mut cfg| {
        if let Some(out) = &common.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        let opts = RunOptions {
            stage_only: common.stage_only,
            deterministic: common.deterministic,
        };
        let out = cfg.out_dir.clone();
        let manifest = stages::run(cfg, stage, opts)?;
        Ok((out, manifest))
    });
    match result {
        Ok((out, manifest)) => {
            for (name, entry) in &manifest.stages {
                println!("{name}: {} artifacts, seed {:#018x}", entry.artifacts.len(), entry.seed);
            }
            println!("{} done; outputs in {}", stage.label(), out.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
