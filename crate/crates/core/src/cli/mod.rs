//! Command-line experiment runner.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on an invalid
//! configuration or command line.

mod config;
mod probes;
mod report;
mod run;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{
    ContourProbe, CurvatureProbe, DatasetConfig, ExperimentConfig, InitConfig, InterpolationProbe, ModelConfig,
    ProbeConfig, SharpnessProbe,
};
pub use probes::{CurvatureRecord, SharpnessRecord, TaskLoss};
pub use report::{load_records, summarize, summary_csv, summary_text, write_report};
pub use run::{
    record_files, run_experiment, CellFailure, ContourFiles, GroupSummary, InterpolationFile, ProbeOutputs, RunIndex,
    RunOutcome, RunRecord, SharpnessSummary,
};

use crate::error::{Error, Result};
use crate::io::{write_json, write_text, Checkpoint};
use crate::landscape::interpolation_csv;
use crate::model::{ModelState, TaskId};
use crate::tasks::{read_stream, write_stream, Split, TaskStream};

/// Environment variable overriding the output directory of a config.
pub const OUT_ENV: &str = "FLATBASIN_OUT";

#[derive(Debug, Parser)]
#[command(name = "flatbasin", version, about = "Continual-learning runs and loss-landscape probes")]
pub struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent grid cells.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Replaces the config's seed list, or seeds a probe.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every (method, init, sequence, seed) cell of a config.
    Run,
    /// Landscape probes on saved checkpoints.
    #[command(subcommand)]
    Probe(ProbeCommand),
    /// Mean ± std table per (method, init) from run records.
    Report {
        /// Record files or directories; defaults to the output directory.
        records: Vec<PathBuf>,
    },
    /// Write the config's task streams as CSV plus a manifest.
    GenData,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Stream manifest written by `run` or `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// Task whose loss is probed; defaults to the checkpoint's own task.
    #[arg(long)]
    pub task: Option<TaskId>,
    #[arg(long, default_value = "train", value_parser = parse_split)]
    pub split: Split,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split `{s}`"))
}

#[derive(Debug, Subcommand)]
pub enum ProbeCommand {
    /// Loss on the plane through three checkpoints.
    Contour {
        #[arg(long = "ckpt", required = true, num_args = 1..)]
        ckpts: Vec<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 21)]
        resolution: usize,
        #[arg(long, default_value_t = 0.25)]
        margin: f64,
    },
    /// Loss along the segment between two checkpoints.
    Interpolate {
        #[arg(long = "ckpt", required = true, num_args = 1..)]
        ckpts: Vec<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 11)]
        steps: usize,
    },
    /// Box sharpness of each checkpoint for every ε.
    Sharpness {
        #[arg(long = "ckpt", required = true, num_args = 1..)]
        ckpts: Vec<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long = "epsilon", num_args = 1.., default_values_t = [5e-4, 1e-3])]
        epsilons: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        p: usize,
        #[arg(long, default_value_t = 10)]
        max_iters: usize,
    },
    /// Largest Hessian eigenvalue and forgetting bound between two checkpoints.
    Curvature {
        #[arg(long = "ckpt", required = true, num_args = 1..)]
        ckpts: Vec<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 1e-4)]
        h: f64,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(cli: &Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let path = cli.config.as_ref().ok_or_else(|| Error::config("--config", "this command needs a config file"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, dir))
}

/// `--out`, then the environment override, then the config, then `out`.
fn output_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Run => {
            let (cfg, dir) = load_config(cli)?;
            let out = output_dir(cli, Some(&cfg));
            let outcome = run_experiment(&cfg, &dir, &out, cli.jobs)?;
            println!("{} runs written to {}", outcome.records.len(), out.display());
            if outcome.failures.is_empty() {
                Ok(0)
            } else {
                for f in &outcome.failures {
                    eprintln!("run {} failed: {}", f.run, f.error);
                }
                Ok(1)
            }
        }
        Command::Report { records } => {
            let out = output_dir(cli, None);
            let sources = if records.is_empty() { vec![out.clone()] } else { records.clone() };
            let rows = summarize(&load_records(&sources)?)?;
            write_report(&rows, &out)?;
            print!("{}", summary_text(&rows));
            Ok(0)
        }
        Command::GenData => {
            let (cfg, dir) = load_config(cli)?;
            let out = output_dir(cli, Some(&cfg));
            for &seed in &cfg.seeds {
                let manifest =
                    write_stream(&cfg.dataset.build(seed, &dir)?, &out.join("stream").join(format!("seed{seed}")))?;
                println!("{}", manifest.display());
            }
            Ok(0)
        }
        Command::Probe(p) => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            probe(p, &out, cli.seed.unwrap_or(0))?;
            Ok(0)
        }
    }
}

fn load_checkpoints(paths: &[PathBuf], expected: Option<usize>) -> Result<Vec<Checkpoint>> {
    if let Some(n) = expected.filter(|&n| n != paths.len()) {
        return Err(Error::config("--ckpt", format!("expects exactly {n} checkpoints, got {}", paths.len())));
    }
    let ckpts: Vec<Checkpoint> = paths
        .iter()
        .map(|p| {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found")));
            }
            Checkpoint::load(p)
        })
        .collect::<Result<_>>()?;
    for (c, p) in ckpts.iter().zip(paths).skip(1) {
        if c.spec != ckpts[0].spec || c.layout != ckpts[0].layout {
            return Err(Error::Layout(format!("{} does not match the layout of {}", p.display(), paths[0].display())));
        }
    }
    Ok(ckpts)
}

fn resolve_task(args: &DataArgs, ckpt: &Checkpoint) -> Result<TaskId> {
    args.task.or(ckpt.task).ok_or_else(|| Error::InvalidArgument("checkpoint names no task; pass --task".into()))
}

fn task_data(stream: &TaskStream, task: TaskId, split: Split) -> Result<&crate::model::Dataset> {
    stream
        .get(task)
        .map(|t| t.split(split))
        .ok_or_else(|| Error::InvalidArgument(format!("task {task} is not in the stream")))
}

fn probe(cmd: &ProbeCommand, out: &Path, seed: u64) -> Result<()> {
    match cmd {
        ProbeCommand::Contour { ckpts, data, resolution, margin } => {
            let cs = load_checkpoints(ckpts, Some(3))?;
            let stream = read_stream(&data.data)?;
            let models: Vec<ModelState> = cs.iter().map(Checkpoint::to_model).collect::<Result<_>>()?;
            let task = resolve_task(data, &cs[0])?;
            let loss = TaskLoss { model: &models[0], data: task_data(&stream, task, data.split)?, task };
            let probe = ContourProbe { resolution: *resolution, margin: *margin, position: 1 };
            let (plane, grid) = loss.contour([models[0].params(), models[1].params(), models[2].params()], &probe)?;
            write_text(&out.join("contour.csv"), &grid.to_csv())?;
            write_text(&out.join("contour_anchors.csv"), &grid.anchors_csv(&plane))?;
        }
        ProbeCommand::Interpolate { ckpts, data, steps } => {
            let cs = load_checkpoints(ckpts, Some(2))?;
            let stream = read_stream(&data.data)?;
            let models: Vec<ModelState> = cs.iter().map(Checkpoint::to_model).collect::<Result<_>>()?;
            let task = resolve_task(data, &cs[0])?;
            let loss = TaskLoss { model: &models[0], data: task_data(&stream, task, data.split)?, task };
            let curve = loss.interpolation(models[0].params(), models[1].params(), *steps)?;
            write_text(&out.join("interpolation.csv"), &interpolation_csv(&curve))?;
        }
        ProbeCommand::Sharpness { ckpts, data, epsilons, p, max_iters } => {
            let cs = load_checkpoints(ckpts, None)?;
            let stream = read_stream(&data.data)?;
            let probe = SharpnessProbe { epsilons: epsilons.clone(), p: *p, max_iters: *max_iters };
            let mut records = Vec::new();
            for c in &cs {
                let model = c.to_model()?;
                let task = resolve_task(data, c)?;
                let loss = TaskLoss { model: &model, data: task_data(&stream, task, data.split)?, task };
                records.extend(loss.sharpness(model.params(), None, &probe, seed)?);
            }
            write_json(&out.join("sharpness.json"), &records)?;
        }
        ProbeCommand::Curvature { ckpts, data, iters, tol, h } => {
            let cs = load_checkpoints(ckpts, Some(2))?;
            let stream = read_stream(&data.data)?;
            let models: Vec<ModelState> = cs.iter().map(Checkpoint::to_model).collect::<Result<_>>()?;
            let task = resolve_task(data, &cs[0])?;
            let loss = TaskLoss { model: &models[0], data: task_data(&stream, task, data.split)?, task };
            let probe = CurvatureProbe { iters: *iters, tol: *tol, h: *h };
            let record = loss.curvature(models[0].params(), models[1].params(), None, &probe, seed)?;
            write_json(&out.join("curvature.json"), &record)?;
        }
    }
    Ok(())
}
