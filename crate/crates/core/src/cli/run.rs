//! Grid execution: every (method, init, sequence, seed) cell trains one model
//! and writes its own files; aggregates are written once per (method, init).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, InitConfig, WarmStartConfig};
use super::probes::{CurvatureRecord, SharpnessRecord, TaskLoss};
use crate::error::{Error, Result};
use crate::io::{write_json, write_text, Checkpoint};
use crate::landscape::interpolation_csv;
use crate::methods::{train_sequence, warm_start, MethodConfig, TrainLog};
use crate::metrics::{aggregate, MeanStd, MetricsReport, SequenceMetrics};
use crate::model::{InitScheme, ModelState, TaskId};
use crate::numcore::RngStream;
use crate::tasks::{gen_warm_start_corpus, shuffle_sequences, write_stream, TaskStream};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContourFiles {
    pub task: TaskId,
    pub grid: String,
    pub anchors: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationFile {
    pub task: TaskId,
    /// Curve from the minimum after `from_position` to the next one.
    pub from_position: usize,
    pub file: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contour: Option<ContourFiles>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interpolation: Vec<InterpolationFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sharpness: Vec<SharpnessRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curvature: Vec<CurvatureRecord>,
}

/// Summary of one grid cell. File references are relative to the output
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub method: String,
    pub init: String,
    pub sequence: usize,
    pub seed: u64,
    pub order: Vec<TaskId>,
    pub train_log: String,
    pub checkpoints: Vec<String>,
    pub metrics: SequenceMetrics,
    #[serde(default)]
    pub probes: ProbeOutputs,
    /// Not serialized, so output files stay byte-identical across reruns.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn stem(&self) -> String {
        format!("{}_{}_{}_{}", self.method, self.init, self.sequence, self.seed)
    }

    /// Mean φ over the sequence's task minima at `epsilon`.
    pub fn mean_sharpness(&self, epsilon: f64) -> Option<f64> {
        let phis: Vec<f64> = self.probes.sharpness.iter().filter(|r| r.epsilon == epsilon).map(|r| r.phi).collect();
        (!phis.is_empty()).then(|| phis.iter().sum::<f64>() / phis.len() as f64)
    }

    pub fn epsilons(&self) -> Vec<f64> {
        let mut eps: Vec<f64> = self.probes.sharpness.iter().map(|r| r.epsilon).collect();
        eps.sort_by(f64::total_cmp);
        eps.dedup();
        eps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessSummary {
    #[serde(with = "crate::io::f17")]
    pub epsilon: f64,
    pub phi: MeanStd,
}

/// Aggregate over every run of one (method, init) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub method: String,
    pub init: String,
    pub runs: usize,
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sharpness: Vec<SharpnessSummary>,
}

impl GroupSummary {
    pub fn from_records(method: &str, init: &str, records: &[&RunRecord]) -> Result<Self> {
        let seqs: Vec<SequenceMetrics> = records.iter().map(|r| r.metrics.clone()).collect();
        let metrics = aggregate(&seqs)?;
        let mut epsilons: Vec<f64> = records.iter().flat_map(|r| r.epsilons()).collect();
        epsilons.sort_by(f64::total_cmp);
        epsilons.dedup();
        let sharpness = epsilons
            .into_iter()
            .filter_map(|epsilon| {
                let per_run: Option<Vec<f64>> = records.iter().map(|r| r.mean_sharpness(epsilon)).collect();
                per_run.map(|v| SharpnessSummary { epsilon, phi: MeanStd::of(&v) })
            })
            .collect();
        Ok(Self { method: method.to_owned(), init: init.to_owned(), runs: records.len(), metrics, sharpness })
    }

    pub fn sharpness_at(&self, epsilon: f64) -> Option<MeanStd> {
        self.sharpness.iter().find(|s| s.epsilon == epsilon).map(|s| s.phi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub run: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunIndex {
    pub config_hash: String,
    pub records: Vec<String>,
    pub summaries: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<GroupSummary>,
    pub failures: Vec<CellFailure>,
}

impl RunOutcome {
    pub fn summary(&self, method: &str, init: &str) -> Option<&GroupSummary> {
        self.summaries.iter().find(|s| s.method == method && s.init == init)
    }
}

struct Cell<'a> {
    seed: u64,
    sequence: usize,
    stream: &'a TaskStream,
    method: &'a MethodConfig,
    init: &'a InitConfig,
    start: &'a ModelState,
}

fn starting_model(
    cfg: &ExperimentConfig,
    stream: &TaskStream,
    init: &InitConfig,
    seed: u64,
    seq: usize,
) -> Result<ModelState> {
    let spec = cfg.model.spec_for(stream);
    let mut model =
        ModelState::init(spec, &mut RngStream::derive(seed, &format!("init/seq{seq}")), InitScheme::UniformGlorot)?;
    if let InitConfig::WarmStart(WarmStartConfig { epochs, lr, batch_size }) = init {
        let corpus = gen_warm_start_corpus(stream, seed)?;
        let report = warm_start(
            &mut model,
            &corpus,
            *epochs,
            *lr,
            *batch_size,
            &RngStream::derive(seed, &format!("warm/seq{seq}")),
        )?;
        log::info!(
            "seed {seed} sequence {seq}: warm start loss {:.4}, corpus accuracy {:.4}",
            report.final_loss,
            report.corpus_accuracy
        );
    }
    Ok(model)
}

fn run_cell(cfg: &ExperimentConfig, hash: &str, out: &Path, cell: &Cell<'_>) -> Result<RunRecord> {
    let started = Instant::now();
    let mut record = RunRecord {
        config_hash: hash.to_owned(),
        method: cell.method.label(),
        init: cell.init.name().to_owned(),
        sequence: cell.sequence,
        seed: cell.seed,
        order: cell.stream.task_ids(),
        train_log: String::new(),
        checkpoints: Vec::new(),
        metrics: SequenceMetrics { accuracy: vec![], forgetting: vec![], learning_accuracy: vec![] },
        probes: ProbeOutputs::default(),
        wall_clock_secs: 0.0,
    };
    let stem = record.stem();
    let mut model = cell.start.clone();
    let rng = RngStream::derive(cell.seed, &format!("train/seq{}", cell.sequence));
    let log: TrainLog = train_sequence(&mut model, cell.stream, cell.method, &rng)?;
    record.metrics = SequenceMetrics::from_scores(&log.scores)?;
    record.train_log = format!("{stem}.trainlog.json");
    write_json(&out.join(&record.train_log), &log)?;

    let spec = model.spec().clone();
    for (k, (snap, task)) in log.snapshots.iter().zip(&cell.stream.tasks).enumerate() {
        let name = format!("{stem}.ckpt{}.json", k + 1);
        Checkpoint::from_model(&ModelState::from_params(spec.clone(), snap.clone())?, Some(task.task))
            .save(&out.join(&name))?;
        record.checkpoints.push(name);
    }

    let probes = &cfg.probes;
    let tasks = &cell.stream.tasks;
    let snaps = &log.snapshots;
    let loss_for = |k: usize| TaskLoss { model: &model, data: tasks[k].split(probes.split), task: tasks[k].task };
    if let Some(sp) = &probes.sharpness {
        for (k, w) in snaps.iter().enumerate() {
            record.probes.sharpness.extend(loss_for(k).sharpness(w, Some(k + 1), sp, cell.seed)?);
        }
        write_json(&out.join(format!("{stem}.sharpness.json")), &record.probes.sharpness)?;
    }
    if let Some(cp) = &probes.contours {
        if tasks.len() >= 3 {
            let loss = loss_for(cp.position - 1);
            let (plane, grid) = loss.contour([&snaps[0], &snaps[1], &snaps[2]], cp)?;
            let files = ContourFiles {
                task: loss.task,
                grid: format!("{stem}.contour.csv"),
                anchors: format!("{stem}.contour_anchors.csv"),
            };
            write_text(&out.join(&files.grid), &grid.to_csv())?;
            write_text(&out.join(&files.anchors), &grid.anchors_csv(&plane))?;
            record.probes.contour = Some(files);
        } else {
            log::warn!("{stem}: contour probe needs three tasks, sequence has {}", tasks.len());
        }
    }
    if let Some(ip) = &probes.interpolation {
        for k in 0..tasks.len().saturating_sub(1) {
            let file = format!("{stem}.interp{}.csv", k + 1);
            write_text(
                &out.join(&file),
                &interpolation_csv(&loss_for(k).interpolation(&snaps[k], &snaps[k + 1], ip.steps)?),
            )?;
            record.probes.interpolation.push(InterpolationFile { task: tasks[k].task, from_position: k + 1, file });
        }
    }
    if let Some(cp) = &probes.curvature {
        for k in 0..tasks.len().saturating_sub(1) {
            record.probes.curvature.push(loss_for(k).curvature(
                &snaps[k],
                &snaps[k + 1],
                Some(k + 1),
                cp,
                cell.seed,
            )?);
        }
        write_json(&out.join(format!("{stem}.curvature.json")), &record.probes.curvature)?;
    }

    write_json(&out.join(format!("{stem}.record.json")), &record)?;
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    log::info!("{stem}: finished in {:.2}s", record.wall_clock_secs);
    Ok(record)
}

/// Runs the full grid with `jobs` worker threads. Output bytes do not depend
/// on `jobs`. A failing cell is reported in the outcome without affecting
/// the files of other cells.
pub fn run_experiment(cfg: &ExperimentConfig, config_dir: &Path, out: &Path, jobs: usize) -> Result<RunOutcome> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut sequences: Vec<(u64, Vec<TaskStream>)> = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let stream = cfg.dataset.build(seed, config_dir)?;
        write_stream(&stream, &out.join("stream").join(format!("seed{seed}")))?;
        sequences.push((seed, shuffle_sequences(&stream, cfg.sequences, seed)?));
    }

    let start_keys: Vec<(usize, usize, usize)> = (0..sequences.len())
        .flat_map(|s| (0..cfg.sequences).flat_map(move |q| (0..cfg.inits.len()).map(move |i| (s, q, i))))
        .collect();
    let starts: BTreeMap<(usize, usize, usize), ModelState> = pool.install(|| {
        start_keys
            .par_iter()
            .map(|&(s, q, i)| {
                let (seed, seqs) = &sequences[s];
                Ok(((s, q, i), starting_model(cfg, &seqs[q], &cfg.inits[i], *seed, q)?))
            })
            .collect::<Result<_>>()
    })?;

    let mut cells = Vec::with_capacity(cfg.grid_size());
    for (s, (seed, seqs)) in sequences.iter().enumerate() {
        for (q, stream) in seqs.iter().enumerate() {
            for method in &cfg.methods {
                for (i, init) in cfg.inits.iter().enumerate() {
                    cells.push(Cell { seed: *seed, sequence: q, stream, method, init, start: &starts[&(s, q, i)] });
                }
            }
        }
    }

    let results: Vec<std::result::Result<RunRecord, CellFailure>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                run_cell(cfg, &hash, out, cell).map_err(|e| CellFailure {
                    run: format!("{}_{}_{}_{}", cell.method.label(), cell.init.name(), cell.sequence, cell.seed),
                    error: e.to_string(),
                })
            })
            .collect()
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => {
                log::error!("{}: {}", f.run, f.error);
                failures.push(f);
            }
        }
    }

    let mut summaries = Vec::new();
    let mut summary_files = Vec::new();
    for method in &cfg.methods {
        for init in &cfg.inits {
            let (label, name) = (method.label(), init.name());
            let group: Vec<&RunRecord> = records.iter().filter(|r| r.method == label && r.init == name).collect();
            if group.len() != cfg.sequences * cfg.seeds.len() {
                log::warn!("{label}_{name}: incomplete group, aggregate not written");
                continue;
            }
            let summary = GroupSummary::from_records(&label, name, &group)?;
            let file = format!("{label}_{name}.metrics.json");
            write_json(&out.join(&file), &summary)?;
            summary_files.push(file);
            summaries.push(summary);
        }
    }
    let index = RunIndex {
        config_hash: hash,
        records: records.iter().map(|r| format!("{}.record.json", r.stem())).collect(),
        summaries: summary_files,
        failures: failures.clone(),
    };
    write_json(&out.join("run_index.json"), &index)?;
    Ok(RunOutcome { records, summaries, failures })
}

/// Record files in `dir`, sorted by name.
pub fn record_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".record.json")))
        .collect();
    files.sort();
    Ok(files)
}
