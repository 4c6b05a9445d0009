//! Task streams: synthetic generators, CSV ingestion, warm-start corpora and
//! seeded task-order shuffling.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, TaskId};
use crate::numcore::{Matrix, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task: TaskId,
    pub classes: usize,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl TaskSpec {
    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "validation" | "val" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Geometry recorded by the blob generator, needed to build a disjoint
/// warm-start corpus later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobGeometry {
    pub means: Vec<Vec<f64>>,
    pub separation: f64,
    pub noise: f64,
    pub samples_per_class: usize,
    pub classes_per_task: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<TaskSpec>,
    pub sequence_seed: u64,
    pub geometry: Option<BlobGeometry>,
}

impl TaskStream {
    pub fn task_ids(&self) -> Vec<TaskId> {
        self.tasks.iter().map(|t| t.task).collect()
    }

    pub fn get(&self, task: TaskId) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.task == task)
    }

    pub fn dim(&self) -> usize {
        self.tasks.first().map_or(0, |t| t.train.dim())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartCorpus {
    pub classes: usize,
    pub train: Dataset,
    pub test: Dataset,
    pub means: Vec<Vec<f64>>,
}

/// Shuffles `0..n` and cuts it 80/10/10.
fn split_indices(n: usize, rng: &mut RngStream) -> [Vec<usize>; 3] {
    let perm = rng.permutation(n);
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    [perm[..n_train].to_vec(), perm[n_train..n_train + n_val].to_vec(), perm[n_train + n_val..].to_vec()]
}

fn make_task(task: TaskId, classes: usize, pooled: &Dataset, rng: &mut RngStream) -> TaskSpec {
    let [tr, va, te] = split_indices(pooled.len(), rng);
    TaskSpec { task, classes, train: pooled.subset(&tr), validation: pooled.subset(&va), test: pooled.subset(&te) }
}

fn sample_blob(mean: &[f64], noise: f64, count: usize, rng: &mut RngStream, out: &mut Vec<f64>) {
    for _ in 0..count {
        out.extend(mean.iter().map(|m| m + noise * rng.normal()));
    }
}

/// `num_tasks * classes_per_task` isotropic Gaussian blobs whose means are
/// uniform in `[-separation/2, separation/2)^dim`. Task `t` owns global
/// classes `t*k .. (t+1)*k`, relabelled `0..k` inside the task.
pub fn gen_split_blobs(
    num_tasks: usize,
    classes_per_task: usize,
    dim: usize,
    samples_per_class: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<TaskStream> {
    if num_tasks == 0 || classes_per_task == 0 || dim == 0 || samples_per_class == 0 {
        return Err(Error::InvalidArgument("blob counts must be >= 1".into()));
    }
    if !(separation > 0.0) || !(noise >= 0.0) {
        return Err(Error::InvalidArgument("separation must be > 0 and noise >= 0".into()));
    }
    let mut mean_rng = RngStream::derive(seed, "blobs/means");
    let total = num_tasks * classes_per_task;
    let means: Vec<Vec<f64>> =
        (0..total).map(|_| (0..dim).map(|_| separation * (mean_rng.uniform() - 0.5)).collect()).collect();

    let mut tasks = Vec::with_capacity(num_tasks);
    for t in 0..num_tasks {
        let mut rng = RngStream::derive(seed, &format!("blobs/task{t}"));
        let mut values = Vec::with_capacity(classes_per_task * samples_per_class * dim);
        let mut labels = Vec::with_capacity(classes_per_task * samples_per_class);
        for c in 0..classes_per_task {
            sample_blob(&means[t * classes_per_task + c], noise, samples_per_class, &mut rng, &mut values);
            labels.extend(std::iter::repeat_n(c, samples_per_class));
        }
        let pooled = Dataset::new(Matrix::new(labels.len(), dim, values)?, labels)?;
        tasks.push(make_task(t as TaskId, classes_per_task, &pooled, &mut rng));
    }
    Ok(TaskStream {
        tasks,
        sequence_seed: seed,
        geometry: Some(BlobGeometry { means, separation, noise, samples_per_class, classes_per_task }),
    })
}

/// Seeded feature permutations; the first is the identity.
pub fn feature_permutations(dim: usize, num_tasks: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = RngStream::derive(seed, "permuted");
    (0..num_tasks).map(|k| if k == 0 { (0..dim).collect() } else { rng.permutation(dim) }).collect()
}

/// Task `k` sees `base` with its features reordered by the k-th permutation:
/// `x'[j] = x[perm[j]]`. All tasks share one train/validation/test split.
pub fn gen_permuted_tasks(base: &Dataset, classes: usize, num_tasks: usize, seed: u64) -> Result<TaskStream> {
    if num_tasks == 0 {
        return Err(Error::InvalidArgument("num_tasks must be >= 1".into()));
    }
    if let Some(&l) = base.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { task: 0, label: l, classes });
    }
    let dim = base.dim();
    let perms = feature_permutations(dim, num_tasks, seed);
    let split = split_indices(base.len(), &mut RngStream::derive(seed, "permuted/split"));
    let tasks = perms
        .iter()
        .enumerate()
        .map(|(k, perm)| {
            let mut values = Vec::with_capacity(base.len() * dim);
            for i in 0..base.len() {
                let row = base.inputs.row(i);
                values.extend(perm.iter().map(|&j| row[j]));
            }
            let pooled = Dataset::new(Matrix::new(base.len(), dim, values)?, base.labels.clone())?;
            Ok(TaskSpec {
                task: k as TaskId,
                classes,
                train: pooled.subset(&split[0]),
                validation: pooled.subset(&split[1]),
                test: pooled.subset(&split[2]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskStream { tasks, sequence_seed: seed, geometry: None })
}

/// Column names for [`load_csv`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Feature columns; empty means every column that is not label/task/split.
    #[serde(default)]
    pub features: Vec<String>,
    pub label: String,
    #[serde(default)]
    pub task: Option<String>,
    /// Optional column holding `train`/`validation`/`test`; when present it
    /// replaces the seeded 80/10/10 split.
    #[serde(default)]
    pub split: Option<String>,
    /// Declared class count shared by every task; inferred when absent.
    #[serde(default)]
    pub classes: Option<usize>,
}

struct TaskRows {
    values: Vec<f64>,
    labels: Vec<usize>,
    splits: Vec<Split>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
}

pub fn load_csv(path: &Path, schema: &CsvSchema, seed: u64) -> Result<TaskStream> {
    let csv_err = |line: u64, message: String| Error::Csv { path: path.to_path_buf(), line, message };
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| csv_err(1, e.to_string()))?.clone();
    let label_col = column(&headers, &schema.label)?;
    let task_col = schema.task.as_deref().map(|t| column(&headers, t)).transpose()?;
    let split_col = schema.split.as_deref().map(|s| column(&headers, s)).transpose()?;
    let feature_cols: Vec<usize> = if schema.features.is_empty() {
        (0..headers.len()).filter(|&i| i != label_col && Some(i) != task_col && Some(i) != split_col).collect()
    } else {
        schema.features.iter().map(|f| column(&headers, f)).collect::<Result<_>>()?
    };
    if feature_cols.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }

    let mut groups: BTreeMap<TaskId, TaskRows> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| csv_err(line, e.to_string()))?;
        let field = |c: usize| record.get(c).ok_or_else(|| csv_err(line, format!("missing field {c}")));
        let parse_int = |c: usize, what: &str| -> Result<usize> {
            let s = field(c)?.trim();
            s.parse::<usize>().map_err(|_| csv_err(line, format!("{what} `{s}` is not a non-negative integer")))
        };
        let label = parse_int(label_col, "label")?;
        if let Some(classes) = schema.classes {
            if label >= classes {
                return Err(csv_err(line, format!("label {label} exceeds declared class count {classes}")));
            }
        }
        let task = match task_col {
            Some(c) => parse_int(c, "task")? as TaskId,
            None => 0,
        };
        let split = match split_col {
            Some(c) => {
                let s = field(c)?.trim();
                Split::parse(s).ok_or_else(|| csv_err(line, format!("unknown split `{s}`")))?
            }
            None => Split::Train,
        };
        let rows = groups.entry(task).or_insert_with(|| TaskRows { values: vec![], labels: vec![], splits: vec![] });
        for &c in &feature_cols {
            let s = field(c)?.trim();
            let v: f64 = s.parse().map_err(|_| csv_err(line, format!("value `{s}` is not a number")))?;
            if !v.is_finite() {
                return Err(csv_err(line, format!("value `{s}` is not finite")));
            }
            rows.values.push(v);
        }
        rows.labels.push(label);
        rows.splits.push(split);
    }
    if groups.is_empty() {
        return Err(Error::EmptyData(format!("{} has no rows", path.display())));
    }

    let dim = feature_cols.len();
    let mut tasks = Vec::with_capacity(groups.len());
    for (task, rows) in groups {
        let classes = schema.classes.unwrap_or_else(|| rows.labels.iter().max().map_or(1, |m| m + 1));
        let pooled = Dataset::new(Matrix::new(rows.labels.len(), dim, rows.values)?, rows.labels)?;
        let spec = if split_col.is_some() {
            let pick = |s: Split| -> Vec<usize> { (0..pooled.len()).filter(|&i| rows.splits[i] == s).collect() };
            TaskSpec {
                task,
                classes,
                train: pooled.subset(&pick(Split::Train)),
                validation: pooled.subset(&pick(Split::Validation)),
                test: pooled.subset(&pick(Split::Test)),
            }
        } else {
            make_task(task, classes, &pooled, &mut RngStream::derive(seed, &format!("csv/task{task}")))
        };
        tasks.push(spec);
    }
    Ok(TaskStream { tasks, sequence_seed: seed, geometry: None })
}

/// Seeded uniform orderings of `0..task_count`.
pub fn shuffle_orders(task_count: usize, num_orders: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = RngStream::derive(seed, "orders");
    (0..num_orders).map(|_| rng.permutation(task_count)).collect()
}

/// `num_orders` reorderings of the stream; task data is untouched.
pub fn shuffle_sequences(stream: &TaskStream, num_orders: usize, seed: u64) -> Result<Vec<TaskStream>> {
    if num_orders == 0 {
        return Err(Error::InvalidArgument("num_orders must be >= 1".into()));
    }
    Ok(shuffle_orders(stream.tasks.len(), num_orders, seed)
        .into_iter()
        .map(|order| TaskStream {
            tasks: order.iter().map(|&i| stream.tasks[i].clone()).collect(),
            sequence_seed: seed,
            geometry: stream.geometry.clone(),
        })
        .collect())
}

const WARM_START_ATTEMPTS: usize = 10_000;

/// Pooled multi-class corpus of fresh blobs, each mean at least
/// `separation / 2` away from every stream mean.
pub fn gen_warm_start_corpus(stream: &TaskStream, seed: u64) -> Result<WarmStartCorpus> {
    let geo = stream
        .geometry
        .as_ref()
        .ok_or_else(|| Error::WarmStart("stream was not built by the blob generator".into()))?;
    let dim = stream.dim();
    let classes = geo.means.len();
    let min_dist = geo.separation / 2.0;
    let mut rng = RngStream::derive(seed, "warm/means");
    let mut means = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut accepted = None;
        for _ in 0..WARM_START_ATTEMPTS {
            let cand: Vec<f64> = (0..dim).map(|_| geo.separation * (rng.uniform() - 0.5)).collect();
            let far = geo
                .means
                .iter()
                .all(|m| m.iter().zip(&cand).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= min_dist);
            if far {
                accepted = Some(cand);
                break;
            }
        }
        let mean = accepted.ok_or_else(|| {
            Error::WarmStart(format!(
                "no mean for class {c} at distance >= {min_dist} after {WARM_START_ATTEMPTS} draws; \
                 use a larger separation (hypercube) or higher dimension"
            ))
        })?;
        means.push(mean);
    }

    let mut rng = RngStream::derive(seed, "warm/samples");
    let mut values = Vec::with_capacity(classes * geo.samples_per_class * dim);
    let mut labels = Vec::with_capacity(classes * geo.samples_per_class);
    for (c, mean) in means.iter().enumerate() {
        sample_blob(mean, geo.noise, geo.samples_per_class, &mut rng, &mut values);
        labels.extend(std::iter::repeat_n(c, geo.samples_per_class));
    }
    let pooled = Dataset::new(Matrix::new(labels.len(), dim, values)?, labels)?;
    let perm = rng.permutation(pooled.len());
    let n_train = pooled.len() * 9 / 10;
    Ok(WarmStartCorpus {
        classes,
        train: pooled.subset(&perm[..n_train]),
        test: pooled.subset(&perm[n_train..]),
        means,
    })
}

// ---------------------------------------------------------------------------
// stream manifest: one JSON file plus one CSV per task

#[derive(Debug, Serialize, Deserialize)]
struct ManifestTask {
    task: TaskId,
    classes: usize,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    sequence_seed: u64,
    dim: usize,
    tasks: Vec<ManifestTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    geometry: Option<BlobGeometry>,
}

fn write_task_csv(path: &Path, spec: &TaskSpec) -> Result<()> {
    let dim = spec.train.dim();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut header: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
    header.extend(["label".to_owned(), "split".to_owned()]);
    let io = |e: csv::Error| Error::Csv { path: path.to_path_buf(), line: 0, message: e.to_string() };
    w.write_record(&header).map_err(io)?;
    for split in [Split::Train, Split::Validation, Split::Test] {
        let d = spec.split(split);
        for i in 0..d.len() {
            let mut rec: Vec<String> = d.inputs.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(d.labels[i].to_string());
            rec.push(split.name().to_owned());
            w.write_record(&rec).map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `manifest.json` and `task{id}.csv` files into `dir`.
pub fn write_stream(stream: &TaskStream, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tasks = Vec::with_capacity(stream.tasks.len());
    for spec in &stream.tasks {
        let file = format!("task{}.csv", spec.task);
        write_task_csv(&dir.join(&file), spec)?;
        tasks.push(ManifestTask { task: spec.task, classes: spec.classes, file });
    }
    let manifest =
        Manifest { sequence_seed: stream.sequence_seed, dim: stream.dim(), tasks, geometry: stream.geometry.clone() };
    let path = dir.join("manifest.json");
    crate::io::write_json(&path, &manifest)?;
    Ok(path)
}

pub fn read_stream(manifest_path: &Path) -> Result<TaskStream> {
    let manifest: Manifest = crate::io::read_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let schema = CsvSchema {
        features: (0..manifest.dim).map(|j| format!("x{j}")).collect(),
        label: "label".into(),
        task: None,
        split: Some("split".into()),
        classes: None,
    };
    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    for t in &manifest.tasks {
        let schema = CsvSchema { classes: Some(t.classes), ..schema.clone() };
        let mut loaded = load_csv(&dir.join(&t.file), &schema, manifest.sequence_seed)?;
        let mut spec = loaded.tasks.pop().ok_or_else(|| Error::EmptyData(t.file.clone()))?;
        spec.task = t.task;
        tasks.push(spec);
    }
    Ok(TaskStream { tasks, sequence_seed: manifest.sequence_seed, geometry: manifest.geometry })
}
