//! Experiment configuration: one JSON file describing the whole grid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::methods::MethodConfig;
use crate::model::{Activation, HeadSpec, MlpSpec};
use crate::tasks::{gen_split_blobs, load_csv, read_stream, CsvSchema, Split, TaskStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitBlobsConfig {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub separation: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvConfig {
    pub path: PathBuf,
    pub schema: CsvSchema,
}

/// A stream previously written by `gen-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestConfig {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum DatasetConfig {
    SplitBlobs(SplitBlobsConfig),
    Csv(CsvConfig),
    Manifest(ManifestConfig),
}

impl DatasetConfig {
    /// Builds the stream for one seed. Relative paths resolve against `base`.
    pub fn build(&self, seed: u64, base: &Path) -> Result<TaskStream> {
        match self {
            DatasetConfig::SplitBlobs(b) => gen_split_blobs(
                b.num_tasks,
                b.classes_per_task,
                b.dim,
                b.samples_per_class,
                b.separation,
                b.noise,
                seed,
            ),
            DatasetConfig::Csv(c) => load_csv(&base.join(&c.path), &c.schema, seed),
            DatasetConfig::Manifest(m) => read_stream(&base.join(&m.path)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden_dims: vec![32], activation: Activation::Relu }
    }
}

impl ModelConfig {
    pub fn spec_for(&self, stream: &TaskStream) -> MlpSpec {
        MlpSpec {
            input_dim: stream.dim(),
            hidden_dims: self.hidden_dims.clone(),
            activation: self.activation,
            heads: stream.tasks.iter().map(|t| HeadSpec { task: t.task, classes: t.classes }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmStartConfig {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitConfig {
    Random,
    WarmStart(WarmStartConfig),
}

fn default_batch() -> usize {
    10
}

impl InitConfig {
    pub fn name(&self) -> &'static str {
        match self {
            InitConfig::Random => "random",
            InitConfig::WarmStart(_) => "warm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContourProbe {
    pub resolution: usize,
    pub margin: f64,
    /// 1-based sequence position whose task loss is gridded.
    pub position: usize,
}

impl Default for ContourProbe {
    fn default() -> Self {
        Self { resolution: 21, margin: 0.25, position: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpolationProbe {
    pub steps: usize,
}

impl Default for InterpolationProbe {
    fn default() -> Self {
        Self { steps: 11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharpnessProbe {
    pub epsilons: Vec<f64>,
    pub p: usize,
    pub max_iters: usize,
}

impl Default for SharpnessProbe {
    fn default() -> Self {
        Self { epsilons: vec![5e-4, 1e-3], p: 0, max_iters: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvatureProbe {
    pub iters: usize,
    pub tol: f64,
    /// Finite-difference step of the Hessian-vector product.
    pub h: f64,
}

impl Default for CurvatureProbe {
    fn default() -> Self {
        Self { iters: 100, tol: 1e-6, h: 1e-4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Data split whose loss the probes evaluate.
    pub split: Split,
    pub contours: Option<ContourProbe>,
    pub interpolation: Option<InterpolationProbe>,
    pub sharpness: Option<SharpnessProbe>,
    pub curvature: Option<CurvatureProbe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub methods: Vec<MethodConfig>,
    #[serde(default = "default_inits")]
    pub inits: Vec<InitConfig>,
    #[serde(default = "default_sequences")]
    pub sequences: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub probes: ProbeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_inits() -> Vec<InitConfig> {
    vec![InitConfig::Random]
}

fn default_sequences() -> usize {
    1
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let (path, msg) = refine_tagged(text, &path).unwrap_or((path, e.into_inner().to_string()));
            Error::config(path, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(".", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks cross-field constraints; errors carry the field path.
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("methods", "at least one method is required"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            m.validate().map_err(|(field, msg)| Error::config(format!("methods[{i}].{field}"), msg))?;
            if self.methods[..i].iter().any(|o| o.label() == m.label()) {
                return Err(Error::config(format!("methods[{i}]"), format!("duplicate method `{}`", m.label())));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.sequences == 0 {
            return Err(Error::config("sequences", "must be >= 1"));
        }
        if self.inits.is_empty() {
            return Err(Error::config("inits", "at least one init is required"));
        }
        for (i, init) in self.inits.iter().enumerate() {
            if self.inits[..i].iter().any(|o| o.name() == init.name()) {
                return Err(Error::config(format!("inits[{i}]"), format!("duplicate init `{}`", init.name())));
            }
            if let InitConfig::WarmStart(WarmStartConfig { lr, batch_size, .. }) = init {
                if !(*lr > 0.0) {
                    return Err(Error::config(format!("inits[{i}].lr"), "must be > 0"));
                }
                if *batch_size == 0 {
                    return Err(Error::config(format!("inits[{i}].batch_size"), "must be >= 1"));
                }
                if matches!(self.dataset, DatasetConfig::Csv(_)) {
                    return Err(Error::config(
                        format!("inits[{i}]"),
                        "warm start needs a blob-generated stream to build a disjoint corpus",
                    ));
                }
            }
        }
        if self.model.hidden_dims.contains(&0) {
            return Err(Error::config("model.hidden_dims", "layer widths must be >= 1"));
        }
        let mut num_tasks = None;
        if let DatasetConfig::SplitBlobs(SplitBlobsConfig {
            num_tasks: n,
            classes_per_task,
            dim,
            samples_per_class,
            separation,
            noise,
        }) = &self.dataset
        {
            for (field, v) in [
                ("num_tasks", n),
                ("classes_per_task", classes_per_task),
                ("dim", dim),
                ("samples_per_class", samples_per_class),
            ] {
                if *v == 0 {
                    return Err(Error::config(format!("dataset.{field}"), "must be >= 1"));
                }
            }
            if !(*separation > 0.0) {
                return Err(Error::config("dataset.separation", "must be > 0"));
            }
            if !(*noise >= 0.0) {
                return Err(Error::config("dataset.noise", "must be >= 0"));
            }
            num_tasks = Some(*n);
        }
        let probes = &self.probes;
        if let Some(c) = &probes.contours {
            if c.resolution < 2 {
                return Err(Error::config("probes.contours.resolution", "must be >= 2"));
            }
            if !(c.margin >= 0.0) {
                return Err(Error::config("probes.contours.margin", "must be >= 0"));
            }
            if c.position == 0 || c.position > 3 {
                return Err(Error::config("probes.contours.position", "must be 1, 2 or 3"));
            }
            if num_tasks.is_some_and(|n| n < 3) {
                return Err(Error::config("probes.contours", "needs at least three tasks"));
            }
        }
        if probes.interpolation.as_ref().is_some_and(|i| i.steps < 2) {
            return Err(Error::config("probes.interpolation.steps", "must be >= 2"));
        }
        if let Some(s) = &probes.sharpness {
            if s.epsilons.is_empty() {
                return Err(Error::config("probes.sharpness.epsilons", "at least one epsilon is required"));
            }
            if let Some(i) = s.epsilons.iter().position(|e| !(*e > 0.0) || !e.is_finite()) {
                return Err(Error::config(format!("probes.sharpness.epsilons[{i}]"), "must be > 0"));
            }
        }
        if let Some(c) = &probes.curvature {
            if c.iters == 0 {
                return Err(Error::config("probes.curvature.iters", "must be >= 1"));
            }
            if !(c.h > 0.0) {
                return Err(Error::config("probes.curvature.h", "must be > 0"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring `output_dir`. Object
    /// keys are sorted, so reordering keys in the file leaves it unchanged.
    pub fn hash(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output_dir");
        }
        let digest = Sha256::digest(serde_json::to_string(&value)?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Number of grid cells: methods × inits × sequences × seeds.
    pub fn grid_size(&self) -> usize {
        self.methods.len() * self.inits.len() * self.sequences * self.seeds.len()
    }
}

/// Tagged enums are buffered by serde, so an error inside one only reports the
/// enum's own path. Re-read that object as its variant to find the inner field.
fn refine_tagged(text: &str, path: &str) -> Option<(String, String)> {
    let root: serde_json::Value = serde_json::from_str(text).ok()?;
    let node = if path == "dataset" {
        root.get("dataset")?
    } else {
        let i: usize = path.strip_prefix("inits[")?.strip_suffix(']')?.parse().ok()?;
        root.get("inits")?.get(i)?
    };
    let mut obj = node.as_object()?.clone();
    let (tag, variant) =
        if path == "dataset" { ("generator", obj.get("generator")?) } else { ("kind", obj.get("kind")?) };
    let variant = variant.as_str()?.to_owned();
    obj.remove(tag);
    let v = serde_json::Value::Object(obj);
    let err = match (tag, variant.as_str()) {
        ("generator", "split_blobs") => inner_error::<SplitBlobsConfig>(v),
        ("generator", "csv") => inner_error::<CsvConfig>(v),
        ("generator", "manifest") => inner_error::<ManifestConfig>(v),
        ("kind", "warm_start") => inner_error::<WarmStartConfig>(v),
        _ => None,
    }?;
    let full = if err.0 == "." { path.to_owned() } else { format!("{path}.{}", err.0) };
    Some((full, err.1))
}

fn inner_error<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Option<(String, String)> {
    serde_path_to_error::deserialize::<_, T>(v).err().map(|e| (e.path().to_string(), e.into_inner().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "dataset": {"generator": "split_blobs", "num_tasks": 3, "classes_per_task": 2, "dim": 4,
                    "samples_per_class": 10, "separation": 4.0, "noise": 1.0},
        "methods": [{"method": "finetune"}, {"method": "er"}],
        "inits": [{"kind": "random"}, {"kind": "warm_start", "epochs": 2, "lr": 0.1}],
        "sequences": 5,
        "seeds": [0]
    }"#;

    #[test]
    fn parses_and_counts_grid() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.grid_size(), 20);
        assert_eq!(cfg.methods[1].er_mem_per_class, 1);
    }

    #[test]
    fn errors_carry_field_paths() {
        let err = |text: String| match ExperimentConfig::parse(&text) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("{other:?}"),
        };
        assert_eq!(err(MINIMAL.replace("\"seeds\": [0]", "\"seeds\": []")), "seeds");
        assert_eq!(err(MINIMAL.replace("{\"method\": \"er\"}", "{\"method\": \"er\", \"lr\": -1}")), "methods[1].lr");
        assert_eq!(err(MINIMAL.replace("\"dim\": 4", "\"dim\": \"four\"")), "dataset.dim");
        assert_eq!(err(MINIMAL.replace("\"sequences\": 5", "\"sequences\": 5, \"bogus\": 1")), "bogus");
        assert_eq!(err(MINIMAL.replace("\"epochs\": 2", "\"epochs\": -2")), "inits[1].epochs");
        assert_eq!(err(MINIMAL.replace("\"noise\": 1.0", "\"noise\": 1.0, \"extra\": 0")), "dataset.extra");
    }

    #[test]
    fn hash_ignores_key_order_and_output_dir() {
        let a = ExperimentConfig::parse(MINIMAL).unwrap();
        let reordered = r#"{
            "seeds": [0], "sequences": 5,
            "inits": [{"kind": "random"}, {"lr": 0.1, "epochs": 2, "kind": "warm_start"}],
            "methods": [{"method": "finetune"}, {"method": "er"}],
            "dataset": {"noise": 1.0, "separation": 4.0, "samples_per_class": 10, "dim": 4,
                        "classes_per_task": 2, "num_tasks": 3, "generator": "split_blobs"},
            "output_dir": "elsewhere"
        }"#;
        let b = ExperimentConfig::parse(reordered).unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let mut c = a.clone();
        c.sequences = 4;
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }
}
