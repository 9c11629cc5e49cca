//! Config-driven experiment pipeline: generate data, generate paired
//! workloads, train estimators, run measure checks and evaluate, with every
//! artifact written under one run directory.
//!
//! All seeds are derived from the master seed, so a run is reproducible from
//! its config alone. Each artifact records the hash of the config that
//! produced it; later stages refuse inputs produced under a different hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::{generate_gaussian, load_csv, meta_path, Dataset, GaussianSpec};
use crate::error::{Error, Result};
use crate::estimators::{
    build_grid_histogram, build_leo, build_sampling_estimator, expand_query, fit_parametric, train_direct,
    train_neurocdf, train_seconcdf, EstimatorCheckpoint, SeconcdfConfig, SelectivityEstimator, DEFAULT_GRID_CELL_CAP,
};
use crate::measurecheck::{render_measure_table, run_measure_check, MeasureCheckReport, MeasureCheckSettings, MeasureProbes};
use crate::metrics::{compare, evaluate, render_eval_table, Degradation, EvalReport, Tier, TierMetric};
use crate::neuralnet::{LossKind, TrainConfig};
use crate::workload::{
    center_move_specs, estimate_c2, granularity_shift_specs, sample_workload, OtherColumnsPolicy, Span, Workload,
    WorkloadSpec, WorkloadTag,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Gaussian {
        dims: usize,
        rows: usize,
        correlation: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_true")]
        has_header: bool,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Gaussian {
            dims: 10,
            rows: 49_000,
            correlation: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OodScenario {
    None,
    CenterMove { train_center: Span, test_center: Span },
    GranularityShift { train_length: Span, test_length: Span },
}

impl Default for OodScenario {
    fn default() -> Self {
        OodScenario::GranularityShift {
            train_length: Span::new(0.05, 0.2),
            test_length: Span::new(0.4, 0.8),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSettings {
    pub n_train: usize,
    /// Size of each test workload.
    pub n_test: usize,
    /// Constrained-column counts; `None` means uniform on `1..=d`.
    pub n_filters: Option<(usize, usize)>,
    pub shifting_attribute: usize,
    pub center_bounds: Span,
    pub length_bounds: Span,
    pub other_columns: OtherColumnsPolicy,
}

impl Default for WorkloadSettings {
    fn default() -> Self {
        WorkloadSettings {
            n_train: 20_000,
            n_test: 5_000,
            n_filters: None,
            shifting_attribute: 0,
            center_bounds: Span::new(0.0, 1.0),
            length_bounds: Span::new(0.05, 0.5),
            other_columns: OtherColumnsPolicy::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorConfig {
    Direct {
        #[serde(default)]
        train: TrainConfig,
    },
    Neurocdf {
        #[serde(default = "mse_train")]
        train: TrainConfig,
    },
    Seconcdf {
        #[serde(default)]
        train: TrainConfig,
        #[serde(default = "one")]
        omega1: f64,
        #[serde(default = "one")]
        omega2: f64,
        #[serde(default = "default_consistency_batch")]
        consistency_batch: usize,
    },
    Histogram {
        #[serde(default = "default_buckets")]
        buckets_per_dim: usize,
        #[serde(default = "default_cell_cap")]
        cell_cap: usize,
    },
    Sampling {
        #[serde(default = "default_sample_size")]
        sample_size: usize,
    },
    Parametric {
        #[serde(default = "default_degree")]
        degree: usize,
    },
    Leo {
        #[serde(default = "default_buckets")]
        buckets_per_dim: usize,
    },
}

fn default_true() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn default_consistency_batch() -> usize {
    128
}
fn default_buckets() -> usize {
    4
}
fn default_cell_cap() -> usize {
    DEFAULT_GRID_CELL_CAP
}
fn default_sample_size() -> usize {
    1_000
}
fn default_degree() -> usize {
    2
}
fn mse_train() -> TrainConfig {
    TrainConfig {
        loss: LossKind::Mse,
        ..TrainConfig::default()
    }
}

impl EstimatorConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorConfig::Direct { .. } => "direct",
            EstimatorConfig::Neurocdf { .. } => "neurocdf",
            EstimatorConfig::Seconcdf { .. } => "seconcdf",
            EstimatorConfig::Histogram { .. } => "histogram",
            EstimatorConfig::Sampling { .. } => "sampling",
            EstimatorConfig::Parametric { .. } => "parametric",
            EstimatorConfig::Leo { .. } => "leo",
        }
    }

    /// Metric used for the accuracy tier: median Qerror for models trained on
    /// a log loss, RMSE otherwise.
    pub fn tier_metric(&self) -> TierMetric {
        match self {
            EstimatorConfig::Direct { train } | EstimatorConfig::Seconcdf { train, .. } if train.loss != LossKind::Mse => {
                TierMetric::QerrorMedian
            }
            _ => TierMetric::Rmse,
        }
    }

    pub fn all_defaults() -> Vec<EstimatorConfig> {
        vec![
            EstimatorConfig::Direct {
                train: TrainConfig::default(),
            },
            EstimatorConfig::Neurocdf { train: mse_train() },
            EstimatorConfig::Seconcdf {
                train: TrainConfig::default(),
                omega1: 1.0,
                omega2: 1.0,
                consistency_batch: default_consistency_batch(),
            },
            EstimatorConfig::Histogram {
                buckets_per_dim: default_buckets(),
                cell_cap: DEFAULT_GRID_CELL_CAP,
            },
            EstimatorConfig::Sampling {
                sample_size: default_sample_size(),
            },
            EstimatorConfig::Parametric {
                degree: default_degree(),
            },
            EstimatorConfig::Leo {
                buckets_per_dim: default_buckets(),
            },
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    /// Qerror floor; `None` means `1 / n_rows`.
    pub clip_floor: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct C2Settings {
    pub grid_points: usize,
    pub samples: usize,
}

impl Default for C2Settings {
    fn default() -> Self {
        C2Settings {
            grid_points: 200,
            samples: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Run directory. Not part of the config hash.
    pub output_dir: PathBuf,
    pub dataset: DatasetSource,
    pub scenario: OodScenario,
    pub workload: WorkloadSettings,
    pub estimators: Vec<EstimatorConfig>,
    pub metrics: MetricSettings,
    pub measure: MeasureCheckSettings,
    pub c2: C2Settings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("run"),
            dataset: DatasetSource::default(),
            scenario: OodScenario::default(),
            workload: WorkloadSettings::default(),
            estimators: EstimatorConfig::all_defaults(),
            metrics: MetricSettings::default(),
            measure: MeasureCheckSettings::default(),
            c2: C2Settings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = self.estimators.iter().map(EstimatorConfig::name).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("estimator {} listed twice", w[0])));
        }
        if self.workload.n_train == 0 || self.workload.n_test == 0 {
            return Err(Error::Config("workload.n_train and workload.n_test must be >= 1".into()));
        }
        if let DatasetSource::Gaussian { dims, rows, .. } = self.dataset {
            if self.workload.shifting_attribute >= dims {
                return Err(Error::Config(format!(
                    "shifting attribute {} out of range for {dims} columns",
                    self.workload.shifting_attribute
                )));
            }
            if dims == 0 || rows == 0 {
                return Err(Error::Config("dataset needs dims >= 1 and rows >= 1".into()));
            }
        }
        for e in &self.estimators {
            match e {
                EstimatorConfig::Direct { train }
                | EstimatorConfig::Neurocdf { train }
                | EstimatorConfig::Seconcdf { train, .. } => train.validate()?,
                _ => {}
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, without `output_dir`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
        }
        hex(&Sha256::digest(v.to_string().as_bytes()))
    }

    /// Deterministic sub-seed for the component named `label`.
    pub fn derive_seed(&self, label: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(label.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
    }

    pub fn paths(&self) -> RunPaths {
        RunPaths {
            root: self.output_dir.clone(),
        }
    }

    fn n_filters(&self, dims: usize) -> (usize, usize) {
        self.workload.n_filters.unwrap_or((1, dims.max(1)))
    }

    fn base_spec(&self, dims: usize) -> WorkloadSpec {
        WorkloadSpec {
            n_queries: self.workload.n_train,
            n_filters: self.n_filters(dims),
            shifting_attribute: self.workload.shifting_attribute,
            center_bounds: self.workload.center_bounds,
            length_bounds: self.workload.length_bounds,
            other_columns: self.workload.other_columns.clone(),
            seed: self.derive_seed("workload/train"),
        }
    }

    /// `(train, test_indist, test_ood)` sampling specs.
    pub fn workload_specs(&self, dims: usize) -> Result<(WorkloadSpec, WorkloadSpec, Option<WorkloadSpec>)> {
        let base = self.base_spec(dims);
        let (train, ood) = match &self.scenario {
            OodScenario::None => (base, None),
            OodScenario::CenterMove {
                train_center,
                test_center,
            } => {
                let (a, b) = center_move_specs(&base, *train_center, *test_center)?;
                (a, Some(b))
            }
            OodScenario::GranularityShift {
                train_length,
                test_length,
            } => {
                let (a, b) = granularity_shift_specs(&base, *train_length, *test_length)?;
                (a, Some(b))
            }
        };
        train.validate(dims)?;
        let indist = WorkloadSpec {
            n_queries: self.workload.n_test,
            seed: self.derive_seed("workload/test_indist"),
            ..train.clone()
        };
        let ood = ood.map(|s| WorkloadSpec {
            n_queries: self.workload.n_test,
            seed: self.derive_seed("workload/test_ood"),
            ..s
        });
        Ok((train, indist, ood))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Set `path` (dot-separated; numeric segments index arrays) in `root` to
/// `raw` parsed as JSON, or as a plain string if it is not valid JSON.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            return Err(Error::Config(format!("empty segment in override key {path:?}")));
        }
        let last = i + 1 == segments.len();
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| Error::Config(format!("{path:?}: {seg:?} is not an array index")))?;
                let len = items.len();
                items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("{path:?}: index {idx} out of range ({len} items)")))?
            }
            Value::Object(map) => map
                .entry(seg.to_string())
                .or_insert_with(|| if last { Value::Null } else { Value::Object(Default::default()) }),
            _ => return Err(Error::Config(format!("{path:?}: cannot descend into a scalar at {seg:?}"))),
        };
    }
    *cur = value;
    Ok(())
}

/// Config from an optional JSON file (missing keys take defaults) with
/// `key=value` overrides applied in order.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut v = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => serde_json::to_value(ExperimentConfig::default())?,
    };
    for o in overrides {
        apply_override(&mut v, o)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(v)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data.csv")
    }
    pub fn workload(&self, tag: WorkloadTag) -> PathBuf {
        self.root.join("workloads").join(format!("{}.jsonl", tag.as_str()))
    }
    pub fn workload_meta(&self) -> PathBuf {
        self.root.join("workloads").join("meta.json")
    }
    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.json"))
    }
    pub fn loss_trace(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.loss.csv"))
    }
    pub fn measure_json(&self) -> PathBuf {
        self.root.join("measure.json")
    }
    pub fn measure_txt(&self) -> PathBuf {
        self.root.join("measure.txt")
    }
    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }
}

/// Index of the artifacts in a run directory and the stage that wrote each.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub artifacts: BTreeMap<String, String>,
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Artifacts need a `config_hash` field matching the current config.
fn check_hash(path: &Path, found: &str, cfg_hash: &str) -> Result<()> {
    if found != cfg_hash {
        return Err(Error::Config(format!(
            "{} was produced by config {found}, current config is {cfg_hash}; rerun the earlier stages",
            path.display()
        )));
    }
    Ok(())
}

fn record(cfg: &ExperimentConfig, stage: &str, files: &[PathBuf]) -> Result<()> {
    let paths = cfg.paths();
    let hash = cfg.hash();
    let mut m: Manifest = if paths.manifest().exists() {
        read_json(&paths.manifest())?
    } else {
        Manifest::default()
    };
    if m.config_hash != hash {
        m = Manifest {
            config_hash: hash,
            artifacts: BTreeMap::new(),
        };
        write_json(&paths.config(), cfg)?;
        m.artifacts.insert("config.json".into(), "config".into());
    }
    for f in files {
        m.artifacts.insert(paths.relative(f), stage.to_string());
    }
    write_json(&paths.manifest(), &m)
}

/// Write the dataset (`data.csv` plus its metadata sidecar).
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let paths = cfg.paths();
    fs::create_dir_all(&paths.root).map_err(|e| Error::io(&paths.root, e))?;
    let ds = match &cfg.dataset {
        DatasetSource::Gaussian {
            dims,
            rows,
            correlation,
        } => generate_gaussian(&GaussianSpec {
            dims: *dims,
            rows: *rows,
            correlation: *correlation,
            seed: cfg.derive_seed("data"),
        })?,
        DatasetSource::Csv { path, has_header } => load_csv(path, *has_header)?,
    };
    ds.save(&paths.data(), Some(&cfg.hash()))?;
    record(cfg, "gen-data", &[paths.data(), meta_path(&paths.data())])?;
    Ok(ds)
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let path = cfg.paths().data();
    let meta: crate::data::DatasetMeta = read_json(&meta_path(&path))?;
    check_hash(&path, meta.config_hash.as_deref().unwrap_or(""), &cfg.hash())?;
    Dataset::open(&path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadMeta {
    pub config_hash: String,
    pub scenario: OodScenario,
    pub train_spec: WorkloadSpec,
    pub test_indist_spec: WorkloadSpec,
    pub test_ood_spec: Option<WorkloadSpec>,
    /// Queries per workload after overlap removal.
    pub counts: BTreeMap<String, usize>,
    /// Test queries dropped because they duplicated an earlier workload's.
    pub overlap_removed: BTreeMap<String, usize>,
    /// Estimated `C2` between the training and shifted test distributions;
    /// `None` if unbounded or without a shift.
    pub c2: Option<f64>,
    pub c2_unbounded: bool,
}

pub struct Workloads {
    pub train: Workload,
    pub test_indist: Workload,
    pub test_ood: Option<Workload>,
    pub meta: WorkloadMeta,
}

impl Workloads {
    pub fn tests(&self) -> impl Iterator<Item = &Workload> + '_ {
        std::iter::once(&self.test_indist).chain(self.test_ood.as_ref())
    }
}

/// Sample and label the train, in-distribution test and shifted test
/// workloads; duplicates of earlier workloads are removed from later ones.
pub fn cmd_gen_workload(cfg: &ExperimentConfig) -> Result<Workloads> {
    let ds = load_dataset(cfg)?;
    let paths = cfg.paths();
    let (train_spec, indist_spec, ood_spec) = cfg.workload_specs(ds.dims())?;
    let train = sample_workload(&train_spec, &ds, WorkloadTag::Train)?;
    let mut test_indist = sample_workload(&indist_spec, &ds, WorkloadTag::TestIndist)?;
    let mut overlap = BTreeMap::new();
    overlap.insert("test_indist".to_string(), test_indist.remove_overlap(&train));
    let test_ood = match &ood_spec {
        Some(spec) => {
            let mut w = sample_workload(spec, &ds, WorkloadTag::TestOod)?;
            let n = w.remove_overlap(&train) + w.remove_overlap(&test_indist);
            overlap.insert("test_ood".to_string(), n);
            Some(w)
        }
        None => None,
    };
    let c2 = match &ood_spec {
        Some(spec) => Some(estimate_c2(&train_spec, spec, cfg.c2.grid_points, cfg.c2.samples)?),
        None => None,
    };
    let mut counts = BTreeMap::new();
    let mut files = Vec::new();
    for w in std::iter::once(&train).chain(Some(&test_indist)).chain(test_ood.as_ref()) {
        counts.insert(w.tag.as_str().to_string(), w.len());
        let p = paths.workload(w.tag);
        ensure_parent(&p)?;
        w.write_jsonl(&p)?;
        files.push(p);
    }
    let meta = WorkloadMeta {
        config_hash: cfg.hash(),
        scenario: cfg.scenario.clone(),
        train_spec,
        test_indist_spec: indist_spec,
        test_ood_spec: ood_spec,
        counts,
        overlap_removed: overlap,
        c2: c2.filter(|c| c.is_finite()),
        c2_unbounded: c2.is_some_and(|c| c.is_infinite()),
    };
    write_json(&paths.workload_meta(), &meta)?;
    files.push(paths.workload_meta());
    record(cfg, "gen-workload", &files)?;
    Ok(Workloads {
        train,
        test_indist,
        test_ood,
        meta,
    })
}

pub fn load_workloads(cfg: &ExperimentConfig) -> Result<Workloads> {
    let paths = cfg.paths();
    let meta: WorkloadMeta = read_json(&paths.workload_meta())?;
    check_hash(&paths.workload_meta(), &meta.config_hash, &cfg.hash())?;
    let train = Workload::read_jsonl(&paths.workload(WorkloadTag::Train), meta.train_spec.clone())?;
    let test_indist = Workload::read_jsonl(&paths.workload(WorkloadTag::TestIndist), meta.test_indist_spec.clone())?;
    let test_ood = match &meta.test_ood_spec {
        Some(spec) => Some(Workload::read_jsonl(&paths.workload(WorkloadTag::TestOod), spec.clone())?),
        None => None,
    };
    Ok(Workloads {
        train,
        test_indist,
        test_ood,
        meta,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub config_hash: String,
    pub estimator: String,
    pub checkpoint: EstimatorCheckpoint,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    pub resume: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub name: String,
    pub loss_trace: Option<Vec<f64>>,
}

fn seeded(cfg: &ExperimentConfig, name: &str, train: &TrainConfig) -> TrainConfig {
    TrainConfig {
        seed: cfg.derive_seed(&format!("train/{name}")),
        ..train.clone()
    }
}

fn build_estimator(
    cfg: &ExperimentConfig,
    e: &EstimatorConfig,
    ds: &Dataset,
    train: &Workload,
) -> Result<(EstimatorCheckpoint, Option<Vec<f64>>)> {
    let name = e.name();
    let ck = |est: &dyn SelectivityEstimator| est.checkpoint().expect("trained estimators persist");
    Ok(match e {
        EstimatorConfig::Direct { train: t } => {
            let (est, trace) = train_direct(ds, train, &seeded(cfg, name, t))?;
            (ck(&est), Some(trace))
        }
        EstimatorConfig::Neurocdf { train: t } => {
            let out = train_neurocdf(ds, train, &seeded(cfg, name, t))?;
            (ck(&out.estimator), Some(out.loss_trace))
        }
        EstimatorConfig::Seconcdf {
            train: t,
            omega1,
            omega2,
            consistency_batch,
        } => {
            let sc = SeconcdfConfig::broadened(
                &train.spec,
                *omega1,
                *omega2,
                *consistency_batch,
                cfg.derive_seed("consistency"),
            );
            let (est, trace) = train_seconcdf(ds, train, &seeded(cfg, name, t), &sc)?;
            (ck(&est), Some(trace))
        }
        EstimatorConfig::Histogram {
            buckets_per_dim,
            cell_cap,
        } => (ck(&build_grid_histogram(ds, *buckets_per_dim, *cell_cap)?), None),
        EstimatorConfig::Sampling { sample_size } => (
            ck(&build_sampling_estimator(ds, *sample_size, cfg.derive_seed("sampling"))?),
            None,
        ),
        EstimatorConfig::Parametric { degree } => (ck(&fit_parametric(train, *degree)?), None),
        EstimatorConfig::Leo { buckets_per_dim } => {
            let base = build_grid_histogram(ds, *buckets_per_dim, DEFAULT_GRID_CELL_CAP)?;
            (ck(&build_leo(Box::new(base), train)?), None)
        }
    })
}

/// `epoch,loss,running_min` with a leading `# config_hash:` comment line.
pub fn loss_trace_csv(trace: &[f64], config_hash: &str) -> String {
    let mut s = format!("# config_hash: {config_hash}\nepoch,loss,running_min\n");
    let mut best = f64::INFINITY;
    for (i, l) in trace.iter().enumerate() {
        best = best.min(*l);
        s.push_str(&format!("{},{},{}\n", i + 1, l, best));
    }
    s
}

/// Train (or build) every configured estimator and write its checkpoint.
pub fn cmd_train(cfg: &ExperimentConfig, opts: TrainOptions) -> Result<Vec<TrainedModel>> {
    if opts.resume {
        return Err(Error::Unsupported(
            "resuming from a checkpoint; rerun `train` to retrain from scratch".into(),
        ));
    }
    let ds = load_dataset(cfg)?;
    let wl = load_workloads(cfg)?;
    let paths = cfg.paths();
    let hash = cfg.hash();
    let mut out = Vec::new();
    let mut files = Vec::new();
    for e in &cfg.estimators {
        let name = e.name();
        let (checkpoint, trace) = build_estimator(cfg, e, &ds, &wl.train)?;
        let p = paths.model(name);
        write_json(
            &p,
            &ModelFile {
                config_hash: hash.clone(),
                estimator: name.to_string(),
                checkpoint,
            },
        )?;
        files.push(p);
        if let Some(t) = &trace {
            let p = paths.loss_trace(name);
            write_text(&p, &loss_trace_csv(t, &hash))?;
            files.push(p);
        }
        out.push(TrainedModel {
            name: name.to_string(),
            loss_trace: trace,
        });
    }
    record(cfg, "train", &files)?;
    Ok(out)
}

pub fn load_estimator(cfg: &ExperimentConfig, name: &str) -> Result<Box<dyn SelectivityEstimator>> {
    let p = cfg.paths().model(name);
    let f: ModelFile = read_json(&p)?;
    check_hash(&p, &f.config_hash, &cfg.hash())?;
    f.checkpoint.restore()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureFile {
    pub config_hash: String,
    pub settings: MeasureCheckSettings,
    pub reports: Vec<MeasureCheckReport>,
}

/// Probe ranges uniform over the domain with the workload's filter counts.
pub fn measure_probes(cfg: &ExperimentConfig, dims: usize) -> Result<MeasureProbes> {
    let spec = WorkloadSpec {
        n_filters: cfg.n_filters(dims),
        shifting_attribute: cfg.workload.shifting_attribute,
        ..WorkloadSpec::uniform(dims, 0, 0)
    };
    MeasureProbes::generate(&spec, dims, &cfg.measure, cfg.derive_seed("measure"))
}

/// Additivity and monotonicity checks for every trained estimator.
pub fn cmd_check_measure(cfg: &ExperimentConfig) -> Result<Vec<MeasureCheckReport>> {
    let ds = load_dataset(cfg)?;
    let probes = measure_probes(cfg, ds.dims())?;
    let mut reports = Vec::new();
    for e in &cfg.estimators {
        let est = load_estimator(cfg, e.name())?;
        reports.push(run_measure_check(est.as_ref(), &probes, &cfg.measure)?);
    }
    let paths = cfg.paths();
    let hash = cfg.hash();
    write_json(
        &paths.measure_json(),
        &MeasureFile {
            config_hash: hash.clone(),
            settings: cfg.measure.clone(),
            reports: reports.clone(),
        },
    )?;
    write_text(
        &paths.measure_txt(),
        &format!("# config_hash: {hash}\n{}", render_measure_table(&reports)),
    )?;
    record(cfg, "check-measure", &[paths.measure_json(), paths.measure_txt()])?;
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(flatten)]
    pub eval: EvalReport,
    pub tier_metric: TierMetric,
    pub tier: Tier,
}

/// Model invocations per query of an estimator, against the `2^{n_c}` bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CallAudit {
    pub estimator: String,
    pub n_queries: usize,
    pub mean_calls: f64,
    pub max_calls: u64,
    /// Every query used at most `2^{n_c}` calls.
    pub within_bound: bool,
    /// Every query whose constrained lower bounds are all positive used
    /// exactly `2^{n_c}` calls.
    pub tight_when_lower_bounds_positive: bool,
}

pub fn audit_calls<'a>(
    est: &dyn SelectivityEstimator,
    workloads: impl IntoIterator<Item = &'a Workload>,
) -> CallAudit {
    let mut n = 0usize;
    let mut total = 0u64;
    let mut max_calls = 0u64;
    let mut within = true;
    let mut tight = true;
    for w in workloads {
        for q in w.queries() {
            let before = est.calls();
            est.estimate(q);
            let c = est.calls() - before;
            let bound = 1u64 << q.n_constrained();
            within &= c <= bound;
            if q.constrained_columns().all(|i| q.effective(i).lo > 0.0) {
                tight &= c == bound;
            }
            debug_assert_eq!(c as usize, expand_query(q).terms.len());
            n += 1;
            total += c;
            max_calls = max_calls.max(c);
        }
    }
    CallAudit {
        estimator: est.name().to_string(),
        n_queries: n,
        mean_calls: if n == 0 { 0.0 } else { total as f64 / n as f64 },
        max_calls,
        within_bound: within,
        tight_when_lower_bounds_positive: tight,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub scenario: OodScenario,
    pub c2: Option<f64>,
    pub c2_unbounded: bool,
    pub rows: Vec<ReportRow>,
    pub degradations: Vec<Degradation>,
    pub call_audits: Vec<CallAudit>,
    pub measure: Option<Vec<MeasureCheckReport>>,
}

impl ExperimentReport {
    pub fn row(&self, estimator: &str, tag: WorkloadTag) -> Option<&EvalReport> {
        self.rows
            .iter()
            .map(|r| &r.eval)
            .find(|e| e.model_name == estimator && e.workload_tag == tag)
    }

    pub fn measure_for(&self, estimator: &str) -> Option<&MeasureCheckReport> {
        self.measure.as_ref()?.iter().find(|m| m.estimator == estimator)
    }
}

pub fn render_report(r: &ExperimentReport) -> String {
    let mut s = format!("config_hash: {}\n", r.config_hash);
    let scenario = match &r.scenario {
        OodScenario::None => "none".to_string(),
        OodScenario::CenterMove {
            train_center,
            test_center,
        } => format!(
            "center_move train_center=[{}, {}] test_center=[{}, {}]",
            train_center.lo, train_center.hi, test_center.lo, test_center.hi
        ),
        OodScenario::GranularityShift {
            train_length,
            test_length,
        } => format!(
            "granularity_shift train_length=[{}, {}] test_length=[{}, {}]",
            train_length.lo, train_length.hi, test_length.lo, test_length.hi
        ),
    };
    s.push_str(&format!("scenario: {scenario}\n"));
    match (r.c2, r.c2_unbounded) {
        (_, true) => s.push_str("c2: unbounded\n"),
        (Some(c), _) => s.push_str(&format!("c2: {c:.4}\n")),
        (None, _) => {}
    }
    s.push('\n');
    let rows: Vec<(EvalReport, TierMetric)> = r.rows.iter().map(|x| (x.eval.clone(), x.tier_metric)).collect();
    s.push_str(&render_eval_table(&rows));
    if !r.degradations.is_empty() {
        s.push_str("\nshifted / in-distribution\n");
        s.push_str(&format!(
            "{:<10}  {:>9}  {:>9}  {:>9}  {:>5}  {:>5}\n",
            "estimator", "rmse x", "q50 x", "q90 x", "in", "ood"
        ));
        for d in &r.degradations {
            s.push_str(&format!(
                "{:<10}  {:>9.3}  {:>9.3}  {:>9.3}  {:>5}  {:>5}\n",
                d.model_name,
                d.rmse_ratio,
                d.qerror_median_ratio,
                d.qerror_p90_ratio,
                d.in_dist_tier.stars(),
                d.ood_tier.stars()
            ));
        }
    }
    for a in &r.call_audits {
        s.push_str(&format!(
            "\n{} calls per query: mean {:.3}, max {}, within 2^n_c: {}, tight when all lo > 0: {}\n",
            a.estimator, a.mean_calls, a.max_calls, a.within_bound, a.tight_when_lower_bounds_positive
        ));
    }
    if let Some(m) = &r.measure {
        s.push('\n');
        s.push_str(&render_measure_table(m));
    }
    s
}

/// Evaluate every estimator on each test workload and assemble the report,
/// including measure-check results when `check-measure` has run.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let ds_meta: crate::data::DatasetMeta = read_json(&meta_path(&cfg.paths().data()))?;
    let wl = load_workloads(cfg)?;
    let floor = cfg.metrics.clip_floor.unwrap_or(1.0 / ds_meta.n_rows.max(1) as f64);
    let mut rows = Vec::new();
    let mut degradations = Vec::new();
    let mut call_audits = Vec::new();
    for e in &cfg.estimators {
        let est = load_estimator(cfg, e.name())?;
        let metric = e.tier_metric();
        let mut evals = Vec::new();
        for w in wl.tests() {
            let ev = evaluate(est.as_ref(), w, floor)?;
            rows.push(ReportRow {
                tier: ev.tier(metric),
                tier_metric: metric,
                eval: ev.clone(),
            });
            evals.push(ev);
        }
        if let [a, b] = evals.as_slice() {
            degradations.push(compare(a, b, metric));
        }
        if matches!(e, EstimatorConfig::Neurocdf { .. }) {
            call_audits.push(audit_calls(est.as_ref(), wl.tests()));
        }
    }
    let paths = cfg.paths();
    let hash = cfg.hash();
    let measure = if paths.measure_json().exists() {
        let m: MeasureFile = read_json(&paths.measure_json())?;
        check_hash(&paths.measure_json(), &m.config_hash, &hash)?;
        Some(m.reports)
    } else {
        None
    };
    let report = ExperimentReport {
        config_hash: hash,
        scenario: wl.meta.scenario.clone(),
        c2: wl.meta.c2,
        c2_unbounded: wl.meta.c2_unbounded,
        rows,
        degradations,
        call_audits,
        measure,
    };
    write_json(&paths.report_json(), &report)?;
    write_text(&paths.report_txt(), &render_report(&report))?;
    record(cfg, "eval", &[paths.report_json(), paths.report_txt()])?;
    Ok(report)
}

/// The report written by the last `eval`.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let p = cfg.paths().report_json();
    let r: ExperimentReport = read_json(&p)?;
    check_hash(&p, &r.config_hash, &cfg.hash())?;
    Ok(r)
}

/// Every stage in order.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cmd_gen_data(cfg)?;
    cmd_gen_workload(cfg)?;
    cmd_train(cfg, TrainOptions::default())?;
    cmd_check_measure(cfg)?;
    cmd_eval(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> ExperimentConfig {
        let small = TrainConfig {
            epochs: 2,
            hidden_layers: vec![8],
            ..TrainConfig::default()
        };
        ExperimentConfig {
            output_dir: dir.to_path_buf(),
            dataset: DatasetSource::Gaussian {
                dims: 3,
                rows: 500,
                correlation: 0.5,
            },
            workload: WorkloadSettings {
                n_train: 200,
                n_test: 50,
                n_filters: Some((1, 2)),
                ..WorkloadSettings::default()
            },
            estimators: vec![
                EstimatorConfig::Direct { train: small.clone() },
                EstimatorConfig::Neurocdf {
                    train: TrainConfig {
                        loss: LossKind::Mse,
                        ..small.clone()
                    },
                },
                EstimatorConfig::Histogram {
                    buckets_per_dim: 4,
                    cell_cap: DEFAULT_GRID_CELL_CAP,
                },
            ],
            measure: MeasureCheckSettings {
                n_triples: 20,
                n_chains: 5,
                grid_points: 5,
                ..MeasureCheckSettings::default()
            },
            c2: C2Settings {
                grid_points: 50,
                samples: 2_000,
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        apply_override(&mut v, "workload.n_train=123").unwrap();
        apply_override(&mut v, "estimators.0.train.epochs=7").unwrap();
        apply_override(&mut v, "output_dir=some/dir").unwrap();
        let cfg: ExperimentConfig = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(cfg.workload.n_train, 123);
        assert_eq!(cfg.output_dir, PathBuf::from("some/dir"));
        match &cfg.estimators[0] {
            EstimatorConfig::Direct { train } => assert_eq!(train.epochs, 7),
            other => panic!("{other:?}"),
        }
        assert!(apply_override(&mut v, "estimators.99.kind=x").is_err());
        assert!(apply_override(&mut v, "no_equals_sign").is_err());
        apply_override(&mut v, "workload.typo=1").unwrap();
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }

    #[test]
    fn hash_ignores_output_dir_and_tracks_everything_else() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
        assert_ne!(a.derive_seed("x"), a.derive_seed("y"));
        assert_ne!(a.derive_seed("x"), c.derive_seed("x"));
    }

    #[test]
    fn duplicate_estimators_rejected() {
        let cfg = ExperimentConfig {
            estimators: vec![
                EstimatorConfig::Parametric { degree: 1 },
                EstimatorConfig::Parametric { degree: 2 },
            ],
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn loss_trace_has_running_minimum() {
        let s = loss_trace_csv(&[3.0, 1.0, 2.0], "h");
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# config_hash: h");
        assert_eq!(lines[1], "epoch,loss,running_min");
        assert_eq!(lines[4], "3,2,1");
    }

    #[test]
    fn pipeline_writes_consistent_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(&dir.path().join("nested/run"));
        let report = run_pipeline(&cfg).unwrap();
        let paths = cfg.paths();
        let manifest: Manifest = read_json(&paths.manifest()).unwrap();
        assert_eq!(manifest.config_hash, cfg.hash());
        for f in manifest.artifacts.keys() {
            assert!(paths.root.join(f).exists(), "{f}");
        }
        assert!(manifest.artifacts.contains_key("models/neurocdf.loss.csv"));
        assert!(!paths.loss_trace("histogram").exists());

        // 3 estimators x 2 test workloads.
        assert_eq!(report.rows.len(), 6);
        assert_eq!(report.degradations.len(), 3);
        let audit = &report.call_audits[0];
        assert!(audit.within_bound && audit.tight_when_lower_bounds_positive);
        assert!(report.c2.is_some());
        assert_eq!(report.measure.as_ref().unwrap().len(), 3);
        assert!(report.measure_for("neurocdf").unwrap().additivity.passed);
        assert_eq!(cmd_report(&cfg).unwrap(), report);

        let wl = load_workloads(&cfg).unwrap();
        for q in wl.test_indist.queries().chain(wl.test_ood.as_ref().unwrap().queries()) {
            assert!(!wl.train.queries().any(|t| t == q));
        }

        assert!(matches!(
            cmd_train(&cfg, TrainOptions { resume: true }),
            Err(Error::Unsupported(_))
        ));

        let changed = ExperimentConfig { seed: 9, ..cfg.clone() };
        assert!(matches!(cmd_train(&changed, TrainOptions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn scenario_none_writes_two_workloads() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            scenario: OodScenario::None,
            ..tiny(dir.path())
        };
        cmd_gen_data(&cfg).unwrap();
        let wl = cmd_gen_workload(&cfg).unwrap();
        assert!(wl.test_ood.is_none());
        assert!(wl.meta.c2.is_none());
        assert!(!cfg.paths().workload(WorkloadTag::TestOod).exists());
        assert_eq!(wl.meta.counts.len(), 2);
    }

    #[test]
    fn gen_data_is_byte_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let a = tiny(&dir.path().join("a"));
        let b = tiny(&dir.path().join("b"));
        cmd_gen_data(&a).unwrap();
        cmd_gen_data(&b).unwrap();
        let read = |c: &ExperimentConfig| fs::read(c.paths().data()).unwrap();
        assert_eq!(read(&a), read(&b));
        let meta = |c: &ExperimentConfig| fs::read(meta_path(&c.paths().data())).unwrap();
        assert_eq!(meta(&a), meta(&b));
    }
}
