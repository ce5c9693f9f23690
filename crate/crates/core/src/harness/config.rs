//! Experiment configuration files.
//!
//! Flat `key = value` lines; `#` starts a comment. Keys are grouped by
//! prefix and every key not listed below is rejected.
//!
//! | key                         | default                       |
//! |-----------------------------|-------------------------------|
//! | `workload`                  | required: `cnn_mnist`, `mlp_mnist`, `knn_mnist` |
//! | `data.test_images`          | fixture `test-images.idx3-ubyte` |
//! | `data.test_labels`          | fixture `test-labels.idx1-ubyte` |
//! | `data.train_images`         | fixture `train-images.idx3-ubyte` (KNN only) |
//! | `data.train_labels`         | fixture `train-labels.idx1-ubyte` (KNN only) |
//! | `data.weights`              | fixture `cnn.weights` / `mlp.weights` |
//! | `data.manifest`             | fixture `<workload>.manifest` |
//! | `data.subset_size`          | 100                           |
//! | `data.subset_seed`          | 0                             |
//! | `data.knn_k`                | 5                             |
//! | `data.time_fraction.<id>`   | manifest value                |
//! | `fault.error_rate`          | 0.001                         |
//! | `fault.seed`                | 2017                          |
//! | `fault.value_model`         | `random_bit_pattern` or `uniform_in_range` |
//! | `fault.trials`              | 1000                          |
//! | `select.threshold`          | 0.10                          |
//! | `select.thresholds`         | `0.10,0.05,0.03` (sweep)      |
//! | `select.error_rates`        | `0.0001,0.001,0.005,0.01` (sweep) |
//! | `select.configuration`      | unset: `run` uses all candidates, `perf` selects; or `all`, `none`, `id,id` |
//! | `cost.hare_multiplier`      | 1.63                          |
//! | `cost.shr_store_factor`     | 0.05                          |
//! | `cost.shr_check_cost`       | calibrated                    |
//! | `cost.switch_penalty`       | calibrated                    |
//! | `output.dir`                | `out`                         |
//! | `output.formats`            | `json,csv`                    |
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ValueModel;
use crate::workloads::knn::DEFAULT_K;
use crate::workloads::WorkloadKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Which regions run non-crucially, when not chosen by the selector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConfigurationChoice {
    AllCandidates,
    None,
    Regions(BTreeSet<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub weights: PathBuf,
    pub manifest: PathBuf,
    pub subset_size: usize,
    pub subset_seed: u64,
    pub knn_k: usize,
    pub time_fractions: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaultConfig {
    pub error_rate: f64,
    pub seed: u64,
    pub value_model: ValueModel,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectConfig {
    pub threshold: f64,
    pub thresholds: Vec<f64>,
    pub error_rates: Vec<f64>,
    pub configuration: Option<ConfigurationChoice>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostConfig {
    pub hare_multiplier: f64,
    pub shr_store_factor: f64,
    pub shr_check_cost: Option<f64>,
    pub switch_penalty: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub workload: WorkloadKind,
    pub data: DataConfig,
    pub fault: FaultConfig,
    pub select: SelectConfig,
    pub cost: CostConfig,
    pub out_dir: PathBuf,
    pub formats: BTreeSet<OutputFormat>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let config = Self::parse(&text, &path.display().to_string(), base)?;
        config.check_paths(&path.display().to_string())?;
        Ok(config)
    }

    /// Parses `text` without touching the file system; relative paths are
    /// joined onto `base`.
    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Config { path: origin.to_owned(), line, message };
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(err(line, format!("expected `key = value`, found `{content}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            if !is_known_key(key) {
                return Err(err(line, format!("unknown key `{key}`")));
            }
            if value.is_empty() {
                return Err(err(line, format!("`{key}` has no value")));
            }
            if let Some((first, _)) = entries.insert(key.to_owned(), (line, value.to_owned())) {
                return Err(err(line, format!("`{key}` already set on line {first}")));
            }
        }

        let mut fields = Fields { entries, err: &err };
        let workload: WorkloadKind = fields.required("workload")?;
        let fixtures = crate::fixture_dir();
        let path = |fields: &mut Fields<'_>, key: &str, default: PathBuf| -> Result<PathBuf> {
            Ok(fields.raw(key).map_or(default, |(_, v)| base.join(v)))
        };
        let default_weights = match workload {
            WorkloadKind::MlpMnist => "mlp.weights",
            _ => "cnn.weights",
        };
        let mut time_fractions = BTreeMap::new();
        for key in fields.entries.keys().filter(|k| k.starts_with("data.time_fraction.")).cloned().collect::<Vec<_>>() {
            let id = key.trim_start_matches("data.time_fraction.").to_owned();
            let value: f64 = fields.required(&key)?;
            time_fractions.insert(id, value);
        }
        let data = DataConfig {
            test_images: path(&mut fields, "data.test_images", fixtures.join("test-images.idx3-ubyte"))?,
            test_labels: path(&mut fields, "data.test_labels", fixtures.join("test-labels.idx1-ubyte"))?,
            train_images: path(&mut fields, "data.train_images", fixtures.join("train-images.idx3-ubyte"))?,
            train_labels: path(&mut fields, "data.train_labels", fixtures.join("train-labels.idx1-ubyte"))?,
            weights: path(&mut fields, "data.weights", fixtures.join(default_weights))?,
            manifest: path(&mut fields, "data.manifest", fixtures.join(workload.manifest_file()))?,
            subset_size: fields.optional("data.subset_size", 100)?,
            subset_seed: fields.optional("data.subset_seed", 0)?,
            knn_k: fields.optional("data.knn_k", DEFAULT_K)?,
            time_fractions,
        };
        let fault = FaultConfig {
            error_rate: fields.optional("fault.error_rate", 0.001)?,
            seed: fields.optional("fault.seed", 2017)?,
            value_model: fields.optional_with("fault.value_model", ValueModel::RandomBitPattern, parse_value_model)?,
            trials: fields.optional("fault.trials", 1000)?,
        };
        let select = SelectConfig {
            threshold: fields.optional("select.threshold", 0.10)?,
            thresholds: fields.optional_with("select.thresholds", vec![0.10, 0.05, 0.03], parse_list)?,
            error_rates: fields.optional_with("select.error_rates", vec![0.0001, 0.001, 0.005, 0.01], parse_list)?,
            configuration: match fields.raw("select.configuration") {
                None => None,
                Some((_, v)) => Some(parse_choice(&v)),
            },
        };
        let cost = CostConfig {
            hare_multiplier: fields.optional("cost.hare_multiplier", 1.63)?,
            shr_store_factor: fields.optional("cost.shr_store_factor", crate::perf::DEFAULT_SHR_STORE_FACTOR)?,
            shr_check_cost: fields.optional_with("cost.shr_check_cost", None, |v| v.parse().map(Some).map_err(|e| format!("{e}")))?,
            switch_penalty: fields.optional_with("cost.switch_penalty", None, |v| v.parse().map(Some).map_err(|e| format!("{e}")))?,
        };
        let out_dir = path(&mut fields, "output.dir", base.join("out"))?;
        let formats = fields.optional_with("output.formats", BTreeSet::from([OutputFormat::Json, OutputFormat::Csv]), parse_formats)?;

        let config = Self { workload, data, fault, select, cost, out_dir, formats };
        config.validate().map_err(|m| err(0, m))?;
        Ok(config)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let rate = |r: f64| (0.0..=1.0).contains(&r);
        let threshold = |t: f64| t > 0.0 && t <= 1.0;
        if !rate(self.fault.error_rate) || !self.select.error_rates.iter().all(|r| rate(*r)) {
            return Err("error rates must lie in [0, 1]".into());
        }
        if !threshold(self.select.threshold) || !self.select.thresholds.iter().all(|t| threshold(*t)) {
            return Err("thresholds must lie in (0, 1]".into());
        }
        if self.select.thresholds.is_empty() || self.select.error_rates.is_empty() {
            return Err("sweep grids must not be empty".into());
        }
        if self.fault.trials == 0 {
            return Err("fault.trials must be at least 1".into());
        }
        if self.data.subset_size == 0 || self.data.knn_k == 0 {
            return Err("data.subset_size and data.knn_k must be at least 1".into());
        }
        if !(self.cost.hare_multiplier >= 1.0) {
            return Err(format!("cost.hare_multiplier {} is below 1", self.cost.hare_multiplier));
        }
        let factors = [Some(self.cost.shr_store_factor), self.cost.shr_check_cost, self.cost.switch_penalty];
        if factors.iter().flatten().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err("cost factors must be finite and non-negative".into());
        }
        if self.formats.is_empty() {
            return Err("output.formats is empty".into());
        }
        Ok(())
    }

    /// Input files this workload reads.
    pub fn input_paths(&self) -> Vec<&Path> {
        let d = &self.data;
        let mut paths = vec![d.test_images.as_path(), d.test_labels.as_path(), d.manifest.as_path()];
        match self.workload {
            WorkloadKind::KnnMnist => paths.extend([d.train_images.as_path(), d.train_labels.as_path()]),
            _ => paths.push(d.weights.as_path()),
        }
        paths
    }

    fn check_paths(&self, origin: &str) -> Result<()> {
        match self.input_paths().into_iter().find(|p| !p.is_file()) {
            Some(missing) => Err(Error::Config {
                path: origin.to_owned(),
                line: 0,
                message: format!("input file {} does not exist", missing.display()),
            }),
            None => Ok(()),
        }
    }

    pub fn wants(&self, format: OutputFormat) -> bool {
        self.formats.contains(&format)
    }
}

const KEYS: &[&str] = &[
    "workload",
    "data.test_images",
    "data.test_labels",
    "data.train_images",
    "data.train_labels",
    "data.weights",
    "data.manifest",
    "data.subset_size",
    "data.subset_seed",
    "data.knn_k",
    "fault.error_rate",
    "fault.seed",
    "fault.value_model",
    "fault.trials",
    "select.threshold",
    "select.thresholds",
    "select.error_rates",
    "select.configuration",
    "cost.hare_multiplier",
    "cost.shr_store_factor",
    "cost.shr_check_cost",
    "cost.switch_penalty",
    "output.dir",
    "output.formats",
];

fn is_known_key(key: &str) -> bool {
    KEYS.contains(&key)
        || key.strip_prefix("data.time_fraction.").is_some_and(|id| !id.is_empty())
}

struct Fields<'e> {
    entries: BTreeMap<String, (usize, String)>,
    err: &'e dyn Fn(usize, String) -> Error,
}

impl Fields<'_> {
    fn raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.get(key).cloned()
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            Some((line, v)) => v.parse().map_err(|e| (self.err)(line, format!("`{key}`: {e}"))),
            None => Err((self.err)(0, format!("missing required key `{key}`"))),
        }
    }

    fn optional<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.optional_with(key, default, |v| v.parse::<T>().map_err(|e| e.to_string()))
    }

    fn optional_with<T>(&mut self, key: &str, default: T, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<T> {
        match self.raw(key) {
            Some((line, v)) => parse(&v).map_err(|e| (self.err)(line, format!("`{key}`: {e}"))),
            None => Ok(default),
        }
    }
}

fn parse_value_model(v: &str) -> std::result::Result<ValueModel, String> {
    match v {
        "random_bit_pattern" => Ok(ValueModel::RandomBitPattern),
        "uniform_in_range" => Ok(ValueModel::UniformInRange),
        other => Err(format!("unknown value model `{other}`")),
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',').map(|s| s.trim().parse::<f64>().map_err(|e| format!("`{}`: {e}", s.trim()))).collect()
}

fn parse_choice(v: &str) -> ConfigurationChoice {
    match v {
        "all" => ConfigurationChoice::AllCandidates,
        "none" => ConfigurationChoice::None,
        list => ConfigurationChoice::Regions(list.split(',').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect()),
    }
}

fn parse_formats(v: &str) -> std::result::Result<BTreeSet<OutputFormat>, String> {
    v.split(',')
        .map(|s| match s.trim() {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(format!("unknown output format `{other}`")),
        })
        .collect()
}
