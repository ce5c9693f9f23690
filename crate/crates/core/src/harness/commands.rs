//! The `run`, `select`, `sweep` and `perf` experiments.
//!
//! Every command writes its primary artifacts atomically into the output
//! directory; they depend only on the config and the input files, so a
//! rerun reproduces them byte for byte. Wall-clock information goes into a
//! `<command>.meta.json` sidecar.
//!
//! | command  | artifacts                                         |
//! |----------|---------------------------------------------------|
//! | `run`    | `run.json`, `run.csv`, `events.log`               |
//! | `select` | `select.json`, `select.csv`                       |
//! | `sweep`  | `sweep.csv`, `sweep.json`                         |
//! | `perf`   | `perf.json`, `perf.csv`                           |
//!
//! `.json` and `.csv` files are written according to `output.formats`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::analysis::{evaluate_with_events, select_configuration, sweep, EventSummary, SelectionConstraints, SelectionResult, SweepCell};
use crate::error::{Error, Result};
use crate::model::{all_candidates, AccuracyReport, Configuration, FaultSpec, RegionTable};
use crate::perf::{calibrate, improvement_over_hare, price, price_config, CostModel, OverheadReport};
use crate::resilience::region_transition_count;
use crate::workloads::WorkloadKind;
use crate::WorkloadInstance;
use crate::Dataset;

use super::config::{ConfigurationChoice, ExperimentConfig, OutputFormat};

/// Trial count of `--fast`.
pub const FAST_TRIALS: usize = 200;

pub const SWEEP_COLUMNS: [&str; 9] = [
    "workload",
    "threshold",
    "error_rate",
    "regions_kept",
    "noncrucial_time_fraction",
    "accuracy_loss",
    "cl_time",
    "hare_time",
    "improvement_pct",
];

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("config error: {0}")]
    Config(Error),
    #[error("data error: {0}")]
    Data(Error),
    #[error("{0}")]
    Failed(Error),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 2,
            CommandError::Data(_) => 3,
            CommandError::Failed(_) => 1,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub fast: bool,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, CommandError> {
    let mut config = ExperimentConfig::load(path).map_err(CommandError::Config)?;
    if overrides.fast {
        config.fault.trials = FAST_TRIALS;
    }
    if let Some(trials) = overrides.trials {
        if trials == 0 {
            return Err(CommandError::Config(Error::Config {
                path: "--trials".into(),
                line: 0,
                message: "must be at least 1".into(),
            }));
        }
        config.fault.trials = trials;
    }
    if let Some(seed) = overrides.seed {
        config.fault.seed = seed;
    }
    if let Some(out) = &overrides.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

/// A loaded workload and its test set.
pub struct Experiment {
    pub instance: WorkloadInstance,
    pub test: Dataset,
}

pub fn load_experiment(config: &ExperimentConfig) -> Result<Experiment, CommandError> {
    let data = &config.data;
    let load = || -> Result<Experiment> {
        let test = Dataset::load(&data.test_images, &data.test_labels)?.subset(data.subset_size, data.subset_seed)?;
        let instance = match config.workload {
            WorkloadKind::CnnMnist => WorkloadInstance::load_cnn(&data.weights, &data.manifest)?,
            WorkloadKind::MlpMnist => WorkloadInstance::load_mlp(&data.weights, &data.manifest)?,
            WorkloadKind::KnnMnist => {
                let train = Dataset::load(&data.train_images, &data.train_labels)?;
                WorkloadInstance::load_knn(&train, data.knn_k, &data.manifest)?
            }
        };
        Ok(Experiment { instance, test })
    };
    let mut experiment = load().map_err(CommandError::Data)?;
    if !data.time_fractions.is_empty() {
        let regions = experiment.instance.regions().with_time_fractions(&data.time_fractions);
        experiment.instance = regions.and_then(|r| experiment.instance.with_regions(r)).map_err(CommandError::Config)?;
    }
    Ok(experiment)
}

fn fault_spec(config: &ExperimentConfig, error_rate: f64) -> Result<FaultSpec, CommandError> {
    FaultSpec::new(error_rate, config.fault.seed, config.fault.value_model).map_err(CommandError::Config)
}

fn chosen_configuration(choice: &ConfigurationChoice, regions: &RegionTable) -> Result<Configuration, CommandError> {
    match choice {
        ConfigurationChoice::AllCandidates => Ok(all_candidates(regions)),
        ConfigurationChoice::None => Ok(Configuration::all_crucial(regions)),
        ConfigurationChoice::Regions(ids) => {
            if regions.workload() == WorkloadKind::MlpMnist.name() && ids.contains(crate::workloads::mlp::INPUT) {
                return Err(CommandError::Config(Error::AttemptToDemoteInputLayer(crate::workloads::mlp::INPUT.into())));
            }
            Configuration::new(regions, ids.iter().cloned()).map_err(CommandError::Config)
        }
    }
}

/// Calibrated cost model with the config's overrides applied.
pub fn cost_model(config: &ExperimentConfig, regions: &RegionTable) -> Result<CostModel<f64>, CommandError> {
    let c = &config.cost;
    let mut cm = calibrate(c.hare_multiplier, regions).map_err(CommandError::Config)?;
    cm.shr_store_factor = c.shr_store_factor;
    if let Some(v) = c.shr_check_cost {
        cm.shr_check_cost = v;
    }
    if let Some(v) = c.switch_penalty {
        cm.switch_penalty = v;
    }
    cm.validate().map_err(CommandError::Config)?;
    Ok(cm)
}

#[derive(Serialize)]
pub struct RunArtifact {
    pub workload: String,
    pub fault_spec: FaultSpec,
    pub report: AccuracyReport,
    pub events: EventSummary,
}

#[derive(Serialize)]
pub struct SelectArtifact {
    pub workload: String,
    pub constraints: SelectionConstraints,
    pub fault_spec: FaultSpec,
    pub result: SelectionResult,
}

#[derive(Serialize)]
pub struct PerfArtifact {
    pub workload: String,
    pub cost_model: CostModel<f64>,
    pub configuration: Configuration,
    pub toggles: u64,
    pub baseline: OverheadReport<f64>,
    pub hare: OverheadReport<f64>,
    pub cl: OverheadReport<f64>,
    pub improvement_pct: f64,
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

struct Output<'c> {
    config: &'c ExperimentConfig,
    command: &'static str,
    started: u64,
    written: Vec<PathBuf>,
}

impl<'c> Output<'c> {
    fn new(config: &'c ExperimentConfig, command: &'static str) -> Self {
        Self { config, command, started: unix_seconds(), written: Vec::new() }
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), CommandError> {
        let path = self.config.out_dir.join(name);
        write_atomic(&path, contents).map_err(CommandError::Failed)?;
        self.written.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CommandError> {
        if self.config.wants(OutputFormat::Json) {
            let mut text = serde_json::to_string_pretty(value).map_err(|e| CommandError::Failed(e.into()))?;
            text.push('\n');
            self.write(name, text.as_bytes())?;
        }
        Ok(())
    }

    fn csv(&mut self, name: &str, text: &str) -> Result<(), CommandError> {
        if self.config.wants(OutputFormat::Csv) {
            self.write(name, text.as_bytes())?;
        }
        Ok(())
    }

    /// Writes the sidecar and returns every primary artifact.
    fn finish(mut self) -> Result<Vec<PathBuf>, CommandError> {
        #[derive(Serialize)]
        struct Meta<'a> {
            command: &'a str,
            version: &'a str,
            started_unix: u64,
            finished_unix: u64,
            artifacts: Vec<String>,
        }
        let meta = Meta {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            started_unix: self.started,
            finished_unix: unix_seconds(),
            artifacts: self.written.iter().map(|p| p.display().to_string()).collect(),
        };
        let text = serde_json::to_string_pretty(&meta).map_err(|e| CommandError::Failed(e.into()))?;
        let artifacts = std::mem::take(&mut self.written);
        write_atomic(&self.config.out_dir.join(format!("{}.meta.json", self.command)), text.as_bytes())
            .map_err(CommandError::Failed)?;
        Ok(artifacts)
    }
}

fn unix_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Accuracy of one configuration (`select.configuration`, default every
/// candidate) at `fault.error_rate`.
pub fn cmd_run(config: &ExperimentConfig) -> Result<Vec<PathBuf>, CommandError> {
    let experiment = load_experiment(config)?;
    let regions = experiment.instance.regions();
    let chosen = chosen_configuration(
        config.select.configuration.as_ref().unwrap_or(&ConfigurationChoice::AllCandidates),
        regions,
    )?;
    let spec = fault_spec(config, config.fault.error_rate)?;
    let prepared = experiment.instance.prepare(&experiment.test);
    let (report, events) =
        evaluate_with_events(&prepared, &chosen, &spec, config.fault.trials).map_err(CommandError::Failed)?;
    log::info!("{}: accuracy loss {:.4} over {} trials", config.workload, report.accuracy_loss, report.trials);

    let mut out = Output::new(config, "run");
    let csv = format!(
        "workload,configuration,error_rate,trials,mean_accuracy,fault_free_accuracy,accuracy_loss,stderr\n{},{},{},{},{},{},{},{}\n",
        config.workload,
        chosen.label(),
        spec.error_rate,
        report.trials,
        report.mean_accuracy,
        report.fault_free_accuracy,
        report.accuracy_loss,
        report.stderr
    );
    out.write("events.log", events.to_log().as_bytes())?;
    out.json("run.json", &RunArtifact { workload: config.workload.to_string(), fault_spec: spec, report, events })?;
    out.csv("run.csv", &csv)?;
    out.finish()
}

/// Greedy selection at `fault.error_rate` and `select.threshold`.
pub fn cmd_select(config: &ExperimentConfig) -> Result<Vec<PathBuf>, CommandError> {
    let experiment = load_experiment(config)?;
    let (constraints, spec, result) = run_selection(config, &experiment)?;
    log::info!("{}: selected {}", config.workload, result.final_config.label());

    let mut out = Output::new(config, "select");
    let mut csv = String::from("step,region,loss,configuration_loss,close_call\n");
    for (i, step) in result.demotion_sequence.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{},{},{}", i + 1, step.region, step.loss, step.configuration_loss, step.close_call);
    }
    out.json(
        "select.json",
        &SelectArtifact { workload: config.workload.to_string(), constraints, fault_spec: spec, result },
    )?;
    out.csv("select.csv", &csv)?;
    out.finish()
}

fn run_selection(
    config: &ExperimentConfig,
    experiment: &Experiment,
) -> Result<(SelectionConstraints, FaultSpec, SelectionResult), CommandError> {
    let constraints = SelectionConstraints::new(config.fault.error_rate, config.select.threshold, config.fault.trials)
        .map_err(CommandError::Config)?;
    let spec = fault_spec(config, config.fault.error_rate)?;
    let prepared = experiment.instance.prepare(&experiment.test);
    let result = select_configuration(&prepared, &constraints, &spec).map_err(CommandError::Failed)?;
    Ok((constraints, spec, result))
}

/// One CSV row per sweep cell, in [`SWEEP_COLUMNS`] order.
pub fn sweep_csv(cells: &[SweepCell], regions: &RegionTable, cm: &CostModel<f64>) -> String {
    let mut csv = SWEEP_COLUMNS.join(",");
    csv.push('\n');
    let hare = price(&Configuration::all_crucial(regions), regions, cm, 0).normalized_time;
    for cell in cells {
        let config = &cell.selection.final_config;
        let toggles = region_transition_count(config, regions);
        let cl = price(config, regions, cm, toggles).normalized_time;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            cell.workload,
            cell.threshold,
            cell.error_rate,
            config.len(),
            regions.non_crucial_time(config),
            cell.selection.final_report.accuracy_loss,
            cl,
            hare,
            improvement_over_hare(config, regions, cm, toggles),
        );
    }
    csv
}

/// Selection over `select.thresholds` x `select.error_rates`.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<Vec<PathBuf>, CommandError> {
    let experiment = load_experiment(config)?;
    let regions = experiment.instance.regions();
    let cm = cost_model(config, regions)?;
    let base = fault_spec(config, 0.0)?;
    let prepared = experiment.instance.prepare(&experiment.test);
    let cells = sweep(&prepared, &config.select.thresholds, &config.select.error_rates, config.fault.trials, &base)
        .map_err(|e| match e {
            Error::InvalidConstraints(_) | Error::InvalidFaultSpec(_) => CommandError::Config(e),
            e => CommandError::Failed(e),
        })?;

    let mut out = Output::new(config, "sweep");
    out.csv("sweep.csv", &sweep_csv(&cells, regions, &cm))?;
    out.json("sweep.json", &cells)?;
    out.finish()
}

/// Prices BASELINE, HaRE everywhere and the cross-layer configuration
/// (`select.configuration`, or the selector's choice when unset).
pub fn cmd_perf(config: &ExperimentConfig) -> Result<Vec<PathBuf>, CommandError> {
    let experiment = load_experiment(config)?;
    let regions = experiment.instance.regions();
    let cm = cost_model(config, regions)?;
    let chosen = match &config.select.configuration {
        Some(choice) => chosen_configuration(choice, regions)?,
        None => run_selection(config, &experiment)?.2.final_config,
    };
    let toggles = region_transition_count(&chosen, regions);
    let artifact = PerfArtifact {
        workload: config.workload.to_string(),
        cost_model: cm,
        configuration: chosen.clone(),
        toggles,
        baseline: price_config(&all_candidates(regions), regions, &CostModel::identity()),
        hare: price(&Configuration::all_crucial(regions), regions, &cm, 0),
        cl: price(&chosen, regions, &cm, toggles),
        improvement_pct: improvement_over_hare(&chosen, regions, &cm, toggles),
    };
    println!(
        "{}: BASELINE={} HaRE={} CL={} ({}) improvement={:.2}%",
        config.workload,
        artifact.baseline.normalized_time,
        artifact.hare.normalized_time,
        artifact.cl.normalized_time,
        chosen.label(),
        artifact.improvement_pct
    );

    let mut csv = String::from("scheme,normalized_time,crucial_compute,noncrucial_compute,shr_store_overhead,bound_checks,switches\n");
    for (name, r) in [("baseline", &artifact.baseline), ("hare", &artifact.hare), ("cl", &artifact.cl)] {
        let b = &r.breakdown;
        let _ = writeln!(
            csv,
            "{name},{},{},{},{},{},{}",
            r.normalized_time, b.crucial_compute, b.noncrucial_compute, b.shr_store_overhead, b.bound_checks, b.switches
        );
    }
    let mut out = Output::new(config, "perf");
    out.json("perf.json", &artifact)?;
    out.csv("perf.csv", &csv)?;
    out.finish()
}
