//! Region-annotated inference workloads.
//!
//! A [`WorkloadInstance`] couples a model (CNN, MLP or KNN) with its region
//! table. Strikes come in as a [`StrikeSchedule`] drawn by the fault
//! injector; a workload applies only the strikes of regions that are
//! non-crucial in the active configuration.

pub mod cnn;
pub mod dense;
pub mod knn;
pub mod mlp;
pub mod profile;
pub mod weights;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault::StrikeSchedule;
use crate::mnist::{Dataset, Sample};
use crate::model::{BoundSpec, Configuration, RegionClass, RegionTable};
use crate::resilience::{CheckAction, StoreAudit, TargetKind};
use crate::scalar::Scalar;

use self::cnn::Cnn;
use self::knn::Knn;
use self::mlp::Mlp;
use self::profile::{Meter, Profile};

/// Loop counters, bound checkers, sigmoids and barriers. Always crucial.
pub const CONTROL: &str = "control";

/// One injected fault as seen by the workload.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionEvent<S> {
    pub region: &'static str,
    /// Region execution index within the inference.
    pub iteration: u64,
    pub target: &'static str,
    pub target_kind: TargetKind,
    pub old: S,
    pub new: S,
    /// Whether the checker let a value derived from the fault through.
    pub committed: bool,
    pub action: CheckAction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecutionTrace<S> {
    pub predicted_label: u8,
    pub events: Vec<InjectionEvent<S>>,
    pub audit: StoreAudit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    CnnMnist,
    MlpMnist,
    KnnMnist,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 3] = [WorkloadKind::CnnMnist, WorkloadKind::MlpMnist, WorkloadKind::KnnMnist];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::CnnMnist => "cnn_mnist",
            WorkloadKind::MlpMnist => "mlp_mnist",
            WorkloadKind::KnnMnist => "knn_mnist",
        }
    }

    pub fn region_ids(self) -> &'static [&'static str] {
        match self {
            WorkloadKind::CnnMnist => &cnn::REGIONS,
            WorkloadKind::MlpMnist => &mlp::REGIONS,
            WorkloadKind::KnnMnist => &knn::REGIONS,
        }
    }

    /// Regions that may be run non-crucially.
    pub fn candidates(self) -> &'static [&'static str] {
        match self {
            WorkloadKind::CnnMnist => &[cnn::CONV, cnn::FC],
            WorkloadKind::MlpMnist => &[mlp::I1, mlp::I2],
            WorkloadKind::KnnMnist => &[knn::DISTANCE],
        }
    }

    pub fn manifest_file(self) -> &'static str {
        match self {
            WorkloadKind::CnnMnist => "cnn_mnist.manifest",
            WorkloadKind::MlpMnist => "mlp_mnist.manifest",
            WorkloadKind::KnnMnist => "knn_mnist.manifest",
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WorkloadKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        WorkloadKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown workload `{s}` (expected cnn_mnist, mlp_mnist or knn_mnist)"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model<S> {
    Cnn(Cnn<S>),
    Mlp(Mlp<S>),
    Knn(Knn<S>),
}

impl<S: Scalar> Model<S> {
    pub fn kind(&self) -> WorkloadKind {
        match self {
            Model::Cnn(_) => WorkloadKind::CnnMnist,
            Model::Mlp(_) => WorkloadKind::MlpMnist,
            Model::Knn(_) => WorkloadKind::KnnMnist,
        }
    }

    pub fn executions(&self, region: &str) -> u64 {
        match self {
            Model::Cnn(m) => m.executions(region),
            Model::Mlp(m) => m.executions(region),
            Model::Knn(m) => m.executions(region),
        }
    }

    pub fn targets_per_execution(&self, region: &str) -> u32 {
        match self {
            Model::Cnn(m) => m.targets_per_execution(region),
            Model::Mlp(m) => m.targets_per_execution(region),
            Model::Knn(m) => m.targets_per_execution(region),
        }
    }

    fn run<M: Meter>(
        &self,
        sample: &Sample<S>,
        config: &Configuration,
        schedule: &StrikeSchedule<S>,
        meter: &mut M,
    ) -> Result<ExecutionTrace<S>> {
        match self {
            Model::Cnn(m) => Ok(m.run(sample, config, schedule, meter)),
            Model::Mlp(m) => m.run(sample, config, schedule, meter),
            Model::Knn(m) => Ok(m.run(sample, config, schedule, meter)),
        }
    }

    /// Region classes and checker bounds, in region order.
    pub fn layout(&self) -> Vec<(&'static str, RegionClass, Option<BoundSpec<f64>>)> {
        let kind = self.kind();
        let class = |id: &str| {
            if kind.candidates().contains(&id) {
                RegionClass::NonCrucialCandidate
            } else {
                RegionClass::Crucial
            }
        };
        let bound = |id: &str| -> Option<BoundSpec<f64>> {
            match self {
                Model::Cnn(m) if id == cnn::CONV => Some(m.conv_bound_envelope().cast()),
                Model::Cnn(m) if id == cnn::FC || id == cnn::OUT => Some(m.activation_bound().cast()),
                Model::Mlp(m) if id == mlp::I1 || id == mlp::I2 || id == mlp::OUT => {
                    Some(m.activation_bound().cast())
                }
                Model::Knn(m) if id == knn::DISTANCE => Some(m.distance_bound().cast()),
                _ => None,
            }
        };
        kind.region_ids().iter().map(|id| (*id, class(id), bound(id))).collect()
    }
}

/// A model together with its region table.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadInstance<S> {
    model: Model<S>,
    regions: RegionTable,
}

impl<S: Scalar> WorkloadInstance<S> {
    /// Checks that `regions` annotates exactly this model's regions, with
    /// the expected classes and execution counts.
    pub fn new(model: Model<S>, regions: RegionTable) -> Result<Self> {
        let kind = model.kind();
        let mismatch = |msg: String| Error::ShapeMismatch(format!("{kind} region table: {msg}"));
        if regions.workload() != kind.name() {
            return Err(mismatch(format!("describes workload `{}`", regions.workload())));
        }
        let ids: Vec<&str> = regions.iter().map(|r| r.id.as_str()).collect();
        let mut expected = kind.region_ids().to_vec();
        expected.sort_unstable();
        if ids != expected {
            return Err(mismatch(format!("regions {ids:?}, expected {expected:?}")));
        }
        for (id, class, _) in model.layout() {
            let r = regions.require(id)?;
            if class == RegionClass::Crucial && r.class != RegionClass::Crucial {
                return Err(mismatch(format!("`{id}` must be crucial")));
            }
            if r.is_candidate() && r.executions != model.executions(id) {
                return Err(mismatch(format!(
                    "`{id}` declares {} executions, the model performs {}",
                    r.executions,
                    model.executions(id)
                )));
            }
        }
        Ok(Self { model, regions })
    }

    /// Region table measured by profiling fault-free inference over `dataset`.
    pub fn profiled(model: Model<S>, dataset: &Dataset<S>) -> Result<Self> {
        let profile = profile_model(&model, dataset)?;
        let regions = profile.region_table(model.kind().name(), &model.layout())?;
        Self::new(model, regions)
    }

    pub fn kind(&self) -> WorkloadKind {
        self.model.kind()
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }

    pub fn model(&self) -> &Model<S> {
        &self.model
    }

    pub fn regions(&self) -> &RegionTable {
        &self.regions
    }

    /// Same model with a replacement region table.
    pub fn with_regions(&self, regions: RegionTable) -> Result<Self> {
        Self::new(self.model.clone(), regions)
    }

    pub fn targets_per_execution(&self, region: &str) -> u32 {
        self.model.targets_per_execution(region)
    }

    /// `config` must name only candidate regions of this workload.
    pub fn check_config(&self, config: &Configuration) -> Result<()> {
        if self.kind() == WorkloadKind::MlpMnist && config.contains(mlp::INPUT) {
            return Err(Error::AttemptToDemoteInputLayer(mlp::INPUT.into()));
        }
        if config.workload != self.name() {
            return Err(Error::ShapeMismatch(format!(
                "configuration for `{}` applied to `{}`",
                config.workload,
                self.name()
            )));
        }
        for id in &config.non_crucial {
            if !self.regions.require(id)?.is_candidate() {
                return Err(Error::CrucialRegionInConfiguration(id.clone()));
            }
        }
        Ok(())
    }

    pub fn run(&self, sample: &Sample<S>, config: &Configuration, schedule: &StrikeSchedule<S>) -> Result<ExecutionTrace<S>> {
        self.check_config(config)?;
        self.model.run(sample, config, schedule, &mut ())
    }

    /// Fault-free predicted label.
    pub fn classify(&self, sample: &Sample<S>) -> Result<u8> {
        let config = Configuration::all_crucial(&self.regions);
        Ok(self.model.run(sample, &config, &StrikeSchedule::none(), &mut ())?.predicted_label)
    }

    pub fn profile(&self, dataset: &Dataset<S>) -> Result<Profile> {
        profile_model(&self.model, dataset)
    }

    /// Caches fault-free intermediates of every sample in `dataset`.
    pub fn prepare<'a>(&'a self, dataset: &'a Dataset<S>) -> PreparedWorkload<'a, S> {
        let cache: Vec<SampleCache<S>> = dataset
            .samples()
            .iter()
            .map(|s| match &self.model {
                Model::Cnn(m) => SampleCache::Cnn(m.prepare(s)),
                Model::Mlp(m) => SampleCache::Mlp(m.prepare(s)),
                Model::Knn(m) => SampleCache::Knn(m.prepare(s)),
            })
            .collect();
        let correct = cache.iter().zip(dataset.samples()).filter(|(c, s)| c.label() == s.label).count();
        PreparedWorkload { instance: self, dataset, cache, fault_free_correct: correct }
    }
}

impl WorkloadInstance<f32> {
    /// CNN from a weight file and region manifest.
    pub fn load_cnn(weights_path: &Path, manifest_path: &Path) -> Result<Self> {
        let model = Model::Cnn(Cnn::from_tensors(&weights::load(weights_path)?)?);
        Self::new(model, crate::manifest::load(manifest_path)?)
    }

    pub fn load_mlp(weights_path: &Path, manifest_path: &Path) -> Result<Self> {
        let model = Model::Mlp(Mlp::from_tensors(&weights::load(weights_path)?)?);
        Self::new(model, crate::manifest::load(manifest_path)?)
    }

    pub fn load_knn(train: &Dataset<f32>, k: usize, manifest_path: &Path) -> Result<Self> {
        Self::new(Model::Knn(Knn::new(train, k)?), crate::manifest::load(manifest_path)?)
    }
}

fn profile_model<S: Scalar>(model: &Model<S>, dataset: &Dataset<S>) -> Result<Profile> {
    let mut profile = Profile::default();
    let config = Configuration { workload: model.kind().name().to_owned(), non_crucial: Default::default() };
    for sample in dataset.samples() {
        model.run(sample, &config, &StrikeSchedule::none(), &mut profile)?;
        profile.inferences += 1;
    }
    Ok(profile)
}

fn check_kind<S: Scalar>(instance: &WorkloadInstance<S>, kind: WorkloadKind) -> Result<()> {
    if instance.kind() == kind {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!("expected a {kind} instance, found {}", instance.kind())))
    }
}

/// CNN inference of one sample under `config`, applying `schedule`.
pub fn run_cnn<S: Scalar>(
    sample: &Sample<S>,
    instance: &WorkloadInstance<S>,
    config: &Configuration,
    schedule: &StrikeSchedule<S>,
) -> Result<ExecutionTrace<S>> {
    check_kind(instance, WorkloadKind::CnnMnist)?;
    instance.run(sample, config, schedule)
}

/// MLP inference; the input layer can never be part of `config`.
pub fn run_mlp<S: Scalar>(
    sample: &Sample<S>,
    instance: &WorkloadInstance<S>,
    config: &Configuration,
    schedule: &StrikeSchedule<S>,
) -> Result<ExecutionTrace<S>> {
    check_kind(instance, WorkloadKind::MlpMnist)?;
    instance.run(sample, config, schedule)
}

pub fn run_knn<S: Scalar>(
    sample: &Sample<S>,
    instance: &WorkloadInstance<S>,
    config: &Configuration,
    schedule: &StrikeSchedule<S>,
) -> Result<ExecutionTrace<S>> {
    check_kind(instance, WorkloadKind::KnnMnist)?;
    instance.run(sample, config, schedule)
}

#[derive(Clone, Debug)]
enum SampleCache<S> {
    Cnn(cnn::Cached<S>),
    Mlp(mlp::Cached<S>),
    Knn(knn::Cached<S>),
}

impl<S: Scalar> SampleCache<S> {
    fn label(&self) -> u8 {
        match self {
            SampleCache::Cnn(c) => Cnn::cached_label(c),
            SampleCache::Mlp(c) => Mlp::cached_label(c),
            SampleCache::Knn(c) => Knn::cached_label(c),
        }
    }
}

/// A workload bound to a dataset, with the fault-free intermediates of every
/// sample cached so that a trial only recomputes what its strikes reach.
/// Results are identical to [`WorkloadInstance::run`].
pub struct PreparedWorkload<'a, S> {
    instance: &'a WorkloadInstance<S>,
    dataset: &'a Dataset<S>,
    cache: Vec<SampleCache<S>>,
    fault_free_correct: usize,
}

impl<'a, S: Scalar> PreparedWorkload<'a, S> {
    pub fn instance(&self) -> &'a WorkloadInstance<S> {
        self.instance
    }

    pub fn dataset(&self) -> &'a Dataset<S> {
        self.dataset
    }

    pub fn fault_free_label(&self, index: usize) -> u8 {
        self.cache[index].label()
    }

    pub fn fault_free_accuracy(&self) -> f64 {
        self.fault_free_correct as f64 / self.dataset.len() as f64
    }

    pub fn run_sample(&self, index: usize, config: &Configuration, schedule: &StrikeSchedule<S>) -> Result<ExecutionTrace<S>> {
        self.instance.check_config(config)?;
        let sample = &self.dataset.samples()[index];
        let cached = &self.cache[index];
        if !schedule.touches(config) {
            return Ok(ExecutionTrace { predicted_label: cached.label(), events: Vec::new(), audit: StoreAudit::default() });
        }
        match (&self.instance.model, cached) {
            (Model::Cnn(m), SampleCache::Cnn(c)) => Ok(m.run_cached(sample, c, config, schedule)),
            (Model::Mlp(m), SampleCache::Mlp(c)) => m.run_cached(sample, c, config, schedule),
            (Model::Knn(m), SampleCache::Knn(c)) => Ok(m.run_cached(sample, c, config, schedule)),
            _ => unreachable!("cache built from the same model"),
        }
    }
}
