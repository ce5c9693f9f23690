//! Shared domain types: code regions, protection configurations, fault
//! parameters and accuracy reports.
//!
//! A workload's code is partitioned into a flat set of named regions. Crucial
//! regions always run under hardware redundant execution; candidate regions
//! may be moved into the non-crucial set of a [`Configuration`], where they
//! run under the lightweight software/hardware scheme and become exposed to
//! injected faults. Everything here is an immutable value.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance on the per-workload sum of region time fractions.
pub const TIME_FRACTION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionClass {
    Crucial,
    NonCrucialCandidate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    /// Commit the violated bound instead of the value.
    Clamp,
    /// Refuse the value; it is never committed.
    Drop,
}

/// Static value range enforced by a software bound checker.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec<S> {
    pub lower: S,
    pub upper: S,
    pub mode: BoundMode,
}

impl<S: Scalar> BoundSpec<S> {
    pub fn new(lower: S, upper: S, mode: BoundMode) -> Result<Self> {
        // `!(a < b)` also rejects NaN bounds.
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidBound { lower: lower.as_f64(), upper: upper.as_f64() });
        }
        Ok(Self { lower, upper, mode })
    }

    pub fn clamp(lower: S, upper: S) -> Result<Self> {
        Self::new(lower, upper, BoundMode::Clamp)
    }

    pub fn drop(lower: S, upper: S) -> Result<Self> {
        Self::new(lower, upper, BoundMode::Drop)
    }

    pub fn contains(&self, value: S) -> bool {
        value >= self.lower && value <= self.upper
    }

    pub fn cast<T: Scalar>(&self) -> BoundSpec<T> {
        BoundSpec { lower: T::of(self.lower.as_f64()), upper: T::of(self.upper.as_f64()), mode: self.mode }
    }
}

/// A named code region of one workload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionDescriptor {
    pub id: String,
    pub workload: String,
    pub class: RegionClass,
    /// Share of one inference's baseline execution time spent in the region.
    pub time_fraction: f64,
    pub bound: Option<BoundSpec<f64>>,
    /// Share of the region's dynamic instructions that are stores.
    pub store_fraction: f64,
    /// Bound-checker invocations per inference.
    pub checks: u64,
    /// Region executions (HaRE off/on segments) per inference.
    pub executions: u64,
}

impl RegionDescriptor {
    pub fn new(id: impl Into<String>, workload: impl Into<String>, class: RegionClass, time_fraction: f64) -> Self {
        Self {
            id: id.into(),
            workload: workload.into(),
            class,
            time_fraction,
            bound: None,
            store_fraction: 0.0,
            checks: 0,
            executions: 1,
        }
    }

    pub fn with_bound(mut self, bound: BoundSpec<f64>) -> Self {
        self.bound = Some(bound);
        self
    }

    pub fn with_executions(mut self, executions: u64) -> Self {
        self.executions = executions;
        self
    }

    pub fn with_checks(mut self, checks: u64) -> Self {
        self.checks = checks;
        self
    }

    pub fn with_store_fraction(mut self, store_fraction: f64) -> Self {
        self.store_fraction = store_fraction;
        self
    }

    pub fn is_candidate(&self) -> bool {
        self.class == RegionClass::NonCrucialCandidate
    }
}

/// Validated region set of a single workload, keyed by region id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionTable {
    workload: String,
    regions: BTreeMap<String, RegionDescriptor>,
}

impl RegionTable {
    pub fn workload(&self) -> &str {
        &self.workload
    }

    pub fn get(&self, id: &str) -> Option<&RegionDescriptor> {
        self.regions.get(id)
    }

    pub fn require(&self, id: &str) -> Result<&RegionDescriptor> {
        self.get(id).ok_or_else(|| Error::UnknownRegion(id.to_owned()))
    }

    /// Regions in id order.
    pub fn iter(&self) -> impl Iterator<Item = &RegionDescriptor> {
        self.regions.values()
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn candidates(&self) -> impl Iterator<Item = &RegionDescriptor> {
        self.iter().filter(|r| r.is_candidate())
    }

    /// Total time fraction of the regions in `config`'s non-crucial set.
    pub fn non_crucial_time(&self, config: &Configuration) -> f64 {
        config.non_crucial.iter().filter_map(|id| self.get(id)).map(|r| r.time_fraction).sum()
    }

    /// Copy of the table with some regions' time fractions replaced, revalidated.
    pub fn with_time_fractions(&self, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let mut regions: Vec<_> = self.iter().cloned().collect();
        for (id, fraction) in overrides {
            let region = regions
                .iter_mut()
                .find(|r| &r.id == id)
                .ok_or_else(|| Error::UnknownRegion(id.clone()))?;
            region.time_fraction = *fraction;
        }
        validate_region_set(regions)
    }
}

/// Check a workload's region list and index it by id.
///
/// Acceptance does not depend on list order: the time-fraction sum is taken
/// in id order.
pub fn validate_region_set(regions: Vec<RegionDescriptor>) -> Result<RegionTable> {
    let first = regions.first().ok_or(Error::EmptyRegionSet)?;
    let workload = first.workload.clone();
    let mut table = BTreeMap::new();
    for region in regions {
        if region.workload != workload {
            return Err(Error::InvalidRegion {
                region: region.id,
                reason: format!("belongs to workload `{}`, expected `{workload}`", region.workload),
            });
        }
        if !(0.0..=1.0).contains(&region.time_fraction) {
            return Err(Error::InvalidRegion {
                region: region.id,
                reason: format!("time_fraction {} outside [0, 1]", region.time_fraction),
            });
        }
        if !(0.0..=1.0).contains(&region.store_fraction) {
            return Err(Error::InvalidRegion {
                region: region.id,
                reason: format!("store_fraction {} outside [0, 1]", region.store_fraction),
            });
        }
        if let Some(bound) = &region.bound {
            BoundSpec::new(bound.lower, bound.upper, bound.mode)?;
        }
        if table.contains_key(&region.id) {
            return Err(Error::DuplicateRegionId(region.id));
        }
        table.insert(region.id.clone(), region);
    }
    let sum: f64 = table.values().map(|r| r.time_fraction).sum();
    if (sum - 1.0).abs() > TIME_FRACTION_TOLERANCE {
        return Err(Error::TimeFractionSumMismatch { workload, sum });
    }
    Ok(RegionTable { workload, regions: table })
}

/// The set of candidate regions currently run as non-crucial.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration {
    pub workload: String,
    pub non_crucial: BTreeSet<String>,
}

impl Configuration {
    /// Every region executes under HaRE.
    pub fn all_crucial(regions: &RegionTable) -> Self {
        Self { workload: regions.workload().to_owned(), non_crucial: BTreeSet::new() }
    }

    pub fn new<I, T>(regions: &RegionTable, ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let mut non_crucial = BTreeSet::new();
        for id in ids {
            let id = id.into();
            if !regions.require(&id)?.is_candidate() {
                return Err(Error::CrucialRegionInConfiguration(id));
            }
            non_crucial.insert(id);
        }
        Ok(Self { workload: regions.workload().to_owned(), non_crucial })
    }

    pub fn contains(&self, id: &str) -> bool {
        self.non_crucial.contains(id)
    }

    pub fn len(&self) -> usize {
        self.non_crucial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.non_crucial.is_empty()
    }

    /// Same configuration with `region` moved back to crucial execution.
    pub fn demote(&self, region: &str) -> Result<Self> {
        if !self.non_crucial.contains(region) {
            return Err(Error::RegionNotInConfiguration(region.to_owned()));
        }
        let mut next = self.clone();
        next.non_crucial.remove(region);
        Ok(next)
    }

    /// Region ids joined with `+`, or `none`.
    pub fn label(&self) -> String {
        if self.non_crucial.is_empty() {
            "none".to_owned()
        } else {
            self.non_crucial.iter().cloned().collect::<Vec<_>>().join("+")
        }
    }
}

/// Initial configuration of the selection workflow: every candidate region.
pub fn all_candidates(regions: &RegionTable) -> Configuration {
    Configuration {
        workload: regions.workload().to_owned(),
        non_crucial: regions.candidates().map(|r| r.id.clone()).collect(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueModel {
    /// Uniformly random bit pattern reinterpreted as the value's type.
    #[default]
    RandomBitPattern,
    /// Uniform over the type's finite range.
    UniformInRange,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    /// Soft-error probability of a fully vulnerable region execution.
    pub error_rate: f64,
    pub master_seed: u64,
    pub value_model: ValueModel,
}

impl FaultSpec {
    pub fn new(error_rate: f64, master_seed: u64, value_model: ValueModel) -> Result<Self> {
        if !(0.0..=1.0).contains(&error_rate) {
            return Err(Error::InvalidFaultSpec(format!("error_rate {error_rate} outside [0, 1]")));
        }
        Ok(Self { error_rate, master_seed, value_model })
    }

    pub fn fault_free(master_seed: u64) -> Self {
        Self { error_rate: 0.0, master_seed, value_model: ValueModel::default() }
    }
}

/// Monte Carlo accuracy estimate of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub configuration: Configuration,
    pub trials: usize,
    pub mean_accuracy: f64,
    pub fault_free_accuracy: f64,
    pub accuracy_loss: f64,
    /// Loss with only that region vulnerable.
    pub per_region_loss: BTreeMap<String, f64>,
    pub per_region_stderr: BTreeMap<String, f64>,
    pub stderr: f64,
    /// Loss is below -3 standard errors, i.e. more than noise.
    pub negative_loss_flag: bool,
}

impl AccuracyReport {
    pub fn new(
        configuration: Configuration,
        trials: usize,
        mean_accuracy: f64,
        fault_free_accuracy: f64,
        stderr: f64,
    ) -> Self {
        let accuracy_loss = fault_free_accuracy - mean_accuracy;
        Self {
            configuration,
            trials,
            mean_accuracy,
            fault_free_accuracy,
            accuracy_loss,
            per_region_loss: BTreeMap::new(),
            per_region_stderr: BTreeMap::new(),
            stderr,
            negative_loss_flag: accuracy_loss < -3.0 * stderr,
        }
    }
}
