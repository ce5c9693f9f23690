//! Program-level soft-error injection.
//!
//! Each execution of an active (non-crucial) region is struck with
//! probability `error_rate * time_fraction`. A strike replaces one data-flow
//! value of that execution, picked uniformly among the region's injectable
//! targets, with a random value of its type. Loop counters, addresses and
//! branch conditions are never targets, and crucial regions are never
//! active.
//!
//! Randomness for trial `t` comes from a ChaCha8 stream keyed by
//! `(master_seed, t)`, so trials can run in any order or in parallel and
//! still reproduce bit for bit.

use std::collections::BTreeSet;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Configuration, FaultSpec, RegionDescriptor, ValueModel};
use crate::resilience::{AuditAction, AuditRecord, CheckAction, StoreAudit, TargetKind};
use crate::scalar::Scalar;
use crate::workloads::{InjectionEvent, PreparedWorkload};

/// Random stream of one trial.
pub struct TrialRng(ChaCha8Rng);

impl TrialRng {
    pub fn new(master_seed: u64, trial_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(trial_index);
        Self(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        self.0.gen::<f64>()
    }

    pub fn below(&mut self, n: u32) -> u32 {
        self.0.gen_range(0..n)
    }
}

/// Per-execution strike probability of `region`.
pub fn strike_probability(region: &RegionDescriptor, spec: &FaultSpec) -> f64 {
    (spec.error_rate * region.time_fraction).clamp(0.0, 1.0)
}

/// One Bernoulli draw for one execution of `region`.
pub fn should_inject(region: &RegionDescriptor, spec: &FaultSpec, rng: &mut TrialRng) -> bool {
    rng.unit() < strike_probability(region, spec)
}

/// Executions skipped before the next strike in a run of independent
/// Bernoulli(`p`) draws, sampled in one step by inverting the geometric CDF.
/// `None` when `p` is zero.
pub fn executions_until_strike(p: f64, rng: &mut TrialRng) -> Option<u64> {
    if p <= 0.0 {
        return None;
    }
    if p >= 1.0 {
        return Some(0);
    }
    let u = 1.0 - rng.unit(); // (0, 1]
    let gap = (u.ln() / (-p).ln_1p()).floor();
    Some(if gap >= u64::MAX as f64 { u64::MAX } else { gap as u64 })
}

/// Random replacement for a struck value. The old value does not influence
/// the draw; it is taken to keep the call site explicit about what is
/// replaced.
pub fn perturb<S: Scalar>(_old: S, model: ValueModel, rng: &mut TrialRng) -> S {
    match model {
        ValueModel::RandomBitPattern => S::from_bit_pattern(rng.next_u64()),
        ValueModel::UniformInRange => {
            let u = 2.0 * rng.unit() - 1.0; // [-1, 1)
            S::of(u) * S::max_value()
        }
    }
}

/// A scheduled strike on one region execution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Strike<S> {
    pub execution: u64,
    /// Index of the struck value among the execution's injectable targets.
    pub target: u32,
    pub value: S,
}

/// Strikes for one inference, per region, ordered by execution.
#[derive(Clone, Debug, PartialEq)]
pub struct StrikeSchedule<S> {
    regions: Vec<(String, Vec<Strike<S>>)>,
}

impl<S> Default for StrikeSchedule<S> {
    fn default() -> Self {
        Self { regions: Vec::new() }
    }
}

impl<S: Scalar> StrikeSchedule<S> {
    pub fn none() -> Self {
        Self::default()
    }

    /// Add a strike; strikes on one execution beyond the first are ignored.
    pub fn push(&mut self, region: &str, strike: Strike<S>) {
        let slot = match self.regions.iter().position(|(id, _)| id == region) {
            Some(i) => i,
            None => {
                self.regions.push((region.to_owned(), Vec::new()));
                self.regions.len() - 1
            }
        };
        let list = &mut self.regions[slot].1;
        match list.binary_search_by_key(&strike.execution, |s| s.execution) {
            Ok(_) => {}
            Err(at) => list.insert(at, strike),
        }
    }

    pub fn for_region(&self, region: &str) -> &[Strike<S>] {
        self.regions.iter().find(|(id, _)| id == region).map_or(&[], |(_, s)| s.as_slice())
    }

    /// Strikes that a run under `config` will honour.
    pub fn touches(&self, config: &Configuration) -> bool {
        self.regions.iter().any(|(id, s)| !s.is_empty() && config.contains(id))
    }

    pub fn is_empty(&self) -> bool {
        self.regions.iter().all(|(_, s)| s.is_empty())
    }

    pub fn len(&self) -> usize {
        self.regions.iter().map(|(_, s)| s.len()).sum()
    }
}

/// What to inject during one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub fault_spec: FaultSpec,
    pub active_regions: BTreeSet<String>,
    pub trial_index: u64,
}

impl InjectionPlan {
    /// Every non-crucial region of `config` is vulnerable.
    pub fn full(config: &Configuration, fault_spec: FaultSpec, trial_index: u64) -> Self {
        Self { fault_spec, active_regions: config.non_crucial.clone(), trial_index }
    }

    /// Only `region` is vulnerable.
    pub fn single(region: &str, fault_spec: FaultSpec, trial_index: u64) -> Self {
        Self { fault_spec, active_regions: BTreeSet::from([region.to_owned()]), trial_index }
    }

    pub fn check_within(&self, config: &Configuration) -> Result<()> {
        match self.active_regions.iter().find(|r| !config.contains(r)) {
            Some(r) => Err(Error::PlanOutsideConfiguration(r.clone())),
            None => Ok(()),
        }
    }

    pub fn rng(&self) -> TrialRng {
        TrialRng::new(self.fault_spec.master_seed, self.trial_index)
    }

    /// Draw the strikes of one inference. `targets` gives the number of
    /// injectable values per execution of a region.
    pub fn draw_schedule<'r, S, I, T>(&self, regions: I, targets: T, rng: &mut TrialRng) -> StrikeSchedule<S>
    where
        S: Scalar,
        I: IntoIterator<Item = &'r RegionDescriptor>,
        T: Fn(&str) -> u32,
    {
        let mut schedule = StrikeSchedule::none();
        for region in regions.into_iter().filter(|r| self.active_regions.contains(&r.id)) {
            let p = strike_probability(region, &self.fault_spec);
            let mut next = 0u64;
            while let Some(gap) = executions_until_strike(p, rng) {
                next = match next.checked_add(gap) {
                    Some(n) if n < region.executions => n,
                    _ => break,
                };
                let target = rng.below(targets(&region.id).max(1));
                let value = perturb(S::zero(), self.fault_spec.value_model, rng);
                schedule.push(&region.id, Strike { execution: next, target, value });
                next += 1;
            }
        }
        schedule
    }
}

/// Injection event tagged with the sample it happened in.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialEvent<S> {
    pub sample: usize,
    pub event: InjectionEvent<S>,
}

impl<S: Scalar> TrialEvent<S> {
    pub fn audit_record(&self, trial: u64) -> AuditRecord {
        let e = &self.event;
        AuditRecord {
            trial,
            sample: self.sample,
            region: e.region.to_owned(),
            iteration: e.iteration,
            target: e.target.to_owned(),
            target_kind: e.target_kind,
            action: match e.action {
                CheckAction::Passed => AuditAction::Injected,
                CheckAction::Clamped => AuditAction::Clamped,
                CheckAction::Dropped => AuditAction::Dropped,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult<S> {
    pub trial_index: u64,
    pub correct: usize,
    pub samples: usize,
    pub events: Vec<TrialEvent<S>>,
    pub audit: StoreAudit,
}

impl<S> TrialResult<S> {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.samples as f64
    }
}

/// Classify every sample once under `plan`.
pub fn run_trial<S: Scalar>(
    workload: &PreparedWorkload<'_, S>,
    config: &Configuration,
    plan: &InjectionPlan,
) -> Result<TrialResult<S>> {
    plan.check_within(config)?;
    let instance = workload.instance();
    let mut rng = plan.rng();
    let mut correct = 0;
    let mut events = Vec::new();
    let mut audit = StoreAudit::default();
    for (index, sample) in workload.dataset().samples().iter().enumerate() {
        let schedule = plan.draw_schedule(instance.regions().iter(), |r| instance.targets_per_execution(r), &mut rng);
        let trace = workload.run_sample(index, config, &schedule)?;
        if trace.predicted_label == sample.label {
            correct += 1;
        }
        audit.merge(&trace.audit);
        events.extend(trace.events.into_iter().map(|event| TrialEvent { sample: index, event }));
    }
    Ok(TrialResult { trial_index: plan.trial_index, correct, samples: workload.dataset().len(), events, audit })
}

/// Event-log invariant: every event is a data-flow value of a region that
/// is non-crucial in `config`.
pub fn events_in_scope<S>(events: &[TrialEvent<S>], config: &Configuration) -> bool {
    events.iter().all(|e| e.event.target_kind == TargetKind::DataFlow && config.contains(e.event.region))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RegionClass;

    fn region(f: f64, executions: u64) -> RegionDescriptor {
        RegionDescriptor::new("r", "w", RegionClass::NonCrucialCandidate, f).with_executions(executions)
    }

    fn spec(e: f64) -> FaultSpec {
        FaultSpec::new(e, 11, ValueModel::RandomBitPattern).unwrap()
    }

    #[test]
    fn zero_and_certain_probabilities() {
        let mut rng = TrialRng::new(1, 0);
        assert!((0..10_000).all(|_| !should_inject(&region(1.0, 1), &spec(0.0), &mut rng)));
        assert!((0..10_000).all(|_| should_inject(&region(1.0, 1), &spec(1.0), &mut rng)));
        assert_eq!(executions_until_strike(0.0, &mut rng), None);
        assert_eq!(executions_until_strike(1.0, &mut rng), Some(0));
    }

    #[test]
    fn streams_depend_on_seed_and_trial() {
        let a: Vec<u64> = (0..4).map(|_| TrialRng::new(5, 0).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(TrialRng::new(5, 0).next_u64(), TrialRng::new(5, 1).next_u64());
        assert_ne!(TrialRng::new(5, 0).next_u64(), TrialRng::new(6, 0).next_u64());
    }

    #[test]
    fn geometric_gaps_match_bernoulli_rate() {
        // 2e6 executions at p = 1e-3: expect 2000 strikes, binomial sd ~ 44.7.
        let r = region(0.5, 2_000_000);
        let plan = InjectionPlan::single("r", spec(0.002), 0);
        let mut rng = plan.rng();
        let schedule: StrikeSchedule<f32> = plan.draw_schedule([&r], |_| 4, &mut rng);
        let n = schedule.len() as f64;
        assert!((n - 2000.0).abs() < 3.0 * 44.7, "{n}");
        let strikes = schedule.for_region("r");
        assert!(strikes.windows(2).all(|w| w[0].execution < w[1].execution));
        assert!(strikes.iter().all(|s| s.execution < 2_000_000 && s.target < 4));
    }

    #[test]
    fn uniform_in_range_is_finite() {
        let mut rng = TrialRng::new(3, 3);
        for _ in 0..100_000 {
            assert!(perturb(0.0f32, ValueModel::UniformInRange, &mut rng).is_finite());
            assert!(perturb(0.0f64, ValueModel::UniformInRange, &mut rng).is_finite());
        }
    }

    #[test]
    fn schedule_keeps_one_strike_per_execution() {
        let mut s = StrikeSchedule::<f32>::none();
        s.push("a", Strike { execution: 4, target: 0, value: 1.0 });
        s.push("a", Strike { execution: 2, target: 1, value: 2.0 });
        s.push("a", Strike { execution: 4, target: 2, value: 3.0 });
        assert_eq!(s.for_region("a").iter().map(|s| s.execution).collect::<Vec<_>>(), [2, 4]);
        assert_eq!(s.for_region("a")[1].value, 1.0);
        assert!(s.for_region("b").is_empty());
    }

    #[test]
    fn plan_must_stay_inside_configuration() {
        let config = Configuration { workload: "w".into(), non_crucial: BTreeSet::from(["a".to_owned()]) };
        assert!(InjectionPlan::single("a", spec(0.1), 0).check_within(&config).is_ok());
        assert!(matches!(
            InjectionPlan::single("b", spec(0.1), 0).check_within(&config),
            Err(Error::PlanOutsideConfiguration(_))
        ));
    }
}
