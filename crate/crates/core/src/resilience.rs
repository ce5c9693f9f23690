//! Protection primitives of the lightweight scheme used for non-crucial
//! regions: software bound checkers, verified store addresses, and the
//! accounting of HaRE on/off transitions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{BoundMode, BoundSpec, Configuration, RegionDescriptor, RegionTable};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// Hardware redundant execution: re-executed and checked, never faulty.
    Hare,
    /// Software-hardware resiliency: verified store addresses plus bound checks.
    Shr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectionScheme {
    pub kind: SchemeKind,
    /// HaRE on/off toggles per execution of the region.
    pub switch_events: u64,
}

impl ProtectionScheme {
    pub fn for_region(region: &RegionDescriptor, config: &Configuration) -> Self {
        if config.contains(&region.id) {
            Self { kind: SchemeKind::Shr, switch_events: 2 }
        } else {
            Self { kind: SchemeKind::Hare, switch_events: 0 }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckAction {
    Passed,
    Clamped,
    Dropped,
}

impl fmt::Display for CheckAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckAction::Passed => "passed",
            CheckAction::Clamped => "clamped",
            CheckAction::Dropped => "dropped",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckOutcome<S> {
    /// Absent when the value was dropped.
    pub committed: Option<S>,
    pub action: CheckAction,
}

impl<S: Scalar> CheckOutcome<S> {
    pub fn is_committed(&self) -> bool {
        self.committed.is_some()
    }
}

/// Software bound checker.
///
/// In-range values pass untouched. NaN and infinities are out of range.
/// Clamp commits the violated bound; NaN violates both and is committed as
/// the lower bound. Drop commits nothing.
#[inline]
pub fn bound_check<S: Scalar>(value: S, spec: &BoundSpec<S>) -> CheckOutcome<S> {
    if spec.contains(value) {
        return CheckOutcome { committed: Some(value), action: CheckAction::Passed };
    }
    match spec.mode {
        BoundMode::Drop => CheckOutcome { committed: None, action: CheckAction::Dropped },
        BoundMode::Clamp => {
            let bound = if value > spec.upper { spec.upper } else { spec.lower };
            CheckOutcome { committed: Some(bound), action: CheckAction::Clamped }
        }
    }
}

/// Bookkeeping for stores whose address is computed twice and compared
/// before the write is allowed to proceed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreAudit {
    pub stores: u64,
    /// Writes whose verified address differed from the requested one.
    pub deviations: u64,
    /// `(requested, landed)` pairs, kept only when tracing is enabled.
    #[serde(skip)]
    pub trace: Option<Vec<(usize, usize)>>,
}

impl StoreAudit {
    pub fn traced() -> Self {
        Self { trace: Some(Vec::new()), ..Self::default() }
    }

    pub fn merge(&mut self, other: &StoreAudit) {
        self.stores += other.stores;
        self.deviations += other.deviations;
    }

    /// Every requested location was written exactly where requested.
    pub fn is_bijective(&self) -> bool {
        self.deviations == 0
            && self.trace.as_ref().map_or(true, |t| t.iter().all(|(requested, landed)| requested == landed))
    }
}

/// Output buffer whose writes go through [`protected_store`].
#[derive(Clone, Debug)]
pub struct ProtectedMemory<S> {
    cells: Vec<S>,
    pub audit: StoreAudit,
}

impl<S: Scalar> ProtectedMemory<S> {
    pub fn new(len: usize) -> Self {
        Self { cells: vec![S::zero(); len], audit: StoreAudit::default() }
    }

    pub fn traced(len: usize) -> Self {
        Self { cells: vec![S::zero(); len], audit: StoreAudit::traced() }
    }

    pub fn from_vec(cells: Vec<S>) -> Self {
        Self { cells, audit: StoreAudit::default() }
    }

    pub fn read(&self, location: usize) -> S {
        self.cells[location]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.cells
    }

    pub fn into_inner(self) -> Vec<S> {
        self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Write `value` at `location` after redundant address verification.
///
/// Faults are never injected into address arithmetic, so the shadow address
/// always agrees; the comparison and the audit entry are still performed for
/// every store.
#[inline]
pub fn protected_store<S: Scalar>(memory: &mut ProtectedMemory<S>, location: usize, value: S) {
    let primary = location;
    let shadow = std::hint::black_box(location);
    let landed = if primary == shadow {
        primary
    } else {
        memory.audit.deviations += 1;
        shadow
    };
    memory.cells[landed] = value;
    memory.audit.stores += 1;
    if let Some(trace) = memory.audit.trace.as_mut() {
        trace.push((location, landed));
    }
}

/// HaRE on/off toggles over one full inference: every execution of a
/// non-crucial region turns HaRE off on entry and back on before its bound
/// check.
pub fn region_transition_count(config: &Configuration, regions: &RegionTable) -> u64 {
    regions
        .iter()
        .map(|r| ProtectionScheme::for_region(r, config).switch_events * r.executions)
        .sum()
}

/// Bound-checker invocations over one inference, counted for SHR regions.
pub fn bound_check_count(config: &Configuration, regions: &RegionTable) -> u64 {
    regions.iter().filter(|r| config.contains(&r.id)).map(|r| r.checks).sum()
}

/// One line of a per-trial audit log: an injected fault and what the bound
/// checker did with the value that carried it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub trial: u64,
    pub sample: usize,
    pub region: String,
    pub iteration: u64,
    pub target: String,
    pub target_kind: TargetKind,
    pub action: AuditAction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    DataFlow,
    Address,
    LoopCounter,
    BranchCondition,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    /// Injected and committed unchanged by the checker (or unchecked).
    Injected,
    Clamped,
    Dropped,
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetKind::DataFlow => "data",
            TargetKind::Address => "address",
            TargetKind::LoopCounter => "loop_counter",
            TargetKind::BranchCondition => "branch",
        })
    }
}

impl fmt::Display for AuditAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuditAction::Injected => "injected",
            AuditAction::Clamped => "clamped",
            AuditAction::Dropped => "dropped",
        })
    }
}

impl fmt::Display for AuditRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "trial={} sample={} region={} iteration={} target={} kind={} action={}",
            self.trial, self.sample, self.region, self.iteration, self.target, self.target_kind, self.action
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{all_candidates, validate_region_set, RegionClass};

    fn sigmoid_bounds() -> BoundSpec<f32> {
        BoundSpec::clamp(-90.0, 10.0).unwrap()
    }

    #[test]
    fn in_range_passes() {
        let out = bound_check(0.5f32, &sigmoid_bounds());
        assert_eq!(out, CheckOutcome { committed: Some(0.5), action: CheckAction::Passed });
    }

    #[test]
    fn clamp_commits_violated_bound() {
        assert_eq!(bound_check(500.0f32, &sigmoid_bounds()).committed, Some(10.0));
        assert_eq!(bound_check(-1e30f32, &sigmoid_bounds()).committed, Some(-90.0));
        assert_eq!(bound_check(f32::INFINITY, &sigmoid_bounds()).action, CheckAction::Clamped);
        assert_eq!(bound_check(f32::NAN, &sigmoid_bounds()).committed, Some(-90.0));
    }

    #[test]
    fn drop_refuses_non_finite_and_out_of_range() {
        let spec = BoundSpec::drop(-1.0f32, 1.0).unwrap();
        for v in [f32::NAN, f32::INFINITY, f32::NEG_INFINITY, 1.0001, -7.0] {
            let out = bound_check(v, &spec);
            assert_eq!(out.action, CheckAction::Dropped);
            assert!(out.committed.is_none());
        }
        assert_eq!(bound_check(1.0f32, &spec).action, CheckAction::Passed);
    }

    #[test]
    fn stores_land_where_requested() {
        let mut mem = ProtectedMemory::<f32>::traced(4);
        protected_store(&mut mem, 1, 3.0);
        protected_store(&mut mem, 2, -4.0);
        assert_eq!(mem.read(1), 3.0);
        assert_eq!(mem.read(2), -4.0);
        assert_eq!(mem.read(0), 0.0);
        assert_eq!(mem.audit.stores, 2);
        assert!(mem.audit.is_bijective());
    }

    #[test]
    fn transitions() {
        let table = validate_region_set(vec![
            RegionDescriptor::new("a", "w", RegionClass::NonCrucialCandidate, 0.5).with_executions(7),
            RegionDescriptor::new("b", "w", RegionClass::NonCrucialCandidate, 0.25).with_executions(3),
            RegionDescriptor::new("c", "w", RegionClass::Crucial, 0.25).with_executions(100),
        ])
        .unwrap();
        assert_eq!(region_transition_count(&Configuration::all_crucial(&table), &table), 0);
        let one = Configuration::new(&table, ["a"]).unwrap();
        assert_eq!(region_transition_count(&one, &table), 14);
        assert_eq!(region_transition_count(&all_candidates(&table), &table), 20);
    }

    #[test]
    fn audit_line_format() {
        let rec = AuditRecord {
            trial: 3,
            sample: 7,
            region: "conv".into(),
            iteration: 12,
            target: "conv_acc".into(),
            target_kind: TargetKind::DataFlow,
            action: AuditAction::Dropped,
        };
        assert_eq!(
            rec.to_string(),
            "trial=3 sample=7 region=conv iteration=12 target=conv_acc kind=data action=dropped"
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_value() -> impl Strategy<Value = f32> {
            prop_oneof![any::<f32>(), -200.0f32..200.0, Just(f32::NAN), Just(f32::INFINITY)]
        }

        proptest! {
            #[test]
            fn idempotent(v in any_value(), lo in -100.0f32..0.0, width in 0.5f32..100.0, drop in any::<bool>()) {
                let spec = BoundSpec::new(lo, lo + width, if drop { BoundMode::Drop } else { BoundMode::Clamp }).unwrap();
                let first = bound_check(v, &spec);
                if let Some(c) = first.committed {
                    let second = bound_check(c, &spec);
                    prop_assert_eq!(second.committed, Some(c));
                    prop_assert!(spec.contains(c));
                }
                let again = bound_check(v, &spec);
                prop_assert_eq!(first.action, again.action);
                prop_assert_eq!(first.committed.map(f32::to_bits), again.committed.map(f32::to_bits));
            }

            #[test]
            fn clamp_lands_on_bound(v in any_value(), lo in -100.0f32..0.0, width in 0.5f32..100.0) {
                let spec = BoundSpec::clamp(lo, lo + width).unwrap();
                let out = bound_check(v, &spec);
                if out.action == CheckAction::Clamped {
                    let c = out.committed.unwrap();
                    prop_assert!(c == spec.lower || c == spec.upper);
                }
            }
        }
    }
}
