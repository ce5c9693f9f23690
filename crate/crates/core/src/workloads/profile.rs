//! Instrumented execution: abstract operation counts per region, from which
//! the region manifests' time fractions, execution counts and store
//! fractions are derived.
//!
//! Operation weights (one unit ~ one simple instruction):
//!
//! | operation                               | units |
//! |-----------------------------------------|-------|
//! | multiply-accumulate                     | 2     |
//! | squared-difference accumulate (KNN)     | 3     |
//! | input pixel feed (load + scale)         | 2     |
//! | store                                   | 1     |
//! | loop counter update per unrolled block  | 1     |
//! | bound check                             | 2     |
//! | sigmoid                                 | 8     |
//! | compare / max / ReLU                    | 1     |
//! | layer barrier                           | 4     |

use std::collections::BTreeMap;

use crate::error::Result;
use crate::model::{validate_region_set, BoundSpec, RegionClass, RegionDescriptor, RegionTable};

pub const MAC: u64 = 2;
pub const SQUARED_DIFF: u64 = 3;
pub const FEED: u64 = 2;
pub const STORE: u64 = 1;
pub const LOOP_UPDATE: u64 = 1;
pub const CHECK: u64 = 2;
pub const SIGMOID: u64 = 8;
pub const COMPARE: u64 = 1;
pub const BARRIER: u64 = 4;

/// Sink for instrumentation. The unit type ignores everything and compiles
/// away in uninstrumented runs.
pub trait Meter {
    /// One execution (HaRE off/on segment for non-crucial regions) of `region`.
    fn enter(&mut self, _region: &'static str) {}
    fn ops(&mut self, _region: &'static str, _units: u64) {}
    /// Stores are also charged as operations.
    fn stores(&mut self, _region: &'static str, _count: u64) {}
    /// Bound checks protecting `region`'s committed values.
    fn checks(&mut self, _region: &'static str, _count: u64) {}
}

impl Meter for () {}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RegionCost {
    pub executions: u64,
    pub ops: u64,
    pub stores: u64,
    pub checks: u64,
}

/// Accumulated costs over a number of instrumented inferences.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Profile {
    pub inferences: u64,
    pub regions: BTreeMap<&'static str, RegionCost>,
}

impl Meter for Profile {
    fn enter(&mut self, region: &'static str) {
        self.regions.entry(region).or_default().executions += 1;
    }

    fn ops(&mut self, region: &'static str, units: u64) {
        self.regions.entry(region).or_default().ops += units;
    }

    fn stores(&mut self, region: &'static str, count: u64) {
        let cost = self.regions.entry(region).or_default();
        cost.stores += count;
        cost.ops += count * STORE;
    }

    fn checks(&mut self, region: &'static str, count: u64) {
        self.regions.entry(region).or_default().checks += count;
    }
}

impl Profile {
    pub fn total_ops(&self) -> u64 {
        self.regions.values().map(|c| c.ops).sum()
    }

    pub fn time_fraction(&self, region: &str) -> f64 {
        let total = self.total_ops();
        self.regions.get(region).map_or(0.0, |c| c.ops as f64 / total as f64)
    }

    /// Region table for `workload`. `layout` lists every region with its
    /// class and bound checker; time fractions are normalised op shares with
    /// the rounding residue folded into the largest region so they sum to 1.
    pub fn region_table(
        &self,
        workload: &str,
        layout: &[(&'static str, RegionClass, Option<BoundSpec<f64>>)],
    ) -> Result<RegionTable> {
        let per = |v: u64| v / self.inferences.max(1);
        let mut regions: Vec<RegionDescriptor> = layout
            .iter()
            .map(|(id, class, bound)| {
                let cost = self.regions.get(id).copied().unwrap_or_default();
                let mut r = RegionDescriptor::new(*id, workload, *class, round12(self.time_fraction(id)))
                    .with_executions(per(cost.executions).max(1))
                    .with_checks(per(cost.checks))
                    .with_store_fraction(if cost.ops == 0 { 0.0 } else { round12(cost.stores as f64 / cost.ops as f64) });
                r.bound = *bound;
                r
            })
            .collect();
        let sum: f64 = regions.iter().map(|r| r.time_fraction).sum();
        if let Some(largest) =
            regions.iter_mut().max_by(|a, b| a.time_fraction.total_cmp(&b.time_fraction))
        {
            largest.time_fraction = round12(largest.time_fraction + (1.0 - sum));
        }
        validate_region_set(regions)
    }
}

fn round12(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}
