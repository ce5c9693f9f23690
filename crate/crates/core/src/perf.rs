//! Analytic completion-time model.
//!
//! Times are normalised to the unprotected baseline (1.0). A crucial region
//! costs its time fraction times the HaRE multiplier `h`; a non-crucial
//! region costs its baseline time plus SHR's redundant store-address work,
//! and every bound check and HaRE toggle adds a fixed cost:
//!
//! ```text
//! T = sum_crucial f*h + sum_noncrucial f*(1 + store_factor*store_fraction)
//!     + check_cost*checks + switch_penalty*toggles
//! ```
//!
//! HaRE's memory-stall and synchronisation inflation are folded into `h`.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{all_candidates, Configuration, RegionTable};
use crate::resilience::{bound_check_count, region_transition_count};
use crate::scalar::Scalar;

/// Default SHR store overhead per unit store fraction.
pub const DEFAULT_SHR_STORE_FACTOR: f64 = 0.05;
/// Share of baseline time the default check cost adds when every candidate
/// region runs under SHR.
pub const DEFAULT_CHECK_SHARE: f64 = 0.005;
/// Same for HaRE toggles.
pub const DEFAULT_SWITCH_SHARE: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel<F> {
    pub hare_multiplier: F,
    pub shr_store_factor: F,
    /// Cost per bound check, in baseline inference time.
    pub shr_check_cost: F,
    /// Cost per HaRE on/off toggle, in baseline inference time.
    pub switch_penalty: F,
}

impl<F: Scalar> CostModel<F> {
    pub fn new(hare_multiplier: F, shr_store_factor: F, shr_check_cost: F, switch_penalty: F) -> Result<Self> {
        let cm = Self { hare_multiplier, shr_store_factor, shr_check_cost, switch_penalty };
        cm.validate()?;
        Ok(cm)
    }

    pub fn validate(&self) -> Result<()> {
        let factors = [self.shr_store_factor, self.shr_check_cost, self.switch_penalty];
        if !self.hare_multiplier.is_finite() || self.hare_multiplier < F::one() {
            return Err(Error::InvalidCostModel(format!("hare_multiplier {} below 1", self.hare_multiplier)));
        }
        if factors.iter().any(|f| !f.is_finite() || *f < F::zero()) {
            return Err(Error::InvalidCostModel("SHR factors must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// HaRE is free and SHR costs nothing: every configuration prices at 1.
    pub fn identity() -> Self {
        Self { hare_multiplier: F::one(), shr_store_factor: F::zero(), shr_check_cost: F::zero(), switch_penalty: F::zero() }
    }
}

/// Cost model with `h = target` and the default SHR factors. Per-check and
/// per-toggle costs are sized so that, with every candidate of `regions`
/// under SHR, checks and toggles each add [`DEFAULT_CHECK_SHARE`] /
/// [`DEFAULT_SWITCH_SHARE`] of baseline time.
pub fn calibrate<F: Scalar>(target_hare_overhead: F, regions: &RegionTable) -> Result<CostModel<F>> {
    if !(target_hare_overhead >= F::one()) || !target_hare_overhead.is_finite() {
        return Err(Error::InvalidTarget(target_hare_overhead.as_f64()));
    }
    let all = all_candidates(regions);
    let per = |share: f64, count: u64| if count == 0 { F::zero() } else { F::of(share / count as f64) };
    CostModel::new(
        target_hare_overhead,
        F::of(DEFAULT_SHR_STORE_FACTOR),
        per(DEFAULT_CHECK_SHARE, bound_check_count(&all, regions)),
        per(DEFAULT_SWITCH_SHARE, region_transition_count(&all, regions)),
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown<F> {
    pub crucial_compute: F,
    pub noncrucial_compute: F,
    pub shr_store_overhead: F,
    pub bound_checks: F,
    pub switches: F,
}

impl<F: Float> Breakdown<F> {
    pub fn total(&self) -> F {
        self.crucial_compute + self.noncrucial_compute + self.shr_store_overhead + self.bound_checks + self.switches
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport<F> {
    pub normalized_time: F,
    pub breakdown: Breakdown<F>,
}

/// Completion time of `config` relative to the baseline. `toggles` is the
/// HaRE on/off count of one inference, see [`region_transition_count`].
pub fn price<F: Scalar>(config: &Configuration, regions: &RegionTable, cm: &CostModel<F>, toggles: u64) -> OverheadReport<F> {
    let mut b = Breakdown::<F>::default();
    for r in regions.iter().filter(|r| config.contains(&r.id)) {
        let f = F::of(r.time_fraction);
        b.noncrucial_compute += f;
        b.shr_store_overhead += f * cm.shr_store_factor * F::of(r.store_fraction);
    }
    // The crucial share is the complement of the non-crucial one, so that
    // all-crucial prices at exactly `h` and the identity model at exactly 1
    // whatever the rounding of the individual fractions.
    b.crucial_compute = (F::one() - b.noncrucial_compute) * cm.hare_multiplier;
    b.bound_checks = cm.shr_check_cost * F::of(bound_check_count(config, regions) as f64);
    b.switches = cm.switch_penalty * F::of(toggles as f64);
    OverheadReport { normalized_time: b.total(), breakdown: b }
}

/// [`price`] with the toggle count derived from the region table.
pub fn price_config<F: Scalar>(config: &Configuration, regions: &RegionTable, cm: &CostModel<F>) -> OverheadReport<F> {
    price(config, regions, cm, region_transition_count(config, regions))
}

/// Percentage by which `config` beats running everything under HaRE.
pub fn improvement_over_hare<F: Scalar>(config: &Configuration, regions: &RegionTable, cm: &CostModel<F>, toggles: u64) -> F {
    let hare = price(&Configuration::all_crucial(regions), regions, cm, 0).normalized_time;
    let cl = price(config, regions, cm, toggles).normalized_time;
    (hare - cl) / hare * F::of(100.0)
}
