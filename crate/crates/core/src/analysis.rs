//! Monte Carlo accuracy estimation and greedy configuration selection.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault::{events_in_scope, run_trial, InjectionPlan, TrialResult};
use crate::model::{all_candidates, AccuracyReport, Configuration, FaultSpec, RegionTable, ValueModel};
use crate::scalar::Scalar;
use crate::workloads::PreparedWorkload;

/// Anything that can estimate the accuracy of a configuration. Implemented
/// by prepared workloads; tests drive the selector with scripted losses.
pub trait ConfigurationEvaluator: Sync {
    fn regions(&self) -> &RegionTable;

    /// Report over `trials` trials, with `per_region_loss` filled in for
    /// every region of `config`.
    fn evaluate(&self, config: &Configuration, fault_spec: &FaultSpec, trials: usize) -> Result<AccuracyReport>;
}

/// Per-trial correct counts under `plan_for`, in trial order, and the
/// merged summary of every injected event.
fn run_trials<S, P>(
    workload: &PreparedWorkload<'_, S>,
    config: &Configuration,
    trials: usize,
    plan_for: P,
) -> Result<(Vec<usize>, EventSummary)>
where
    S: Scalar,
    P: Fn(u64) -> InjectionPlan + Sync,
{
    let per_trial: Vec<(usize, EventSummary)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let result = run_trial(workload, config, &plan_for(t))?;
            let mut summary = EventSummary::default();
            summary.record(&result, config);
            Ok((result.correct, summary))
        })
        .collect::<Result<_>>()?;
    let mut summary = EventSummary::default();
    let correct = per_trial
        .into_iter()
        .map(|(correct, s)| {
            summary.merge(&s);
            correct
        })
        .collect();
    Ok((correct, summary))
}

/// Mean accuracy and its standard error, from integer totals: trials
/// that all match the fault-free run reproduce its accuracy bit for bit,
/// with a standard error of exactly zero.
fn accuracy_stats(correct: &[usize], samples: usize) -> (f64, f64) {
    let t = correct.len() as u128;
    let sum: u128 = correct.iter().map(|c| *c as u128).sum();
    let sum_sq: u128 = correct.iter().map(|c| (*c as u128).pow(2)).sum();
    let mean = sum as f64 / (t * samples as u128) as f64;
    if t < 2 {
        return (mean, 0.0);
    }
    // Sample variance of the counts: (t * sum_sq - sum^2) / (t * (t - 1)).
    let var = (t * sum_sq - sum * sum) as f64 / (t * (t - 1)) as f64;
    (mean, (var / t as f64).sqrt() / samples as f64)
}

/// Event counts of a batch of trials, keyed by
/// `region=.. target=.. kind=.. action=..`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSummary {
    pub trials: u64,
    pub events: u64,
    pub by_kind: BTreeMap<String, u64>,
    /// Events naming a crucial region or a non-data-flow target. Always 0.
    pub out_of_scope: u64,
    /// Stores whose verified address differed from the requested one. Always 0.
    pub address_deviations: u64,
}

impl EventSummary {
    pub fn record<S: Scalar>(&mut self, result: &TrialResult<S>, config: &Configuration) {
        self.trials += 1;
        self.address_deviations += result.audit.deviations;
        for e in &result.events {
            let rec = e.audit_record(result.trial_index);
            self.events += 1;
            if !events_in_scope(std::slice::from_ref(e), config) {
                self.out_of_scope += 1;
            }
            let key = format!("region={} target={} kind={} action={}", rec.region, rec.target, rec.target_kind, rec.action);
            *self.by_kind.entry(key).or_default() += 1;
        }
    }

    pub fn merge(&mut self, other: &EventSummary) {
        self.trials += other.trials;
        self.events += other.events;
        self.out_of_scope += other.out_of_scope;
        self.address_deviations += other.address_deviations;
        for (k, n) in &other.by_kind {
            *self.by_kind.entry(k.clone()).or_default() += n;
        }
    }

    /// One `key count=n` line per event kind, then the totals.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for (k, n) in &self.by_kind {
            out.push_str(&format!("{k} count={n}\n"));
        }
        out.push_str(&format!(
            "trials={} events={} out_of_scope={} address_deviations={}\n",
            self.trials, self.events, self.out_of_scope, self.address_deviations
        ));
        out
    }
}

pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Average accuracy of `config` over `trials` independent trials, plus the
/// loss of each of its regions measured with only that region vulnerable.
pub fn evaluate_configuration<S: Scalar>(
    workload: &PreparedWorkload<'_, S>,
    config: &Configuration,
    fault_spec: &FaultSpec,
    trials: usize,
) -> Result<AccuracyReport> {
    evaluate_with_events(workload, config, fault_spec, trials).map(|(report, _)| report)
}

/// [`evaluate_configuration`] plus a summary of the events of the
/// full-configuration trials.
pub fn evaluate_with_events<S: Scalar>(
    workload: &PreparedWorkload<'_, S>,
    config: &Configuration,
    fault_spec: &FaultSpec,
    trials: usize,
) -> Result<(AccuracyReport, EventSummary)> {
    if trials == 0 {
        return Err(Error::InvalidConstraints("trials must be at least 1".into()));
    }
    workload.instance().check_config(config)?;
    let fault_free = workload.fault_free_accuracy();
    let spec = *fault_spec;
    let samples = workload.dataset().len();
    let (correct, summary) = run_trials(workload, config, trials, |t| InjectionPlan::full(config, spec, t))?;
    let (mean, stderr) = accuracy_stats(&correct, samples);
    let mut report = AccuracyReport::new(config.clone(), trials, mean, fault_free, stderr);
    for region in &config.non_crucial {
        // With one region the single-region plan is the full plan.
        let (mean, stderr) = if config.len() == 1 {
            (mean, stderr)
        } else {
            let (correct, _) = run_trials(workload, config, trials, |t| InjectionPlan::single(region, spec, t))?;
            accuracy_stats(&correct, samples)
        };
        report.per_region_loss.insert(region.clone(), fault_free - mean);
        report.per_region_stderr.insert(region.clone(), stderr);
    }
    if report.negative_loss_flag {
        log::warn!(
            "{}: accuracy loss {:.4} is below -3 standard errors ({:.4})",
            config.label(),
            report.accuracy_loss,
            stderr
        );
    }
    Ok((report, summary))
}

impl<S: Scalar> ConfigurationEvaluator for PreparedWorkload<'_, S> {
    fn regions(&self) -> &RegionTable {
        self.instance().regions()
    }

    fn evaluate(&self, config: &Configuration, fault_spec: &FaultSpec, trials: usize) -> Result<AccuracyReport> {
        evaluate_configuration(self, config, fault_spec, trials)
    }
}

/// Reuses reports of configurations already evaluated with the same fault
/// spec and trial count. Evaluations are deterministic, so this changes
/// nothing but run time.
pub struct MemoEvaluator<'e, E: ?Sized> {
    inner: &'e E,
    memo: Mutex<HashMap<(Configuration, u64, u64, ValueModel, usize), AccuracyReport>>,
}

impl<'e, E: ConfigurationEvaluator + ?Sized> MemoEvaluator<'e, E> {
    pub fn new(inner: &'e E) -> Self {
        Self { inner, memo: Mutex::new(HashMap::new()) }
    }
}

impl<E: ConfigurationEvaluator + ?Sized> ConfigurationEvaluator for MemoEvaluator<'_, E> {
    fn regions(&self) -> &RegionTable {
        self.inner.regions()
    }

    fn evaluate(&self, config: &Configuration, fault_spec: &FaultSpec, trials: usize) -> Result<AccuracyReport> {
        let key = (
            config.clone(),
            fault_spec.error_rate.to_bits(),
            fault_spec.master_seed,
            fault_spec.value_model,
            trials,
        );
        if let Some(report) = self.memo.lock().expect("memo lock").get(&key) {
            return Ok(report.clone());
        }
        let report = self.inner.evaluate(config, fault_spec, trials)?;
        self.memo.lock().expect("memo lock").insert(key, report.clone());
        Ok(report)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConstraints {
    pub error_rate: f64,
    pub accuracy_loss_threshold: f64,
    pub trials: usize,
}

impl SelectionConstraints {
    pub fn new(error_rate: f64, accuracy_loss_threshold: f64, trials: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&error_rate) {
            return Err(Error::InvalidConstraints(format!("error_rate {error_rate} outside [0, 1]")));
        }
        if !(accuracy_loss_threshold > 0.0 && accuracy_loss_threshold <= 1.0) {
            return Err(Error::InvalidConstraints(format!(
                "threshold {accuracy_loss_threshold} outside (0, 1]"
            )));
        }
        if trials == 0 {
            return Err(Error::InvalidConstraints("trials must be at least 1".into()));
        }
        Ok(Self { error_rate, accuracy_loss_threshold, trials })
    }
}

/// One demotion of the greedy loop, with the evidence it was based on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemotionStep {
    pub region: String,
    pub loss: f64,
    /// Loss of the configuration the region was demoted from.
    pub configuration_loss: f64,
    /// Per-region losses and time fractions of every region considered.
    pub candidates: BTreeMap<String, CandidateLoss>,
    /// Runner-up within one standard error of the demoted region (an exact
    /// tie counts).
    pub close_call: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateLoss {
    pub loss: f64,
    pub stderr: f64,
    pub time_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub final_config: Configuration,
    pub demotion_sequence: Vec<DemotionStep>,
    pub final_report: AccuracyReport,
    pub threshold_met: bool,
}

/// The region the greedy rule demotes: largest loss, then smallest time
/// fraction, then smallest id.
pub fn pick_demotion(candidates: &BTreeMap<String, CandidateLoss>) -> Option<&str> {
    candidates
        .iter()
        .min_by(|(ia, a), (ib, b)| {
            b.loss
                .total_cmp(&a.loss)
                .then(a.time_fraction.total_cmp(&b.time_fraction))
                .then(ia.cmp(ib))
        })
        .map(|(id, _)| id.as_str())
}

/// Greedy selection: start from every candidate region and demote the
/// region with the largest loss until the configuration meets the
/// threshold or nothing is left. `base` supplies the seed and value model;
/// the error rate comes from `constraints`.
pub fn select_configuration<E: ConfigurationEvaluator + ?Sized>(
    evaluator: &E,
    constraints: &SelectionConstraints,
    base: &FaultSpec,
) -> Result<SelectionResult> {
    let spec = FaultSpec::new(constraints.error_rate, base.master_seed, base.value_model)?;
    let regions = evaluator.regions();
    let mut config = all_candidates(regions);
    let mut steps = Vec::new();
    loop {
        let report = evaluator.evaluate(&config, &spec, constraints.trials)?;
        let met = report.accuracy_loss <= constraints.accuracy_loss_threshold;
        if met || config.is_empty() {
            return Ok(SelectionResult { final_config: config, demotion_sequence: steps, final_report: report, threshold_met: met });
        }
        let candidates: BTreeMap<String, CandidateLoss> = config
            .non_crucial
            .iter()
            .map(|id| {
                let c = CandidateLoss {
                    loss: report.per_region_loss.get(id).copied().unwrap_or(0.0),
                    stderr: report.per_region_stderr.get(id).copied().unwrap_or(0.0),
                    time_fraction: regions.require(id)?.time_fraction,
                };
                Ok((id.clone(), c))
            })
            .collect::<Result<_>>()?;
        let region = pick_demotion(&candidates).expect("configuration is not empty").to_owned();
        let chosen = candidates[&region];
        let close_call = candidates
            .iter()
            .any(|(id, c)| *id != region && chosen.loss - c.loss <= chosen.stderr.max(c.stderr));
        if close_call {
            log::warn!(
                "demoting `{region}` (loss {:.4}) over a runner-up at most one standard error behind",
                chosen.loss
            );
        }
        log::info!("{}: loss {:.4}, demoting `{region}`", config.label(), report.accuracy_loss);
        config = config.demote(&region)?;
        steps.push(DemotionStep {
            region,
            loss: chosen.loss,
            configuration_loss: report.accuracy_loss,
            candidates,
            close_call,
        });
    }
}

/// Checks a demotion sequence against the logged losses: every step must
/// be the one [`pick_demotion`] makes from its own candidate set, and the
/// candidate sets must shrink by exactly the demoted region.
pub fn replay_is_faithful(result: &SelectionResult) -> bool {
    let mut previous: Option<(&BTreeMap<String, CandidateLoss>, &str)> = None;
    for step in &result.demotion_sequence {
        if pick_demotion(&step.candidates) != Some(step.region.as_str()) {
            return false;
        }
        if let Some((cands, demoted)) = previous {
            let expected: Vec<&String> = cands.keys().filter(|k| k.as_str() != demoted).collect();
            if step.candidates.keys().collect::<Vec<_>>() != expected {
                return false;
            }
        }
        previous = Some((&step.candidates, &step.region));
    }
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub workload: String,
    pub threshold: f64,
    pub error_rate: f64,
    pub selection: SelectionResult,
}

/// Selection over the threshold x error-rate grid, thresholds outermost.
/// Evaluations shared between cells are computed once.
pub fn sweep<E: ConfigurationEvaluator + ?Sized>(
    evaluator: &E,
    thresholds: &[f64],
    error_rates: &[f64],
    trials: usize,
    base: &FaultSpec,
) -> Result<Vec<SweepCell>> {
    if thresholds.is_empty() || error_rates.is_empty() {
        return Err(Error::InvalidConstraints("sweep grid is empty".into()));
    }
    let memo = MemoEvaluator::new(evaluator);
    let mut cells = Vec::with_capacity(thresholds.len() * error_rates.len());
    for &threshold in thresholds {
        for &error_rate in error_rates {
            let constraints = SelectionConstraints::new(error_rate, threshold, trials)?;
            let selection = select_configuration(&memo, &constraints, base)?;
            cells.push(SweepCell {
                workload: evaluator.regions().workload().to_owned(),
                threshold,
                error_rate,
                selection,
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(loss: f64, time_fraction: f64) -> CandidateLoss {
        CandidateLoss { loss, stderr: 0.0, time_fraction }
    }

    #[test]
    fn largest_loss_wins() {
        let c = BTreeMap::from([("A".to_owned(), cand(0.08, 0.5)), ("B".into(), cand(0.03, 0.1)), ("C".into(), cand(0.01, 0.1))]);
        assert_eq!(pick_demotion(&c), Some("A"));
    }

    #[test]
    fn ties_go_to_shorter_region_then_id() {
        let c = BTreeMap::from([("A".to_owned(), cand(0.05, 0.4)), ("B".into(), cand(0.05, 0.2))]);
        assert_eq!(pick_demotion(&c), Some("B"));
        let c = BTreeMap::from([("B".to_owned(), cand(0.05, 0.2)), ("A".into(), cand(0.05, 0.2))]);
        assert_eq!(pick_demotion(&c), Some("A"));
        assert_eq!(pick_demotion(&BTreeMap::new()), None);
    }

    #[test]
    fn integer_statistics_agree_with_float_ones() {
        let correct = [96, 95, 96, 90, 96];
        let (m, s) = accuracy_stats(&correct, 100);
        let (fm, fs) = mean_and_stderr(&correct.map(|c| c as f64 / 100.0));
        assert!((m - fm).abs() < 1e-15 && (s - fs).abs() < 1e-15);
        assert_eq!(accuracy_stats(&[96; 7], 100), (0.96, 0.0));
    }

    #[test]
    fn statistics() {
        let (m, s) = mean_and_stderr(&[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(m, 0.5);
        assert!((s - (1.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_and_stderr(&[0.7]), (0.7, 0.0));
    }

    #[test]
    fn constraint_ranges() {
        assert!(SelectionConstraints::new(0.001, 0.1, 1000).is_ok());
        assert!(SelectionConstraints::new(0.001, 1.0, 1).is_ok());
        assert!(SelectionConstraints::new(0.001, 0.0, 10).is_err());
        assert!(SelectionConstraints::new(1.5, 0.1, 10).is_err());
        assert!(SelectionConstraints::new(0.001, 0.1, 0).is_err());
    }
}
