//! k-nearest-neighbour classifier over the training fixture.
//!
//! For each query the squared Euclidean distance to every training sample is
//! one execution of the `distance` region; its injectable targets are the
//! running sum after each pixel. Distances pass a drop checker with bounds
//! `[0, pixels * max_input^2]`; a dropped distance removes that neighbour from
//! the ranking. Sorting (`sort`) and the majority vote (`vote`) are crucial.
//! A fault in one distance cannot reach any other distance.
//!
//! Ranking is by distance, then training index. Vote ties go to the tied
//! class whose member ranks nearest.

use crate::error::{Error, Result};
use crate::fault::StrikeSchedule;
use crate::mnist::{Dataset, Sample, CLASSES, IMAGE_PIXELS};
use crate::model::BoundSpec;
use crate::model::Configuration;
use crate::resilience::{bound_check, protected_store, CheckAction, ProtectedMemory, StoreAudit, TargetKind};
use crate::scalar::Scalar;

use super::profile::{self, Meter};
use super::{ExecutionTrace, InjectionEvent, CONTROL};

pub const INPUT: &str = "input";
pub const DISTANCE: &str = "distance";
pub const SORT: &str = "sort";
pub const VOTE: &str = "vote";
pub const REGIONS: [&str; 5] = [INPUT, DISTANCE, SORT, VOTE, CONTROL];

pub const DEFAULT_K: usize = 5;
const TARGET: &str = "distance_acc";

#[derive(Clone, Debug, PartialEq)]
pub struct Knn<S> {
    /// Row-major `n x 784`.
    train: Vec<S>,
    labels: Vec<u8>,
    k: usize,
    bound: BoundSpec<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cached<S> {
    distances: Vec<S>,
    label: u8,
}

impl<S: Scalar> Knn<S> {
    pub fn new(train: &Dataset<S>, k: usize) -> Result<Self> {
        if k == 0 || k > train.len() {
            return Err(Error::KTooLarge { k, available: train.len() });
        }
        let mut pixels = Vec::with_capacity(train.len() * IMAGE_PIXELS);
        for s in train.samples() {
            if s.pixels.len() != IMAGE_PIXELS {
                return Err(Error::ShapeMismatch(format!("training sample with {} pixels", s.pixels.len())));
            }
            pixels.extend_from_slice(&s.pixels);
        }
        let labels = train.samples().iter().map(|s| s.label).collect();
        let bound = BoundSpec::drop(S::zero(), S::of(IMAGE_PIXELS as f64))?;
        Ok(Self { train: pixels, labels, k, bound })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn training_size(&self) -> usize {
        self.labels.len()
    }

    pub fn training_label(&self, j: usize) -> u8 {
        self.labels[j]
    }

    pub fn training_pixels(&self, j: usize) -> &[S] {
        &self.train[j * IMAGE_PIXELS..(j + 1) * IMAGE_PIXELS]
    }

    pub fn distance_bound(&self) -> &BoundSpec<S> {
        &self.bound
    }

    pub fn executions(&self, region: &str) -> u64 {
        if region == DISTANCE {
            self.training_size() as u64
        } else {
            1
        }
    }

    pub fn targets_per_execution(&self, region: &str) -> u32 {
        if region == DISTANCE {
            IMAGE_PIXELS as u32
        } else {
            1
        }
    }

    /// Distance to training sample `j`, through the drop checker.
    #[inline]
    fn distance(&self, query: &[S], j: usize, strike: Option<&crate::fault::Strike<S>>, events: &mut Vec<InjectionEvent<S>>) -> Option<S> {
        let row = self.training_pixels(j);
        let mut acc = S::zero();
        match strike {
            None => {
                for (q, t) in query.iter().zip(row) {
                    let d = *q - *t;
                    acc += d * d;
                }
            }
            Some(s) => {
                for (i, (q, t)) in query.iter().zip(row).enumerate() {
                    let d = *q - *t;
                    acc += d * d;
                    if i == s.target as usize {
                        events.push(InjectionEvent {
                            region: DISTANCE,
                            iteration: j as u64,
                            target: TARGET,
                            target_kind: TargetKind::DataFlow,
                            old: acc,
                            new: s.value,
                            committed: true,
                            action: CheckAction::Passed,
                        });
                        acc = s.value;
                    }
                }
            }
        }
        let checked = bound_check(acc, &self.bound);
        if strike.is_some() {
            let e = events.last_mut().expect("strike logged");
            e.action = checked.action;
            e.committed = checked.is_committed();
        }
        checked.committed
    }

    /// Sort the committed distances and vote among the first `k`.
    fn classify<M: Meter>(&self, distances: impl Iterator<Item = (usize, Option<S>)>, meter: &mut M) -> u8 {
        let mut ranked: Vec<(S, u32)> = distances.filter_map(|(j, d)| d.map(|d| (d, j as u32))).collect();
        let mut compares = 0u64;
        ranked.sort_by(|a, b| {
            compares += 1;
            // Committed distances are finite.
            a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1))
        });
        meter.enter(SORT);
        meter.ops(SORT, compares * profile::COMPARE);
        meter.stores(SORT, ranked.len() as u64);

        let nearest = &ranked[..self.k.min(ranked.len())];
        let mut votes = [0usize; CLASSES];
        for (_, j) in nearest {
            votes[usize::from(self.labels[*j as usize])] += 1;
        }
        let top = votes.iter().copied().max().unwrap_or(0);
        let winner = nearest
            .iter()
            .map(|(_, j)| self.labels[*j as usize])
            .find(|l| votes[usize::from(*l)] == top)
            .unwrap_or(0);
        meter.enter(VOTE);
        meter.ops(VOTE, (nearest.len() + CLASSES) as u64 * profile::COMPARE);
        winner
    }

    pub fn run<M: Meter>(
        &self,
        sample: &Sample<S>,
        config: &Configuration,
        schedule: &StrikeSchedule<S>,
        meter: &mut M,
    ) -> ExecutionTrace<S> {
        let strikes = if config.contains(DISTANCE) { schedule.for_region(DISTANCE) } else { &[] };
        let mut events = Vec::new();
        let mut audit = StoreAudit::default();

        let mut input = ProtectedMemory::new(IMAGE_PIXELS);
        for (i, v) in sample.pixels.iter().enumerate() {
            protected_store(&mut input, i, *v);
        }
        meter.enter(INPUT);
        meter.ops(INPUT, IMAGE_PIXELS as u64 * profile::FEED);
        meter.stores(INPUT, IMAGE_PIXELS as u64);
        audit.merge(&input.audit);

        let n = self.training_size();
        let mut distances = ProtectedMemory::new(n);
        let mut committed = Vec::with_capacity(n);
        let mut pending = strikes.iter().peekable();
        for j in 0..n {
            let strike = pending.next_if(|s| s.execution == j as u64);
            let d = self.distance(input.as_slice(), j, strike, &mut events);
            if let Some(v) = d {
                protected_store(&mut distances, j, v);
            }
            committed.push(d);
            meter.enter(DISTANCE);
            meter.ops(DISTANCE, IMAGE_PIXELS as u64 * profile::SQUARED_DIFF);
            meter.stores(DISTANCE, 1);
            meter.checks(DISTANCE, 1);
            meter.ops(CONTROL, profile::LOOP_UPDATE + profile::CHECK);
        }
        audit.merge(&distances.audit);
        let predicted_label = self.classify(committed.into_iter().enumerate(), meter);
        ExecutionTrace { predicted_label, events, audit }
    }

    pub fn prepare(&self, sample: &Sample<S>) -> Cached<S> {
        let mut scratch = Vec::new();
        let distances: Vec<S> = (0..self.training_size())
            .map(|j| self.distance(&sample.pixels, j, None, &mut scratch).expect("fault-free distances are in range"))
            .collect();
        let label = self.classify(distances.iter().map(|d| Some(*d)).enumerate(), &mut ());
        Cached { distances, label }
    }

    pub fn run_cached(
        &self,
        sample: &Sample<S>,
        cached: &Cached<S>,
        config: &Configuration,
        schedule: &StrikeSchedule<S>,
    ) -> ExecutionTrace<S> {
        let strikes = if config.contains(DISTANCE) { schedule.for_region(DISTANCE) } else { &[] };
        let mut events = Vec::new();
        if strikes.is_empty() {
            return ExecutionTrace { predicted_label: cached.label, events, audit: StoreAudit::default() };
        }
        let mut replaced: Vec<(usize, Option<S>)> = Vec::with_capacity(strikes.len());
        for s in strikes {
            let j = s.execution as usize;
            replaced.push((j, self.distance(&sample.pixels, j, Some(s), &mut events)));
        }
        let audit = StoreAudit { stores: replaced.iter().filter(|(_, d)| d.is_some()).count() as u64, ..Default::default() };
        let mut next = replaced.iter().peekable();
        let distances = cached.distances.iter().enumerate().map(|(j, d)| match next.next_if(|(m, _)| *m == j) {
            Some((_, v)) => (j, *v),
            None => (j, Some(*d)),
        });
        let predicted_label = self.classify(distances, &mut ());
        ExecutionTrace { predicted_label, events, audit }
    }

    pub fn cached_label(cached: &Cached<S>) -> u8 {
        cached.label
    }
}
