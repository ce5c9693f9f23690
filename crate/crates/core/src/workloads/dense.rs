//! Fully connected layer with an unrolled, region-structured accumulation.
//!
//! Each neuron's accumulation `acc = bias + sum(x[i] * w[i])` runs as
//! `inputs / unroll` region executions of `unroll` taps each; the
//! injectable targets of an execution are the accumulator values after each
//! of its taps. The loop counter update between executions stays crucial.
//! The accumulator then passes the clamp checker before the sigmoid.

use crate::error::{Error, Result};
use crate::fault::Strike;
use crate::model::BoundSpec;
use crate::resilience::{bound_check, protected_store, CheckAction, ProtectedMemory, TargetKind};
use crate::scalar::{sigmoid, Scalar};

use super::profile::{self, Meter};
use super::{InjectionEvent, CONTROL};

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S> {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs x inputs`.
    weights: Vec<S>,
    bias: Vec<S>,
    unroll: usize,
}

/// Where a layer's faults are recorded.
#[derive(Clone, Copy, Debug)]
pub struct LayerRegion {
    pub id: &'static str,
    pub target: &'static str,
}

impl<S: Scalar> Dense<S> {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<S>, bias: Vec<S>, unroll: usize) -> Result<Self> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::ShapeMismatch(format!(
                "dense {inputs}->{outputs}: {} weights, {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if unroll == 0 || inputs % unroll != 0 {
            return Err(Error::ShapeMismatch(format!("{inputs} inputs do not split into blocks of {unroll}")));
        }
        Ok(Self { inputs, outputs, weights, bias, unroll })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn unroll(&self) -> usize {
        self.unroll
    }

    pub fn blocks(&self) -> usize {
        self.inputs / self.unroll
    }

    /// Region executions per forward pass.
    pub fn executions(&self) -> u64 {
        (self.outputs * self.blocks()) as u64
    }

    pub fn row(&self, j: usize) -> &[S] {
        &self.weights[j * self.inputs..(j + 1) * self.inputs]
    }

    pub fn bias(&self, j: usize) -> S {
        self.bias[j]
    }

    /// Accumulate neuron `j`, applying `strikes` (all belonging to this
    /// neuron, ordered by execution).
    #[inline]
    fn accumulate(
        &self,
        x: &[S],
        j: usize,
        strikes: &[Strike<S>],
        region: LayerRegion,
        events: &mut Vec<InjectionEvent<S>>,
    ) -> S {
        let w = self.row(j);
        let mut acc = self.bias[j];
        if strikes.is_empty() {
            for (xi, wi) in x.iter().zip(w) {
                acc += *xi * *wi;
            }
            return acc;
        }
        let first = (j * self.blocks()) as u64;
        let mut pending = strikes.iter().peekable();
        for b in 0..self.blocks() {
            let execution = first + b as u64;
            let hit = pending.next_if(|s| s.execution == execution);
            for t in 0..self.unroll {
                let i = b * self.unroll + t;
                acc += x[i] * w[i];
                if let Some(s) = hit.filter(|s| s.target as usize == t) {
                    events.push(InjectionEvent {
                        region: region.id,
                        iteration: execution,
                        target: region.target,
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
        acc
    }

    /// Neuron `j` end to end: accumulation, clamp checker, sigmoid, store.
    #[allow(clippy::too_many_arguments)]
    fn neuron<M: Meter>(
        &self,
        x: &[S],
        j: usize,
        strikes: &[Strike<S>],
        region: LayerRegion,
        bound: &BoundSpec<S>,
        out: &mut ProtectedMemory<S>,
        events: &mut Vec<InjectionEvent<S>>,
        meter: &mut M,
    ) {
        let logged = events.len();
        let acc = self.accumulate(x, j, strikes, region, events);
        let checked = bound_check(acc, bound);
        for e in &mut events[logged..] {
            e.action = checked.action;
        }
        // The clamp checker always commits a value.
        let committed = checked.committed.unwrap_or(bound.lower);
        protected_store(out, j, sigmoid(committed));

        for _ in 0..self.blocks() {
            meter.enter(region.id);
        }
        meter.ops(region.id, self.inputs as u64 * profile::MAC);
        meter.stores(region.id, 1);
        meter.checks(region.id, 1);
        meter.ops(CONTROL, self.blocks() as u64 * profile::LOOP_UPDATE + profile::CHECK + profile::SIGMOID);
    }

    /// Strikes of neuron `j` from the front of `strikes`.
    fn split_neuron<'s>(&self, strikes: &mut &'s [Strike<S>], j: usize) -> &'s [Strike<S>] {
        let end = ((j + 1) * self.blocks()) as u64;
        let n = strikes.iter().take_while(|s| s.execution < end).count();
        let (mine, rest) = strikes.split_at(n);
        *strikes = rest;
        mine
    }

    /// Full forward pass.
    pub fn forward<M: Meter>(
        &self,
        x: &[S],
        mut strikes: &[Strike<S>],
        region: LayerRegion,
        bound: &BoundSpec<S>,
        events: &mut Vec<InjectionEvent<S>>,
        meter: &mut M,
    ) -> ProtectedMemory<S> {
        debug_assert_eq!(x.len(), self.inputs);
        let mut out = ProtectedMemory::new(self.outputs);
        for j in 0..self.outputs {
            let mine = self.split_neuron(&mut strikes, j);
            self.neuron(x, j, mine, region, bound, &mut out, events, meter);
        }
        meter.ops(CONTROL, profile::BARRIER);
        out
    }

    /// Forward pass reusing the fault-free outputs `cached` for every neuron
    /// whose inputs are unchanged and which is not struck. Returns the
    /// outputs and whether any differs bitwise from `cached`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_cached(
        &self,
        x: &[S],
        input_changed: bool,
        cached: &[S],
        mut strikes: &[Strike<S>],
        region: LayerRegion,
        bound: &BoundSpec<S>,
        events: &mut Vec<InjectionEvent<S>>,
    ) -> (ProtectedMemory<S>, bool) {
        if input_changed {
            let out = self.forward(x, strikes, region, bound, events, &mut ());
            let changed = differs(out.as_slice(), cached);
            return (out, changed);
        }
        let mut out = ProtectedMemory::from_vec(cached.to_vec());
        while let Some(first) = strikes.first() {
            let j = (first.execution / self.blocks() as u64) as usize;
            let mine = self.split_neuron(&mut strikes, j);
            self.neuron(x, j, mine, region, bound, &mut out, events, &mut ());
        }
        let changed = differs(out.as_slice(), cached);
        (out, changed)
    }
}

pub(crate) fn differs<S: Scalar>(a: &[S], b: &[S]) -> bool {
    a.iter().zip(b).any(|(x, y)| x.to_bit_pattern() != y.to_bit_pattern())
}

/// Index of the largest output; the first one wins ties.
pub(crate) fn argmax<S: Scalar>(values: &[S]) -> u8 {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best as u8
}
