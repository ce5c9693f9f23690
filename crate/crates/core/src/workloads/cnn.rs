//! Small MNIST CNN: one convolution layer (valid 5x5 kernels), 2x2 max-pool
//! with ReLU, a hidden fully connected layer and the output layer.
//!
//! Regions: `input` (pixel feed), `conv` (kernel accumulations), `pool`,
//! `fc` (hidden layer accumulations), `out` (output layer) and `control`
//! (loop counters, bound checkers, sigmoids, barriers). `conv` and `fc` are
//! the non-crucial candidates.
//!
//! Each convolution cell is one neuron of `size` region executions, one per
//! kernel row; its value passes a drop-mode checker with static bounds
//! `bias +- L1(kernel) * max_input`. Dropped cells are left out of their
//! pooling window, so the next largest cell is used.

use crate::error::{Error, Result};
use crate::fault::{Strike, StrikeSchedule};
use crate::mnist::{Sample, IMAGE_PIXELS, IMAGE_SIDE};
use crate::model::{BoundMode, BoundSpec, Configuration};
use crate::resilience::{bound_check, protected_store, CheckAction, ProtectedMemory, StoreAudit, TargetKind};
use crate::scalar::Scalar;

use super::dense::{argmax, differs, Dense, LayerRegion};
use super::profile::{self, Meter};
use super::weights::Tensor;
use super::{ExecutionTrace, InjectionEvent, CONTROL};

pub const INPUT: &str = "input";
pub const CONV: &str = "conv";
pub const POOL: &str = "pool";
pub const FC: &str = "fc";
pub const OUT: &str = "out";
pub const REGIONS: [&str; 6] = [INPUT, CONV, POOL, FC, OUT, CONTROL];

pub const FC_UNROLL: usize = 8;
pub const OUT_UNROLL: usize = 8;
/// Largest input intensity, used for the static convolution bounds.
pub const MAX_INPUT: f64 = 1.0;

const FC_REGION: LayerRegion = LayerRegion { id: FC, target: "fc_acc" };
const OUT_REGION: LayerRegion = LayerRegion { id: OUT, target: "out_acc" };
const CONV_TARGET: &str = "conv_acc";

#[derive(Clone, Debug, PartialEq)]
pub struct Cnn<S> {
    kernels: usize,
    size: usize,
    /// `kernels x size x size`.
    kernel_weights: Vec<S>,
    kernel_bias: Vec<S>,
    conv_bounds: Vec<BoundSpec<S>>,
    fc: Dense<S>,
    out: Dense<S>,
    activation_bound: BoundSpec<S>,
}

/// Fault-free intermediate values of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Cached<S> {
    conv: Vec<S>,
    pooled: Vec<S>,
    hidden: Vec<S>,
    label: u8,
}

impl<S: Scalar> Cnn<S> {
    /// Tensors in file order: kernels `[k, s, s]`, kernel bias `[k]`, hidden
    /// weights `[h, k * p * p]`, hidden bias `[h]`, output weights `[10, h]`,
    /// output bias `[10]`.
    pub fn from_tensors(tensors: &[Tensor]) -> Result<Self> {
        let [kw, kb, fw, fb, ow, ob] = tensors else {
            return Err(Error::ShapeMismatch(format!("CNN expects 6 tensors, found {}", tensors.len())));
        };
        let (kernels, size) = match kw.shape.as_slice() {
            [k, s, s2] if s == s2 && *s < IMAGE_SIDE => (*k, *s),
            other => return Err(Error::ShapeMismatch(format!("conv kernels: {other:?}"))),
        };
        kb.expect_shape("conv bias", &[kernels])?;
        let side = (IMAGE_SIDE - size + 1) / 2;
        let hidden = *fw.shape.first().unwrap_or(&0);
        fw.expect_shape("fc weights", &[hidden, kernels * side * side])?;
        fb.expect_shape("fc bias", &[hidden])?;
        ow.expect_shape("out weights", &[10, hidden])?;
        ob.expect_shape("out bias", &[10])?;
        Self::new(
            kernels,
            size,
            kw.cast(),
            kb.cast(),
            Dense::new(kernels * side * side, hidden, fw.cast(), fb.cast(), FC_UNROLL)?,
            Dense::new(hidden, 10, ow.cast(), ob.cast(), OUT_UNROLL)?,
        )
    }

    pub fn new(
        kernels: usize,
        size: usize,
        kernel_weights: Vec<S>,
        kernel_bias: Vec<S>,
        fc: Dense<S>,
        out: Dense<S>,
    ) -> Result<Self> {
        if (IMAGE_SIDE - size + 1) % 2 != 0 {
            return Err(Error::ShapeMismatch(format!("{size}x{size} kernels leave an odd feature map")));
        }
        if kernel_weights.len() != kernels * size * size || kernel_bias.len() != kernels {
            return Err(Error::ShapeMismatch("conv kernel tensor sizes".into()));
        }
        let side = (IMAGE_SIDE - size + 1) / 2;
        if fc.inputs() != kernels * side * side || out.inputs() != fc.outputs() || out.outputs() != 10 {
            return Err(Error::ShapeMismatch("fully connected layers do not chain".into()));
        }
        let conv_bounds = (0..kernels)
            .map(|k| {
                let l1 = kernel_weights[k * size * size..(k + 1) * size * size]
                    .iter()
                    .fold(S::zero(), |acc, w| acc + w.abs());
                let reach = l1 * S::of(MAX_INPUT);
                // Widen by a few ulps so fault-free sums rounded differently never trip the checker.
                let slack = (reach + kernel_bias[k].abs()) * S::epsilon() * S::of(64.0);
                BoundSpec::new(kernel_bias[k] - reach - slack, kernel_bias[k] + reach + slack, BoundMode::Drop)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            kernels,
            size,
            kernel_weights,
            kernel_bias,
            conv_bounds,
            fc,
            out,
            activation_bound: BoundSpec::clamp(S::of(-90.0), S::of(10.0))?,
        })
    }

    pub fn kernels(&self) -> usize {
        self.kernels
    }

    pub fn kernel_size(&self) -> usize {
        self.size
    }

    pub fn hidden(&self) -> usize {
        self.fc.outputs()
    }

    pub fn fc_layer(&self) -> &Dense<S> {
        &self.fc
    }

    pub fn out_layer(&self) -> &Dense<S> {
        &self.out
    }

    pub fn kernel(&self, k: usize) -> &[S] {
        let n = self.size * self.size;
        &self.kernel_weights[k * n..(k + 1) * n]
    }

    pub fn kernel_bias(&self, k: usize) -> S {
        self.kernel_bias[k]
    }

    pub fn conv_bound(&self, k: usize) -> &BoundSpec<S> {
        &self.conv_bounds[k]
    }

    /// Widest convolution bound over all kernels.
    pub fn conv_bound_envelope(&self) -> BoundSpec<S> {
        let lower = self.conv_bounds.iter().map(|b| b.lower).fold(S::infinity(), S::min);
        let upper = self.conv_bounds.iter().map(|b| b.upper).fold(S::neg_infinity(), S::max);
        BoundSpec { lower, upper, mode: BoundMode::Drop }
    }

    pub fn activation_bound(&self) -> &BoundSpec<S> {
        &self.activation_bound
    }

    pub fn conv_side(&self) -> usize {
        IMAGE_SIDE - self.size + 1
    }

    pub fn pooled_side(&self) -> usize {
        self.conv_side() / 2
    }

    pub fn conv_cells(&self) -> usize {
        self.kernels * self.conv_side() * self.conv_side()
    }

    pub fn executions(&self, region: &str) -> u64 {
        match region {
            CONV => (self.conv_cells() * self.size) as u64,
            FC => self.fc.executions(),
            OUT => self.out.executions(),
            POOL => 1,
            INPUT => 1,
            _ => 1,
        }
    }

    pub fn targets_per_execution(&self, region: &str) -> u32 {
        match region {
            CONV => self.size as u32,
            FC => self.fc.unroll() as u32,
            OUT => self.out.unroll() as u32,
            _ => 1,
        }
    }

    /// Accumulate convolution cell `n` (kernel-major, then row, column),
    /// applying this cell's strikes.
    #[inline]
    fn conv_acc(&self, image: &[S], n: usize, strikes: &[Strike<S>], events: &mut Vec<InjectionEvent<S>>) -> S {
        let side = self.conv_side();
        let (k, pos) = (n / (side * side), n % (side * side));
        let (oy, ox) = (pos / side, pos % side);
        let kernel = self.kernel(k);
        let mut acc = self.kernel_bias[k];
        let mut pending = strikes.iter().peekable();
        for r in 0..self.size {
            let execution = (n * self.size + r) as u64;
            let hit = pending.next_if(|s| s.execution == execution);
            let row = &image[(oy + r) * IMAGE_SIDE + ox..][..self.size];
            let weights = &kernel[r * self.size..][..self.size];
            for (c, (x, w)) in row.iter().zip(weights).enumerate() {
                acc += *x * *w;
                if let Some(s) = hit.filter(|s| s.target as usize == c) {
                    events.push(InjectionEvent {
                        region: CONV,
                        iteration: execution,
                        target: CONV_TARGET,
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

    /// Convolution cell through its drop checker; `None` when dropped.
    fn conv_cell(&self, image: &[S], n: usize, strikes: &[Strike<S>], events: &mut Vec<InjectionEvent<S>>) -> Option<S> {
        let logged = events.len();
        let k = n / (self.conv_side() * self.conv_side());
        let checked = bound_check(self.conv_acc(image, n, strikes, events), &self.conv_bounds[k]);
        for e in &mut events[logged..] {
            e.action = checked.action;
            e.committed = checked.is_committed();
        }
        checked.committed
    }

    /// Max over the committed cells of pooled cell `p`, then ReLU. A window
    /// with every cell dropped yields zero.
    fn pool_cell(&self, p: usize, cell: impl Fn(usize) -> Option<S>) -> S {
        let (side, pside) = (self.conv_side(), self.pooled_side());
        let (k, pos) = (p / (pside * pside), p % (pside * pside));
        let (py, px) = (pos / pside, pos % pside);
        let base = k * side * side + 2 * py * side + 2 * px;
        let mut best: Option<S> = None;
        for n in [base, base + 1, base + side, base + side + 1] {
            if let Some(v) = cell(n) {
                if best.map_or(true, |b| v > b) {
                    best = Some(v);
                }
            }
        }
        best.unwrap_or_else(S::zero).max(S::zero())
    }

    fn feed<M: Meter>(&self, sample: &Sample<S>, meter: &mut M) -> ProtectedMemory<S> {
        let mut input = ProtectedMemory::new(IMAGE_PIXELS);
        for (i, v) in sample.pixels.iter().enumerate() {
            protected_store(&mut input, i, *v);
        }
        meter.enter(INPUT);
        meter.ops(INPUT, IMAGE_PIXELS as u64 * profile::FEED);
        meter.stores(INPUT, IMAGE_PIXELS as u64);
        input
    }

    fn pool_all<M: Meter>(&self, conv: &[Option<S>], meter: &mut M) -> ProtectedMemory<S> {
        let pooled_cells = self.kernels * self.pooled_side() * self.pooled_side();
        let mut pooled = ProtectedMemory::new(pooled_cells);
        for p in 0..pooled_cells {
            let v = self.pool_cell(p, |n| conv[n]);
            protected_store(&mut pooled, p, v);
        }
        meter.enter(POOL);
        meter.ops(POOL, pooled_cells as u64 * 4 * profile::COMPARE);
        meter.stores(POOL, pooled_cells as u64);
        meter.ops(CONTROL, profile::BARRIER);
        pooled
    }

    /// Complete inference. Strikes apply only to regions in `config`.
    pub fn run<M: Meter>(
        &self,
        sample: &Sample<S>,
        config: &Configuration,
        schedule: &StrikeSchedule<S>,
        meter: &mut M,
    ) -> ExecutionTrace<S> {
        let active = |region: &str| if config.contains(region) { schedule.for_region(region) } else { &[] };
        let mut events = Vec::new();
        let mut audit = StoreAudit::default();

        let input = self.feed(sample, meter);
        audit.merge(&input.audit);
        let image = input.as_slice();

        let mut conv = ProtectedMemory::new(self.conv_cells());
        let mut committed = vec![None; self.conv_cells()];
        let mut strikes = active(CONV);
        for n in 0..self.conv_cells() {
            let end = ((n + 1) * self.size) as u64;
            let split = strikes.iter().take_while(|s| s.execution < end).count();
            let (mine, rest) = strikes.split_at(split);
            strikes = rest;
            committed[n] = self.conv_cell(image, n, mine, &mut events);
            if let Some(v) = committed[n] {
                protected_store(&mut conv, n, v);
            }
            for _ in 0..self.size {
                meter.enter(CONV);
            }
            meter.ops(CONV, (self.size * self.size) as u64 * profile::MAC);
            meter.stores(CONV, 1);
            meter.checks(CONV, 1);
            meter.ops(CONTROL, self.size as u64 * profile::LOOP_UPDATE + profile::CHECK);
        }
        meter.ops(CONTROL, profile::BARRIER);
        audit.merge(&conv.audit);

        let pooled = self.pool_all(&committed, meter);
        audit.merge(&pooled.audit);
        let hidden = self.fc.forward(pooled.as_slice(), active(FC), FC_REGION, &self.activation_bound, &mut events, meter);
        audit.merge(&hidden.audit);
        let out = self.out.forward(hidden.as_slice(), active(OUT), OUT_REGION, &self.activation_bound, &mut events, meter);
        audit.merge(&out.audit);

        let predicted_label = argmax(out.as_slice());
        meter.ops(OUT, 10 * profile::COMPARE);
        ExecutionTrace { predicted_label, events, audit }
    }

    pub fn prepare(&self, sample: &Sample<S>) -> Cached<S> {
        let image = &sample.pixels;
        let mut scratch = Vec::new();
        let conv: Vec<S> = (0..self.conv_cells())
            .map(|n| self.conv_cell(image, n, &[], &mut scratch).expect("static bounds admit every fault-free cell"))
            .collect();
        let pooled_cells = self.kernels * self.pooled_side() * self.pooled_side();
        let pooled: Vec<S> = (0..pooled_cells).map(|p| self.pool_cell(p, |n| Some(conv[n]))).collect();
        let hidden = self.fc.forward(&pooled, &[], FC_REGION, &self.activation_bound, &mut scratch, &mut ()).into_inner();
        let out = self.out.forward(&hidden, &[], OUT_REGION, &self.activation_bound, &mut scratch, &mut ());
        Cached { conv, pooled, hidden, label: argmax(out.as_slice()) }
    }

    /// Same trace as [`Cnn::run`], recomputing only what the strikes reach.
    pub fn run_cached(
        &self,
        sample: &Sample<S>,
        cached: &Cached<S>,
        config: &Configuration,
        schedule: &StrikeSchedule<S>,
    ) -> ExecutionTrace<S> {
        let active = |region: &str| if config.contains(region) { schedule.for_region(region) } else { &[] };
        let mut events = Vec::new();
        let mut audit = StoreAudit::default();

        // Struck convolution cells and the pooling windows they feed.
        let mut struck: Vec<(usize, Option<S>)> = Vec::new();
        let mut strikes = active(CONV);
        while let Some(first) = strikes.first() {
            let n = (first.execution / self.size as u64) as usize;
            let end = ((n + 1) * self.size) as u64;
            let split = strikes.iter().take_while(|s| s.execution < end).count();
            let (mine, rest) = strikes.split_at(split);
            strikes = rest;
            struck.push((n, self.conv_cell(&sample.pixels, n, mine, &mut events)));
            audit.stores += 1;
        }
        let mut pooled_changed = false;
        let mut pooled = std::borrow::Cow::Borrowed(cached.pooled.as_slice());
        if !struck.is_empty() {
            let (side, pside) = (self.conv_side(), self.pooled_side());
            let lookup = |n: usize| struck.iter().find(|(m, _)| *m == n).map_or(Some(cached.conv[n]), |(_, v)| *v);
            let mut windows: Vec<usize> = struck
                .iter()
                .map(|(n, _)| {
                    let (k, pos) = (n / (side * side), n % (side * side));
                    k * pside * pside + (pos / side / 2) * pside + (pos % side / 2)
                })
                .collect();
            windows.sort_unstable();
            windows.dedup();
            let pooled = pooled.to_mut();
            for p in windows {
                let v = self.pool_cell(p, lookup);
                pooled_changed |= v.to_bit_pattern() != pooled[p].to_bit_pattern();
                pooled[p] = v;
                audit.stores += 1;
            }
        }

        let fc_strikes = active(FC);
        let out_strikes = active(OUT);
        if !pooled_changed && fc_strikes.is_empty() && out_strikes.is_empty() {
            return ExecutionTrace { predicted_label: cached.label, events, audit };
        }
        let (hidden, hidden_changed) = self.fc.forward_cached(
            &pooled,
            pooled_changed,
            &cached.hidden,
            fc_strikes,
            FC_REGION,
            &self.activation_bound,
            &mut events,
        );
        audit.merge(&hidden.audit);
        if !hidden_changed && out_strikes.is_empty() {
            return ExecutionTrace { predicted_label: cached.label, events, audit };
        }
        let out = self.out.forward(hidden.as_slice(), out_strikes, OUT_REGION, &self.activation_bound, &mut events, &mut ());
        audit.merge(&out.audit);
        debug_assert!(hidden_changed || !out_strikes.is_empty() || !differs(hidden.as_slice(), &cached.hidden));
        ExecutionTrace { predicted_label: argmax(out.as_slice()), events, audit }
    }

    pub fn cached_label(cached: &Cached<S>) -> u8 {
        cached.label
    }
}
