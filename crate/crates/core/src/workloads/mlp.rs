//! Multi-layer perceptron: the input layer feeds the pixels to the network,
//! two intermediate sigmoid layers (`i1`, `i2`) and a sigmoid output layer.
//!
//! The input layer is always crucial: a corrupted input reaches every
//! neuron downstream. Only the intermediate layers are candidates. Layers
//! complete strictly in sequence, which stands in for the barriers between
//! them.

use crate::error::{Error, Result};
use crate::fault::StrikeSchedule;
use crate::mnist::{Sample, IMAGE_PIXELS};
use crate::model::{BoundSpec, Configuration};
use crate::resilience::{protected_store, ProtectedMemory, StoreAudit};
use crate::scalar::Scalar;

use super::dense::{argmax, Dense, LayerRegion};
use super::profile::{self, Meter};
use super::weights::Tensor;
use super::{ExecutionTrace, CONTROL};

pub const INPUT: &str = "input";
pub const I1: &str = "i1";
pub const I2: &str = "i2";
pub const OUT: &str = "out";
pub const REGIONS: [&str; 5] = [INPUT, I1, I2, OUT, CONTROL];

pub const UNROLL: usize = 8;

const LAYERS: [LayerRegion; 3] = [
    LayerRegion { id: I1, target: "i1_acc" },
    LayerRegion { id: I2, target: "i2_acc" },
    LayerRegion { id: OUT, target: "out_acc" },
];

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<S> {
    layers: [Dense<S>; 3],
    activation_bound: BoundSpec<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cached<S> {
    activations: [Vec<S>; 2],
    label: u8,
}

impl<S: Scalar> Mlp<S> {
    /// Tensors in file order: `i1` weights `[h1, 784]` and bias, `i2` weights
    /// `[h2, h1]` and bias, output weights `[10, h2]` and bias.
    pub fn from_tensors(tensors: &[Tensor]) -> Result<Self> {
        let [w1, b1, w2, b2, w3, b3] = tensors else {
            return Err(Error::ShapeMismatch(format!("MLP expects 6 tensors, found {}", tensors.len())));
        };
        let h1 = *w1.shape.first().unwrap_or(&0);
        let h2 = *w2.shape.first().unwrap_or(&0);
        w1.expect_shape("i1 weights", &[h1, IMAGE_PIXELS])?;
        b1.expect_shape("i1 bias", &[h1])?;
        w2.expect_shape("i2 weights", &[h2, h1])?;
        b2.expect_shape("i2 bias", &[h2])?;
        w3.expect_shape("out weights", &[10, h2])?;
        b3.expect_shape("out bias", &[10])?;
        Self::new([
            Dense::new(IMAGE_PIXELS, h1, w1.cast(), b1.cast(), UNROLL)?,
            Dense::new(h1, h2, w2.cast(), b2.cast(), UNROLL)?,
            Dense::new(h2, 10, w3.cast(), b3.cast(), UNROLL)?,
        ])
    }

    pub fn new(layers: [Dense<S>; 3]) -> Result<Self> {
        if layers[0].inputs() != IMAGE_PIXELS
            || layers[1].inputs() != layers[0].outputs()
            || layers[2].inputs() != layers[1].outputs()
            || layers[2].outputs() != 10
        {
            return Err(Error::ShapeMismatch("MLP layers do not chain 784 -> h1 -> h2 -> 10".into()));
        }
        Ok(Self { layers, activation_bound: BoundSpec::clamp(S::of(-90.0), S::of(10.0))? })
    }

    pub fn layer(&self, index: usize) -> &Dense<S> {
        &self.layers[index]
    }

    pub fn activation_bound(&self) -> &BoundSpec<S> {
        &self.activation_bound
    }

    pub fn executions(&self, region: &str) -> u64 {
        LAYERS.iter().position(|l| l.id == region).map_or(1, |i| self.layers[i].executions())
    }

    pub fn targets_per_execution(&self, region: &str) -> u32 {
        LAYERS.iter().position(|l| l.id == region).map_or(1, |i| self.layers[i].unroll() as u32)
    }

    fn feed<M: Meter>(&self, sample: &Sample<S>, meter: &mut M) -> ProtectedMemory<S> {
        let mut input = ProtectedMemory::new(IMAGE_PIXELS);
        for (i, v) in sample.pixels.iter().enumerate() {
            protected_store(&mut input, i, *v);
        }
        meter.enter(INPUT);
        meter.ops(INPUT, IMAGE_PIXELS as u64 * profile::FEED);
        meter.stores(INPUT, IMAGE_PIXELS as u64);
        meter.ops(CONTROL, profile::BARRIER);
        input
    }

    pub fn run<M: Meter>(
        &self,
        sample: &Sample<S>,
        config: &Configuration,
        schedule: &StrikeSchedule<S>,
        meter: &mut M,
    ) -> Result<ExecutionTrace<S>> {
        if config.contains(INPUT) {
            return Err(Error::AttemptToDemoteInputLayer(INPUT.into()));
        }
        let mut events = Vec::new();
        let mut audit = StoreAudit::default();
        let input = self.feed(sample, meter);
        audit.merge(&input.audit);
        let mut x = input.into_inner();
        for (layer, region) in self.layers.iter().zip(LAYERS) {
            let strikes = if config.contains(region.id) { schedule.for_region(region.id) } else { &[] };
            let out = layer.forward(&x, strikes, region, &self.activation_bound, &mut events, meter);
            audit.merge(&out.audit);
            x = out.into_inner();
        }
        meter.ops(OUT, 10 * profile::COMPARE);
        Ok(ExecutionTrace { predicted_label: argmax(&x), events, audit })
    }

    pub fn prepare(&self, sample: &Sample<S>) -> Cached<S> {
        let mut scratch = Vec::new();
        let bound = &self.activation_bound;
        let h1 = self.layers[0].forward(&sample.pixels, &[], LAYERS[0], bound, &mut scratch, &mut ()).into_inner();
        let h2 = self.layers[1].forward(&h1, &[], LAYERS[1], bound, &mut scratch, &mut ()).into_inner();
        let out = self.layers[2].forward(&h2, &[], LAYERS[2], bound, &mut scratch, &mut ());
        Cached { activations: [h1, h2], label: argmax(out.as_slice()) }
    }

    pub fn run_cached(
        &self,
        sample: &Sample<S>,
        cached: &Cached<S>,
        config: &Configuration,
        schedule: &StrikeSchedule<S>,
    ) -> Result<ExecutionTrace<S>> {
        if config.contains(INPUT) {
            return Err(Error::AttemptToDemoteInputLayer(INPUT.into()));
        }
        let strikes = |r: &str| if config.contains(r) { schedule.for_region(r) } else { &[] };
        let mut events = Vec::new();
        let mut audit = StoreAudit::default();
        let bound = &self.activation_bound;

        let (h1, c1) =
            self.layers[0].forward_cached(&sample.pixels, false, &cached.activations[0], strikes(I1), LAYERS[0], bound, &mut events);
        audit.merge(&h1.audit);
        let (h2, c2) =
            self.layers[1].forward_cached(h1.as_slice(), c1, &cached.activations[1], strikes(I2), LAYERS[1], bound, &mut events);
        audit.merge(&h2.audit);
        if !c2 && strikes(OUT).is_empty() {
            return Ok(ExecutionTrace { predicted_label: cached.label, events, audit });
        }
        let out = self.layers[2].forward(h2.as_slice(), strikes(OUT), LAYERS[2], bound, &mut events, &mut ());
        audit.merge(&out.audit);
        Ok(ExecutionTrace { predicted_label: argmax(out.as_slice()), events, audit })
    }

    pub fn cached_label(cached: &Cached<S>) -> u8 {
        cached.label
    }
}
