//! Synthetic workloads with scripted losses, and a hand-written greedy
//! oracle to check the selector against.

use std::collections::BTreeSet;

use crosslayer::analysis::ConfigurationEvaluator;
use crosslayer::model::{validate_region_set, AccuracyReport, Configuration, FaultSpec, RegionClass, RegionDescriptor, RegionTable};
use rand::{Rng, SeedableRng};

const FAULT_FREE: f64 = 0.9;

/// Region `r`'s loss, alone, is `base[r] * (1 + boost * (|config| - 1))`;
/// the configuration loses the sum over its regions.
pub struct Scripted {
    pub table: RegionTable,
    pub ids: Vec<String>,
    pub base: Vec<f64>,
    pub fractions: Vec<f64>,
    pub boost: f64,
}

impl Scripted {
    pub fn new(base: &[f64], fractions: &[f64], boost: f64) -> Self {
        let ids: Vec<String> = (0..base.len()).map(|i| ((b'A' + i as u8) as char).to_string()).collect();
        let mut regions: Vec<_> = ids
            .iter()
            .zip(fractions)
            .map(|(id, f)| RegionDescriptor::new(id.clone(), "synthetic", RegionClass::NonCrucialCandidate, *f))
            .collect();
        let rest = 1.0 - fractions.iter().sum::<f64>();
        regions.push(RegionDescriptor::new("z_crucial", "synthetic", RegionClass::Crucial, rest));
        Self { table: validate_region_set(regions).unwrap(), ids, base: base.to_vec(), fractions: fractions.to_vec(), boost }
    }

    pub fn random(rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let n = rng.gen_range(1..=4);
        // Coarse grids make ties common.
        let base: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 * 0.02).collect();
        let fractions: Vec<f64> = (0..n).map(|_| rng.gen_range(1..5) as f64 * 0.05).collect();
        let boost = rng.gen_range(0..3) as f64 * 0.25;
        Self::new(&base, &fractions, boost)
    }

    pub fn region_loss(&self, i: usize, size: usize) -> f64 {
        self.base[i] * (1.0 + self.boost * (size as f64 - 1.0))
    }

    /// Loss as the selector sees it: fault-free minus mean accuracy.
    pub fn loss(&self, members: &BTreeSet<String>) -> f64 {
        FAULT_FREE - (FAULT_FREE - self.raw_loss(members))
    }

    fn raw_loss(&self, members: &BTreeSet<String>) -> f64 {
        self.ids.iter().enumerate().filter(|(_, id)| members.contains(*id)).map(|(i, _)| self.region_loss(i, members.len())).sum()
    }
}

impl ConfigurationEvaluator for Scripted {
    fn regions(&self) -> &RegionTable {
        &self.table
    }

    fn evaluate(&self, config: &Configuration, _: &FaultSpec, trials: usize) -> crosslayer::Result<AccuracyReport> {
        let mut r = AccuracyReport::new(config.clone(), trials, FAULT_FREE - self.raw_loss(&config.non_crucial), FAULT_FREE, 0.0);
        for (i, id) in self.ids.iter().enumerate() {
            if config.contains(id) {
                r.per_region_loss.insert(id.clone(), self.region_loss(i, config.len()));
                r.per_region_stderr.insert(id.clone(), 0.0);
            }
        }
        Ok(r)
    }
}

/// Greedy selection traced by hand: while the loss is over the threshold,
/// drop the region with the highest loss; among equals the one with the
/// smallest time fraction; among those the first by name.
pub fn oracle(s: &Scripted, threshold: f64) -> (Vec<String>, BTreeSet<String>) {
    let mut kept: BTreeSet<String> = s.ids.iter().cloned().collect();
    let mut order = Vec::new();
    while !kept.is_empty() && s.loss(&kept) > threshold {
        let mut best: Option<usize> = None;
        for i in 0..s.ids.len() {
            if !kept.contains(&s.ids[i]) {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    let (li, lb) = (s.region_loss(i, kept.len()), s.region_loss(b, kept.len()));
                    if li > lb || (li == lb && s.fractions[i] < s.fractions[b]) || (li == lb && s.fractions[i] == s.fractions[b] && s.ids[i] < s.ids[b]) {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        let b = best.unwrap();
        kept.remove(&s.ids[b]);
        order.push(s.ids[b].clone());
    }
    (order, kept)
}

pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
