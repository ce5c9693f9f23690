//! MNIST ingestion: IDX containers, labelled datasets and deterministic
//! stratified subsets.
//!
//! IDX layout: a 4-byte big-endian magic (2051 for images, 2049 for labels),
//! one 4-byte big-endian size per dimension, then the row-major `u8`
//! payload. Intensities are scaled to [0, 1] on ingest.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const CLASSES: usize = 10;

/// Decoded IDX image file.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages<S> {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` intensities in [0, 1], row-major per image.
    pub intensities: Vec<S>,
}

impl<S: Scalar> IdxImages<S> {
    pub fn image(&self, index: usize) -> &[S] {
        let len = self.rows * self.cols;
        &self.intensities[index * len..(index + 1) * len]
    }

    /// Re-encode as an IDX image file.
    pub fn to_idx_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.intensities.len());
        for word in [IMAGE_MAGIC, self.count as u32, self.rows as u32, self.cols as u32] {
            out.extend_from_slice(&word.to_be_bytes());
        }
        let scale = S::of(255.0);
        out.extend(self.intensities.iter().map(|v| (*v * scale).round().to_u8().unwrap_or(u8::MAX)));
        out
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let word = bytes
        .get(offset..offset + 4)
        .ok_or(Error::TruncatedPayload { declared: offset + 4, available: bytes.len() })?;
    Ok(u32::from_be_bytes(word.try_into().expect("slice of four")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, dims: &[usize]) -> Result<&'a [u8]> {
    let declared = dims
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .and_then(|n| n.checked_add(header))
        .unwrap_or(usize::MAX);
    if declared != bytes.len() {
        return Err(Error::TruncatedPayload { declared, available: bytes.len() });
    }
    Ok(&bytes[header..])
}

pub fn parse_idx_images<S: Scalar>(bytes: &[u8]) -> Result<IdxImages<S>> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let raw = payload(bytes, 16, &[count, rows, cols])?;
    let scale = S::of(255.0);
    let intensities = raw.iter().map(|b| S::of(f64::from(*b)) / scale).collect();
    Ok(IdxImages { count, rows, cols, intensities })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let raw = payload(bytes, 8, &[count])?;
    if let Some((index, label)) = raw.iter().enumerate().find(|(_, l)| usize::from(**l) >= CLASSES) {
        return Err(Error::LabelOutOfRange { index, label: *label });
    }
    Ok(raw.to_vec())
}

pub fn labels_to_idx_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<S> {
    pub pixels: Vec<S>,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    samples: Vec<Sample<S>>,
    origin: Origin,
}

/// Where a dataset came from: FNV-1a digest of the source bytes plus the
/// subset parameters applied on top.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub digest: String,
    pub subset: Option<(usize, u64)>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(samples: Vec<Sample<S>>, origin: Origin) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { samples, origin })
    }

    pub fn from_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Self> {
        let images = parse_idx_images::<S>(image_bytes)?;
        let labels = parse_idx_labels(label_bytes)?;
        if images.rows * images.cols != IMAGE_PIXELS {
            return Err(Error::ShapeMismatch(format!(
                "images are {}x{}, expected {IMAGE_SIDE}x{IMAGE_SIDE}",
                images.rows, images.cols
            )));
        }
        if images.count != labels.len() {
            return Err(Error::ShapeMismatch(format!("{} images but {} labels", images.count, labels.len())));
        }
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, label)| Sample { pixels: images.image(i).to_vec(), label: *label })
            .collect();
        let mut digest = Fnv::default();
        digest.write(image_bytes);
        digest.write(label_bytes);
        Self::new(samples, Origin { digest: format!("{:016x}", digest.0), subset: None })
    }

    pub fn load(images: &Path, labels: &Path) -> Result<Self> {
        let image_bytes = std::fs::read(images).map_err(|e| Error::io(images, e))?;
        let label_bytes = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
        Self::from_idx(&image_bytes, &label_bytes)
    }

    pub fn samples(&self) -> &[Sample<S>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn origin(&self) -> &Origin {
        &self.origin
    }

    pub fn class_counts(&self) -> [usize; CLASSES] {
        let mut counts = [0; CLASSES];
        for s in &self.samples {
            counts[usize::from(s.label)] += 1;
        }
        counts
    }

    /// Deterministic stratified subset of `n` samples.
    ///
    /// Class quotas follow largest-remainder apportionment of `n` over the
    /// class counts, so each class is within one sample of its exact share.
    /// Members are drawn per class from a seeded shuffle and returned in
    /// their original relative order.
    pub fn subset(&self, n: usize, seed: u64) -> Result<Self> {
        let total = self.samples.len();
        if n > total {
            return Err(Error::SubsetTooLarge { requested: n, available: total });
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let counts = self.class_counts();
        let mut quotas = [0usize; CLASSES];
        let mut remainders = Vec::with_capacity(CLASSES);
        for c in 0..CLASSES {
            let exact = n * counts[c];
            quotas[c] = exact / total;
            remainders.push((exact % total, c));
        }
        let assigned: usize = quotas.iter().sum();
        remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, c) in remainders.iter().take(n - assigned) {
            quotas[*c] += 1;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = Vec::with_capacity(n);
        for (c, quota) in quotas.iter().enumerate() {
            let mut members: Vec<usize> =
                (0..total).filter(|i| usize::from(self.samples[*i].label) == c).collect();
            members.shuffle(&mut rng);
            chosen.extend_from_slice(&members[..*quota]);
        }
        chosen.sort_unstable();
        let samples = chosen.into_iter().map(|i| self.samples[i].clone()).collect();
        Self::new(samples, Origin { digest: self.origin.digest.clone(), subset: Some((n, seed)) })
    }
}

#[derive(Clone, Copy)]
struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}
