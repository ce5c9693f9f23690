//! Pretrained weight fixtures.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! b"CLWT"  u32 version (=1)  u32 tensor_count
//! tensor_count x { u32 rank, rank x u32 dim }
//! f32 payload of every tensor, concatenated in header order
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"CLWT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn expect_shape(&self, name: &str, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::ShapeMismatch(format!("{name}: expected {shape:?}, found {:?}", self.shape)));
        }
        Ok(())
    }

    pub fn cast<S: Scalar>(&self) -> Vec<S> {
        self.data.iter().map(|v| S::of(f64::from(*v))).collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|end| *end <= self.bytes.len());
        let end = end.ok_or_else(|| Error::BadWeights(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

pub fn parse(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::BadWeights("missing CLWT magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::BadWeights(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        shapes.push(shape);
    }
    let mut tensors = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::BadWeights("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect();
        tensors.push(Tensor { shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::BadWeights(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(tensors)
}

pub fn encode(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
    }
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes)
}
