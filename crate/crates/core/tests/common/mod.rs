//! Test oracles. The reference classifiers below are plain loops written
//! against the fixture file formats directly, sharing no code with the
//! library.

#![allow(dead_code)]

use std::path::Path;

pub fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn be32(b: &[u8], at: usize) -> usize {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]]) as usize
}

/// Images as rows of 784 intensities in [0, 1].
pub fn read_images(name: &str) -> Vec<Vec<f32>> {
    let b = std::fs::read(fixture(name)).unwrap();
    assert_eq!(be32(&b, 0), 2051);
    let n = be32(&b, 4);
    (0..n).map(|i| b[16 + i * 784..16 + (i + 1) * 784].iter().map(|p| *p as f32 / 255.0).collect()).collect()
}

pub fn read_labels(name: &str) -> Vec<u8> {
    let b = std::fs::read(fixture(name)).unwrap();
    assert_eq!(be32(&b, 0), 2049);
    b[8..].to_vec()
}

/// Tensors of a weight file, flattened, in file order.
pub fn read_tensors(name: &str) -> Vec<(Vec<usize>, Vec<f32>)> {
    let b = std::fs::read(fixture(name)).unwrap();
    let le = |at: usize| u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]]) as usize;
    assert_eq!(&b[..4], b"CLWT");
    let count = le(8);
    let mut at = 12;
    let mut shapes = Vec::new();
    for _ in 0..count {
        let rank = le(at);
        at += 4;
        shapes.push((0..rank).map(|d| le(at + 4 * d)).collect::<Vec<_>>());
        at += 4 * rank;
    }
    let mut out = Vec::new();
    for shape in shapes {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| f32::from_le_bytes(b[at + 4 * i..at + 4 * i + 4].try_into().unwrap())).collect();
        at += 4 * n;
        out.push((shape, data));
    }
    assert_eq!(at, b.len());
    out
}

fn activation(x: f32) -> f32 {
    let x = x.clamp(-90.0, 10.0);
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        x.exp() / (1.0 + x.exp())
    }
}

fn dense(x: &[f32], w: &[f32], b: &[f32]) -> Vec<f32> {
    (0..b.len())
        .map(|j| {
            let mut acc = b[j];
            for i in 0..x.len() {
                acc += x[i] * w[j * x.len() + i];
            }
            activation(acc)
        })
        .collect()
}

fn argmax(v: &[f32]) -> u8 {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best as u8
}

pub fn cnn_label(t: &[(Vec<usize>, Vec<f32>)], img: &[f32]) -> u8 {
    let (k, s) = (t[0].0[0], t[0].0[1]);
    let side = 28 - s + 1;
    let half = side / 2;
    let mut pooled = vec![0.0f32; k * half * half];
    for kk in 0..k {
        let mut conv = vec![0.0f32; side * side];
        for y in 0..side {
            for x in 0..side {
                let mut acc = t[1].1[kk];
                for r in 0..s {
                    for c in 0..s {
                        acc += img[(y + r) * 28 + x + c] * t[0].1[kk * s * s + r * s + c];
                    }
                }
                conv[y * side + x] = acc;
            }
        }
        for py in 0..half {
            for px in 0..half {
                let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(dy, dx)| conv[(2 * py + dy) * side + 2 * px + dx])
                    .fold(f32::NEG_INFINITY, f32::max);
                pooled[kk * half * half + py * half + px] = m.max(0.0);
            }
        }
    }
    let hidden = dense(&pooled, &t[2].1, &t[3].1);
    argmax(&dense(&hidden, &t[4].1, &t[5].1))
}

pub fn mlp_label(t: &[(Vec<usize>, Vec<f32>)], img: &[f32]) -> u8 {
    let h1 = dense(img, &t[0].1, &t[1].1);
    let h2 = dense(&h1, &t[2].1, &t[3].1);
    argmax(&dense(&h2, &t[4].1, &t[5].1))
}

/// Majority vote of the `k` nearest by squared distance (ties in distance
/// by index); vote ties go to the class of the nearest tied neighbour.
pub fn knn_label(train: &[Vec<f32>], labels: &[u8], k: usize, img: &[f32]) -> u8 {
    let mut d: Vec<(f32, usize)> = train
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let mut acc = 0.0f32;
            for i in 0..784 {
                let diff = img[i] - row[i];
                acc += diff * diff;
            }
            (acc, j)
        })
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes = [0; 10];
    for (_, j) in &d[..k] {
        votes[labels[*j] as usize] += 1;
    }
    let top = *votes.iter().max().unwrap();
    d[..k].iter().map(|(_, j)| labels[*j]).find(|l| votes[*l as usize] == top).unwrap()
}

pub mod scripted;
