//! Quantized corner offsets for the classification head.

use super::{NnError, Result};
use crate::geometry::FourPointDelta;

/// Output dimensions: (u, v) for each of the four corners.
pub const GROUPS: usize = 8;
/// Bins per dimension, spread uniformly over `[-rho, rho]`.
pub const NUM_BINS: usize = 21;

pub fn bin_width(rho: f64) -> f64 {
    2.0 * rho / NUM_BINS as f64
}

pub fn bin_center(index: usize, rho: f64) -> f64 {
    -rho + (index as f64 + 0.5) * bin_width(rho)
}

/// Bin index of each delta component.
pub fn encode_label(d: &FourPointDelta, rho: f64) -> Result<[usize; GROUPS]> {
    let mut out = [0; GROUPS];
    for (o, &x) in out.iter_mut().zip(d.d.iter()) {
        if !x.is_finite() || x.abs() > rho {
            return Err(NnError::LabelOutOfRange { value: x, rho });
        }
        let i = ((x + rho) / bin_width(rho)).floor();
        *o = (i.max(0.0) as usize).min(NUM_BINS - 1);
    }
    Ok(out)
}

/// Decoded classification output.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub delta: FourPointDelta,
    /// Softmax probabilities, `GROUPS x NUM_BINS`.
    pub confidences: Vec<[f64; NUM_BINS]>,
}

impl Decoded {
    /// The 21x21 displacement confidence grid of corner `c`, indexed
    /// `[v_bin][u_bin]`, as the outer product of its u and v distributions.
    pub fn corner_grid(&self, c: usize) -> [[f64; NUM_BINS]; NUM_BINS] {
        let (pu, pv) = (&self.confidences[2 * c], &self.confidences[2 * c + 1]);
        let mut g = [[0.0; NUM_BINS]; NUM_BINS];
        for (row, &v) in g.iter_mut().zip(pv.iter()) {
            for (cell, &u) in row.iter_mut().zip(pu.iter()) {
                *cell = u * v;
            }
        }
        g
    }
}

fn softmax(x: &[f64]) -> [f64; NUM_BINS] {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; NUM_BINS];
    let mut sum = 0.0;
    for (o, &v) in p.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

/// Decodes one sample's 168 raw scores: per-dimension softmax, then the
/// center of the most confident bin (lowest index on ties).
pub fn decode_bins(logits: &[f64], rho: f64) -> Result<Decoded> {
    if logits.len() != GROUPS * NUM_BINS {
        return Err(NnError::ShapeMismatch(format!(
            "expected {} scores, got {}",
            GROUPS * NUM_BINS,
            logits.len()
        )));
    }
    let mut d = [0.0; GROUPS];
    let mut confidences = Vec::with_capacity(GROUPS);
    for (g, chunk) in logits.chunks(NUM_BINS).enumerate() {
        let p = softmax(chunk);
        let mut best = 0;
        for i in 1..NUM_BINS {
            if p[i] > p[best] {
                best = i;
            }
        }
        d[g] = bin_center(best, rho);
        confidences.push(p);
    }
    Ok(Decoded {
        delta: FourPointDelta::new(d),
        confidences,
    })
}
