//! Inference on image pairs.

use super::quant::{decode_bins, Decoded, GROUPS, NUM_BINS};
use super::{Head, Network, NnError, Result, Scalar, Tensor};
use crate::geometry::FourPointDelta;
use crate::imaging::{resize_bilinear, GrayImage};

/// Network inputs are intensities shifted to be centered on zero.
pub const INPUT_OFFSET: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Corner offsets in the pixel units of the original patches.
    pub delta: FourPointDelta,
    /// Per-dimension bin probabilities (classification head only).
    pub decoded: Option<Decoded>,
}

fn check_pair(a: &GrayImage, b: &GrayImage) -> Result<usize> {
    let s = a.width();
    if a.height() != s || b.width() != s || b.height() != s || s == 0 {
        return Err(NnError::ShapeMismatch(format!(
            "patches must be equal squares, got {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(s)
}

/// Stacks pairs channel-wise into an `(N, 2, side, side)` tensor, resizing
/// patches whose size differs from `side`.
pub fn pair_tensor<T: Scalar>(pairs: &[(&GrayImage, &GrayImage)], side: usize) -> Result<Tensor<T>> {
    let plane = side * side;
    let mut data = Vec::with_capacity(pairs.len() * 2 * plane);
    for (a, b) in pairs {
        let s = check_pair(a, b)?;
        for img in [a, b] {
            let resized;
            let src = if s == side {
                *img
            } else {
                resized = resize_bilinear(img, side, side);
                &resized
            };
            data.extend(src.pixels().iter().map(|&p| T::of((p - INPUT_OFFSET) as f64)));
        }
    }
    Tensor::new(vec![pairs.len(), 2, side, side], data)
}

/// Same layout as [`pair_tensor`] for 8-bit patches already at the network
/// input size.
pub fn pair_tensor_u8<T: Scalar>(pairs: &[(&[u8], &[u8])], side: usize) -> Result<Tensor<T>> {
    let plane = side * side;
    let mut data = Vec::with_capacity(pairs.len() * 2 * plane);
    for (a, b) in pairs {
        if a.len() != plane || b.len() != plane {
            return Err(NnError::ShapeMismatch(format!(
                "8-bit patches must have {plane} pixels"
            )));
        }
        for img in [a, b] {
            data.extend(img.iter().map(|&p| T::of((p as f32 / 255.0 - INPUT_OFFSET) as f64)));
        }
    }
    Tensor::new(vec![pairs.len(), 2, side, side], data)
}

impl<T: Scalar> Network<T> {
    /// Estimates the corner offsets mapping `a` to `b`.
    pub fn predict(&self, a: &GrayImage, b: &GrayImage) -> Result<Prediction> {
        Ok(self.predict_batch(&[(a, b)])?.pop().expect("one prediction"))
    }

    /// Batched [`Network::predict`]; every pair must share one size.
    pub fn predict_batch(&self, pairs: &[(&GrayImage, &GrayImage)]) -> Result<Vec<Prediction>> {
        let side = self
            .spec()
            .input_side()
            .ok_or_else(|| NnError::InvalidSpec("network input is not a square image".into()))?;
        let Some(first) = pairs.first() else {
            return Ok(Vec::new());
        };
        let original = first.0.width();
        if pairs.iter().any(|(a, _)| a.width() != original) {
            return Err(NnError::ShapeMismatch("pairs in a batch must share one size".into()));
        }
        let scale = original as f64 / side as f64;
        let x = pair_tensor::<T>(pairs, side)?;
        let head = self
            .spec()
            .head
            .ok_or_else(|| NnError::InvalidSpec("network has no homography head".into()))?;
        match head {
            Head::Regression => {
                let out = self.infer(&x)?;
                Ok(out
                    .data()
                    .chunks(GROUPS)
                    .map(|row| {
                        let mut d = [0.0; GROUPS];
                        for (o, v) in d.iter_mut().zip(row) {
                            *o = v.f64() * scale;
                        }
                        Prediction {
                            delta: FourPointDelta::new(d),
                            decoded: None,
                        }
                    })
                    .collect())
            }
            Head::Classification { rho } => {
                let logits = self.infer_to(&x, self.spec().logits_end())?;
                logits
                    .data()
                    .chunks(GROUPS * NUM_BINS)
                    .map(|row| {
                        let z: Vec<f64> = row.iter().map(|v| v.f64()).collect();
                        let dec = decode_bins(&z, rho)?;
                        Ok(Prediction {
                            delta: dec.delta.scaled(scale),
                            decoded: Some(dec),
                        })
                    })
                    .collect()
            }
        }
    }
}
