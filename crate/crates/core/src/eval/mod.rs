//! Test-set construction and Mean Average Corner Error (MACE) evaluation.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::classical::{run_baseline, BaselineConfig};
use crate::datagen::{self, Corpus, DatagenError, GenConfig, TrainingTriplet};
use crate::geometry::FourPointDelta;
use crate::nn::{Network, NnError};
use crate::rng::{stream_rng, streams};

pub mod viz;

/// `E sqrt(X^2 + Y^2)` for `X, Y ~ U[-1, 1]`, equal to
/// `(sqrt(2) + ln(1 + sqrt(2))) / 3`. The identity estimator's expected
/// MACE on labels uniform in `[-rho, rho]` is this times `rho`.
pub const IDENTITY_MACE_FACTOR: f64 = 0.76520;

/// Samples evaluated together (network batch size, baseline parallelism).
const CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Euclidean error of each corner.
pub fn corner_errors(pred: &FourPointDelta, gt: &FourPointDelta) -> [f64; 4] {
    std::array::from_fn(|i| {
        let (pu, pv) = pred.corner(i);
        let (gu, gv) = gt.corner(i);
        (pu - gu).hypot(pv - gv)
    })
}

/// Average corner error of one sample.
pub fn mace_sample(pred: &FourPointDelta, gt: &FourPointDelta) -> f64 {
    corner_errors(pred, gt).iter().sum::<f64>() / 4.0
}

/// Mean of per-sample errors, summed in order.
pub fn mace_aggregate(per_sample: &[f64]) -> f64 {
    if per_sample.is_empty() {
        return 0.0;
    }
    per_sample.iter().sum::<f64>() / per_sample.len() as f64
}

/// How corner offsets are estimated.
pub enum Method {
    /// Always the zero delta.
    Identity,
    /// ORB-style features + RANSAC; sample `i` uses RANSAC stream `(seed, i)`.
    Baseline { config: BaselineConfig, seed: u64 },
    /// A trained network; inputs are resized to its input side and the
    /// output rescaled.
    Network(Box<Network<f32>>),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Identity => "identity",
            Method::Baseline { .. } => "baseline",
            Method::Network(_) => "network",
        }
    }

    /// Estimates for consecutive samples starting at dataset index `first`.
    pub fn estimate(&self, samples: &[TrainingTriplet], first: usize) -> Result<Vec<FourPointDelta>> {
        match self {
            Method::Identity => Ok(vec![FourPointDelta::ZERO; samples.len()]),
            Method::Baseline { config, seed } => Ok(samples
                .par_iter()
                .enumerate()
                .map(|(k, t)| {
                    let mut rng = stream_rng(*seed, streams::RANSAC, (first + k) as u64);
                    run_baseline(&t.patch_a, &t.patch_b, config, &mut rng).delta
                })
                .collect()),
            Method::Network(net) => {
                let pairs: Vec<_> = samples.iter().map(|t| (&t.patch_a, &t.patch_b)).collect();
                Ok(net.predict_batch(&pairs)?.into_iter().map(|p| p.delta).collect())
            }
        }
    }
}

/// Per-sample corner errors of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub method: String,
    pub corner_errors: Vec<[f64; 4]>,
    pub mace: f64,
}

impl EvalRecord {
    pub fn per_sample(&self) -> Vec<f64> {
        self.corner_errors.iter().map(|e| e.iter().sum::<f64>() / 4.0).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,e1,e2,e3,e4,mean\n");
        for (i, e) in self.corner_errors.iter().enumerate() {
            let m = e.iter().sum::<f64>() / 4.0;
            writeln!(s, "{i},{},{},{},{},{m}", e[0], e[1], e[2], e[3]).expect("string write");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Evaluates `method` over a stream of samples, holding at most one chunk
/// of patches in memory.
pub fn evaluate<I>(method: &Method, samples: I) -> Result<EvalRecord>
where
    I: IntoIterator<Item = datagen::Result<TrainingTriplet>>,
{
    let mut errors = Vec::new();
    let mut chunk = Vec::with_capacity(CHUNK);
    let flush = |chunk: &mut Vec<TrainingTriplet>, errors: &mut Vec<[f64; 4]>| -> Result<()> {
        let preds = method.estimate(chunk, errors.len())?;
        errors.extend(chunk.iter().zip(&preds).map(|(t, p)| corner_errors(p, &t.label)));
        chunk.clear();
        Ok(())
    };
    for s in samples {
        chunk.push(s?);
        if chunk.len() == CHUNK {
            flush(&mut chunk, &mut errors)?;
        }
    }
    if !chunk.is_empty() {
        flush(&mut chunk, &mut errors)?;
    }
    let per: Vec<f64> = errors.iter().map(|e| e.iter().sum::<f64>() / 4.0).collect();
    Ok(EvalRecord {
        method: method.name().to_string(),
        mace: mace_aggregate(&per),
        corner_errors: errors,
    })
}

/// Evaluates an in-memory set.
pub fn evaluate_triplets(method: &Method, samples: &[TrainingTriplet]) -> Result<EvalRecord> {
    evaluate(method, samples.iter().cloned().map(Ok))
}

/// Evaluates a dataset directory written by the generator.
pub fn evaluate_dir(method: &Method, dir: &Path) -> Result<EvalRecord> {
    evaluate(method, datagen::load_dataset(dir)?)
}

/// Test samples `0..n`: 256 px patches with rho 64 from images at 640x480.
pub fn build_test_set(corpus: &Corpus, n: usize, seed: u64) -> Result<Vec<TrainingTriplet>> {
    Ok(corpus.triplets(&GenConfig::test(seed), 0..n as u64)?)
}

/// Writes the test set for the images in `corpus_dir` to `out_dir`.
pub fn write_test_set(corpus_dir: &Path, out_dir: &Path, n: usize, seed: u64) -> Result<datagen::DatasetManifest> {
    Ok(datagen::generate_dataset(corpus_dir, &GenConfig::test(seed), out_dir, n)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::synthetic;
    use rand::{Rng, SeedableRng};

    #[test]
    fn basic_errors() {
        let gt = FourPointDelta::new([1.0, 2.0, -3.0, 4.0, 0.5, 0.0, 7.0, -1.0]);
        assert_eq!(mace_sample(&gt, &gt), 0.0);
        let shifted = FourPointDelta::new(std::array::from_fn(|i| gt.d[i] + if i % 2 == 0 { 3.0 } else { 4.0 }));
        assert!((mace_sample(&shifted, &gt) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn identity_constant_matches_monte_carlo_and_closed_form() {
        let closed = (2f64.sqrt() + (1.0 + 2f64.sqrt()).ln()) / 3.0;
        assert!((closed - IDENTITY_MACE_FACTOR).abs() < 5e-6);
        let mut rng = crate::rng::Rng64::seed_from_u64(17);
        let n = 400_000;
        let mean = (0..n)
            .map(|_| {
                let (x, y): (f64, f64) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
                x.hypot(y)
            })
            .sum::<f64>()
            / n as f64;
        // Standard error is about 0.28 / sqrt(n) = 4.4e-4.
        assert!((mean - IDENTITY_MACE_FACTOR).abs() < 2e-3, "{mean}");
    }

    #[test]
    fn error_shift_obeys_triangle_inequality() {
        let mut rng = crate::rng::Rng64::seed_from_u64(5);
        for _ in 0..1000 {
            let gt = FourPointDelta::new(std::array::from_fn(|_| rng.random_range(-64.0..64.0)));
            let pred = FourPointDelta::new(std::array::from_fn(|_| rng.random_range(-64.0..64.0)));
            let (cu, cv) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let moved = FourPointDelta::new(std::array::from_fn(|i| pred.d[i] + if i % 2 == 0 { cu } else { cv }));
            let change = (mace_sample(&moved, &gt) - mace_sample(&pred, &gt)).abs();
            assert!(change <= f64::hypot(cu, cv) + 1e-9);
        }
    }

    #[test]
    fn identity_and_ground_truth_methods() {
        let cfg = GenConfig::desk(3);
        let corpus = Corpus::from_images(synthetic::scenes(4, 80, 60, 3), &cfg).unwrap();
        let set = corpus.triplets(&cfg, 0..200).unwrap();
        let rec = evaluate_triplets(&Method::Identity, &set).unwrap();
        assert_eq!(rec.corner_errors.len(), 200);
        let expected = mace_aggregate(&set.iter().map(|t| mace_sample(&FourPointDelta::ZERO, &t.label)).collect::<Vec<_>>());
        assert!((rec.mace - expected).abs() < 1e-12);
        let csv = rec.to_csv();
        assert!(csv.starts_with("index,e1,e2,e3,e4,mean\n"));
        assert_eq!(csv.lines().count(), 201);
        // The ground truth scores zero.
        let per: Vec<f64> = set.iter().map(|t| mace_sample(&t.label, &t.label)).collect();
        assert_eq!(mace_aggregate(&per), 0.0);
    }

    #[test]
    fn smoke_test_set() {
        let cfg = GenConfig::test(1);
        let corpus = Corpus::from_images(synthetic::scenes(2, 640, 480, 8), &cfg).unwrap();
        let a = build_test_set(&corpus, 10, 1).unwrap();
        assert_eq!(a.len(), 10);
        assert!(a.iter().all(|t| t.patch_a.width() == 256 && t.label.max_abs() <= 64.0));
        assert_eq!(a, build_test_set(&corpus, 10, 1).unwrap());
    }
}
