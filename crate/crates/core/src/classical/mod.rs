//! Feature-based baseline: oriented FAST corners, rotated binary
//! descriptors, mutual nearest-neighbour matching and RANSAC.

use rand::seq::index::sample;
use thiserror::Error;

use crate::geometry::{
    clip_four_point, dlt, matrix_to_four_point, FourPointDelta, GeometryError, Homography3x3, PatchFrame, Point2,
};
use crate::imaging::GrayImage;
use crate::rng::Rng64;

mod features;

pub use features::{
    describe, describe_with, detect, detect_with, pattern, BinaryDescriptor, Described, DetectorConfig, Keypoint,
    DESCRIPTOR_BITS, PATCH_RADIUS,
};

pub const DEFAULT_THRESHOLD: f64 = 3.0;
pub const DEFAULT_ITERATIONS: usize = 2000;
pub const DEFAULT_TOP_MATCHES: usize = 25;
pub const DEFAULT_MAX_KEYPOINTS: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassicalError {
    #[error("need at least 4 correspondences, got {0}")]
    TooFewPairs(usize),
    #[error("no valid homography hypothesis")]
    NoValidModel,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, ClassicalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    pub hamming_distance: u32,
}

/// Mutual nearest neighbours under Hamming distance, best `k` first
/// (ties broken by `index_a`).
pub fn match_descriptors(a: &[BinaryDescriptor], b: &[BinaryDescriptor], k: usize) -> Vec<Match> {
    let nearest = |d: &BinaryDescriptor, set: &[BinaryDescriptor]| {
        set.iter()
            .enumerate()
            .map(|(j, e)| (d.hamming(e), j))
            .min()
    };
    let mut out: Vec<Match> = a
        .iter()
        .enumerate()
        .filter_map(|(i, da)| {
            let (dist, j) = nearest(da, b)?;
            let (_, back) = nearest(&b[j], a)?;
            (back == i).then_some(Match {
                index_a: i,
                index_b: j,
                hamming_distance: dist,
            })
        })
        .collect();
    out.sort_by_key(|m| (m.hamming_distance, m.index_a));
    out.truncate(k);
    out
}

/// Inlier test and scoring: forward reprojection error `|H src - dst|`.
fn reprojection_errors(h: &Homography3x3, pairs: &[(Point2, Point2)]) -> Vec<f64> {
    pairs
        .iter()
        .map(|(s, d)| h.apply(*s).map_or(f64::INFINITY, |p| p.distance(d)))
        .collect()
}

/// RANSAC over minimal 4-pair DLT hypotheses with a fixed iteration count.
/// The best hypothesis (most inliers, then lowest total inlier error) is
/// re-fit on its inliers. Returns the model `dst ~ H src` and the inlier
/// mask of the best hypothesis.
pub fn ransac_homography(
    pairs: &[(Point2, Point2)],
    threshold: f64,
    iterations: usize,
    rng: &mut Rng64,
) -> Result<(Homography3x3, Vec<bool>)> {
    if pairs.len() < 4 {
        return Err(ClassicalError::TooFewPairs(pairs.len()));
    }
    let mut best: Option<(usize, f64, Homography3x3, Vec<bool>)> = None;
    for _ in 0..iterations {
        let idx = sample(rng, pairs.len(), 4);
        let minimal: Vec<(Point2, Point2)> = idx.iter().map(|i| pairs[i]).collect();
        let Ok(h) = dlt(&minimal) else { continue };
        let errs = reprojection_errors(&h, pairs);
        let mask: Vec<bool> = errs.iter().map(|&e| e < threshold).collect();
        let count = mask.iter().filter(|&&m| m).count();
        let total: f64 = errs.iter().filter(|&&e| e < threshold).sum();
        let better = match &best {
            None => true,
            Some((c, t, _, _)) => count > *c || (count == *c && total < *t),
        };
        if better {
            best = Some((count, total, h, mask));
        }
    }
    let (count, total, h, mask) = best.ok_or(ClassicalError::NoValidModel)?;
    let inliers: Vec<(Point2, Point2)> = pairs.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
    // The algebraic least-squares re-fit can be dragged by a near-threshold
    // inlier; keep it only if it explains the same set at least as well.
    let refit = dlt(&inliers).ok().filter(|r| {
        let errs = reprojection_errors(r, &inliers);
        errs.iter().all(|&e| e < threshold) && errs.iter().sum::<f64>() <= total.max(1e-9 * count as f64)
    });
    Ok((refit.unwrap_or(h), mask))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub max_keypoints: usize,
    pub top_matches: usize,
    pub threshold: f64,
    pub iterations: usize,
    /// Output components are clamped to `[-clip, clip]`.
    pub clip: f64,
    pub detector: DetectorConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            max_keypoints: DEFAULT_MAX_KEYPOINTS,
            top_matches: DEFAULT_TOP_MATCHES,
            threshold: DEFAULT_THRESHOLD,
            iterations: DEFAULT_ITERATIONS,
            clip: 64.0,
            detector: DetectorConfig::default(),
        }
    }
}

/// Everything the baseline computed for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub delta: FourPointDelta,
    /// Matched points `(in A, in B)`, pixel-index coordinates.
    pub matches: Vec<(Point2, Point2)>,
    /// Inlier mask over `matches`, empty when RANSAC did not run.
    pub inliers: Vec<bool>,
    /// False when the identity fallback was used.
    pub estimated: bool,
}

/// Converts an estimated B-to-A homography of the local patch frame into a
/// clipped 4-point delta; anything non-finite becomes the identity.
pub fn delta_from_estimate(h: &Homography3x3, side: usize, clip: f64) -> FourPointDelta {
    let d = PatchFrame::local(side)
        .ok()
        .and_then(|f| matrix_to_four_point(h, &f).ok())
        .filter(|d| d.is_finite())
        .unwrap_or(FourPointDelta::ZERO);
    clip_four_point(&d, clip)
}

/// Corner offsets taking patch A to patch B, or the zero delta when too few
/// features match or RANSAC finds no model.
pub fn estimate_baseline(a: &GrayImage, b: &GrayImage, clip: f64, rng: &mut Rng64) -> FourPointDelta {
    let cfg = BaselineConfig {
        clip,
        ..BaselineConfig::default()
    };
    run_baseline(a, b, &cfg, rng).delta
}

pub fn run_baseline(a: &GrayImage, b: &GrayImage, cfg: &BaselineConfig, rng: &mut Rng64) -> BaselineResult {
    let identity = |matches| BaselineResult {
        delta: FourPointDelta::ZERO,
        matches,
        inliers: Vec::new(),
        estimated: false,
    };
    let side = a.width();
    if a.height() != side || b.width() != side || b.height() != side {
        return identity(Vec::new());
    }
    let ka = detect_with(a, cfg.max_keypoints, &cfg.detector);
    let kb = detect_with(b, cfg.max_keypoints, &cfg.detector);
    let da = describe_with(a, &ka, &cfg.detector);
    let db = describe_with(b, &kb, &cfg.detector);
    let matches = match_descriptors(&da.descriptors, &db.descriptors, cfg.top_matches);
    let points: Vec<(Point2, Point2)> = matches
        .iter()
        .map(|m| {
            let (pa, pb) = (&ka[da.kept[m.index_a]], &kb[db.kept[m.index_b]]);
            (Point2::new(pa.x, pa.y), Point2::new(pb.x, pb.y))
        })
        .collect();
    if points.len() < 4 {
        return identity(points);
    }
    // Fit B -> A in continuous coordinates (pixel centers at i + 0.5).
    let fit: Vec<(Point2, Point2)> = points
        .iter()
        .map(|(pa, pb)| (Point2::new(pb.u + 0.5, pb.v + 0.5), Point2::new(pa.u + 0.5, pa.v + 0.5)))
        .collect();
    match ransac_homography(&fit, cfg.threshold, cfg.iterations, rng) {
        Ok((h, inliers)) => BaselineResult {
            delta: delta_from_estimate(&h, side, cfg.clip),
            matches: points,
            inliers,
            estimated: true,
        },
        Err(_) => identity(points),
    }
}
