//! Homography representations and conversions.
//!
//! A homography is kept in two forms: the 3x3 projective matrix (defined up
//! to scale) and the 4-point form, which stores the displacement of the four
//! corners of a reference square. Corners are always ordered top-left,
//! top-right, bottom-right, bottom-left.
//!
//! Coordinates are continuous: a square patch with origin `p` and side `s`
//! spans `[p, p + s]`, so pixel `i` covers `[i, i + 1]` and has its center at
//! `i + 0.5`.

use std::ops::Mul;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest |w| accepted when dehomogenizing.
pub const PROJECTION_EPS: f64 = 1e-12;
/// Smallest |det| (after scale normalization) of an invertible homography.
pub const DET_EPS: f64 = 1e-12;
/// Reprojection error above which an exactly-determined DLT solve is rejected.
const MINIMAL_REPROJECTION_TOL: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate projection: |w| = {w:e} at ({u}, {v})")]
    DegenerateProjection { w: f64, u: f64, v: f64 },
    #[error("homography is singular (|det| = {0:e})")]
    Singular(f64),
    #[error("need at least 4 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("invalid patch frame: {0}")]
    InvalidFrame(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Image-plane point in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub u: f64,
    pub v: f64,
}

impl Point2 {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Projective map as a row-major 3x3 matrix, defined up to scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography3x3 {
    h: [[f64; 3]; 3],
}

impl Homography3x3 {
    /// Builds a homography, rejecting non-finite or singular matrices.
    pub fn new(h: [[f64; 3]; 3]) -> Result<Self> {
        if h.iter().flatten().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let out = Self { h };
        let det = out.normalized_det();
        if det.abs() <= DET_EPS {
            return Err(GeometryError::Singular(det));
        }
        Ok(out)
    }

    pub const fn identity() -> Self {
        Self {
            h: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub const fn translation(tu: f64, tv: f64) -> Self {
        Self {
            h: [[1.0, 0.0, tu], [0.0, 1.0, tv], [0.0, 0.0, 1.0]],
        }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.h
    }

    pub fn det(&self) -> f64 {
        det3(&self.h)
    }

    fn max_abs(&self) -> f64 {
        self.h.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Determinant of the matrix rescaled so its largest element has magnitude 1.
    fn normalized_det(&self) -> f64 {
        let s = self.max_abs();
        if s == 0.0 {
            return 0.0;
        }
        det3(&self.h) / (s * s * s)
    }

    /// Maps `p` through the homography and dehomogenizes.
    pub fn apply(&self, p: Point2) -> Result<Point2> {
        if !p.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        let h = &self.h;
        let x = h[0][0] * p.u + h[0][1] * p.v + h[0][2];
        let y = h[1][0] * p.u + h[1][1] * p.v + h[1][2];
        let w = h[2][0] * p.u + h[2][1] * p.v + h[2][2];
        if w.abs() < PROJECTION_EPS {
            return Err(GeometryError::DegenerateProjection { w, u: p.u, v: p.v });
        }
        Ok(Point2::new(x / w, y / w))
    }

    pub fn invert(&self) -> Result<Self> {
        let ndet = self.normalized_det();
        if ndet.abs() <= DET_EPS {
            return Err(GeometryError::Singular(ndet));
        }
        let h = &self.h;
        let det = det3(h);
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
            h[r0][c0] * h[r1][c1] - h[r0][c1] * h[r1][c0]
        };
        let inv = [
            [cof(1, 2, 1, 2) / det, -cof(0, 2, 1, 2) / det, cof(0, 1, 1, 2) / det],
            [-cof(1, 2, 0, 2) / det, cof(0, 2, 0, 2) / det, -cof(0, 1, 0, 2) / det],
            [cof(1, 2, 0, 1) / det, -cof(0, 2, 0, 1) / det, cof(0, 1, 0, 1) / det],
        ];
        Ok(Self { h: inv })
    }

    /// Scale-normalized copy: the element of largest magnitude becomes +1.
    pub fn normalized(&self) -> Self {
        let mut big = 0.0_f64;
        for x in self.h.iter().flatten() {
            if x.abs() > big.abs() {
                big = *x;
            }
        }
        if big == 0.0 {
            return *self;
        }
        let mut h = self.h;
        h.iter_mut().flatten().for_each(|x| *x /= big);
        Self { h }
    }

    /// Largest elementwise difference after normalizing both matrices.
    pub fn distance_up_to_scale(&self, other: &Self) -> f64 {
        let a = self.normalized();
        let b = other.normalized();
        a.h.iter()
            .flatten()
            .zip(b.h.iter().flatten())
            .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
    }

    pub fn approx_eq_up_to_scale(&self, other: &Self, tol: f64) -> bool {
        self.distance_up_to_scale(other) <= tol
    }

    /// Matrix scaled so that `h33 == 1` when possible.
    fn with_unit_h33(mut self) -> Self {
        let s = self.h[2][2];
        if s.abs() > 1e-8 * self.max_abs() {
            self.h.iter_mut().flatten().for_each(|x| *x /= s);
        } else {
            let n = self.h.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
            self.h.iter_mut().flatten().for_each(|x| *x /= n);
        }
        self
    }
}

impl Mul for Homography3x3 {
    type Output = Homography3x3;

    fn mul(self, rhs: Self) -> Self {
        Self {
            h: matmul3(&self.h, &rhs.h),
        }
    }
}

fn det3(h: &[[f64; 3]; 3]) -> f64 {
    h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1])
        - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0])
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Square patch placement inside a parent image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchFrame {
    pub origin: Point2,
    pub side: usize,
}

impl PatchFrame {
    pub fn new(origin: Point2, side: usize) -> Result<Self> {
        if side < 2 {
            return Err(GeometryError::InvalidFrame(format!("side {side} < 2")));
        }
        if !origin.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { origin, side })
    }

    /// Frame anchored at the origin, for patch-local coordinates.
    pub fn local(side: usize) -> Result<Self> {
        Self::new(Point2::default(), side)
    }

    /// Corners in TL, TR, BR, BL order.
    pub fn corners(&self) -> [Point2; 4] {
        let (x0, y0) = (self.origin.u, self.origin.v);
        let s = self.side as f64;
        [
            Point2::new(x0, y0),
            Point2::new(x0 + s, y0),
            Point2::new(x0 + s, y0 + s),
            Point2::new(x0, y0 + s),
        ]
    }
}

/// Corner offsets `(du1, dv1, ..., du4, dv4)` in TL, TR, BR, BL order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FourPointDelta {
    pub d: [f64; 8],
}

impl FourPointDelta {
    pub const ZERO: FourPointDelta = FourPointDelta { d: [0.0; 8] };

    pub const fn new(d: [f64; 8]) -> Self {
        Self { d }
    }

    /// The same offset applied to every corner.
    pub fn uniform(du: f64, dv: f64) -> Self {
        Self {
            d: [du, dv, du, dv, du, dv, du, dv],
        }
    }

    pub fn corner(&self, i: usize) -> (f64, f64) {
        (self.d[2 * i], self.d[2 * i + 1])
    }

    pub fn is_finite(&self) -> bool {
        self.d.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.d.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            d: self.d.map(|x| x * factor),
        }
    }

    /// Displaced corners of `frame`.
    pub fn displaced_corners(&self, frame: &PatchFrame) -> [Point2; 4] {
        let mut c = frame.corners();
        for (i, p) in c.iter_mut().enumerate() {
            let (du, dv) = self.corner(i);
            p.u += du;
            p.v += dv;
        }
        c
    }
}

/// Normalized DLT homography from at least 4 correspondences `(src, dst)`,
/// such that `dst ~ H src`.
pub fn dlt(correspondences: &[(Point2, Point2)]) -> Result<Homography3x3> {
    let n = correspondences.len();
    if n < 4 {
        return Err(GeometryError::TooFewCorrespondences(n));
    }
    if correspondences
        .iter()
        .any(|(a, b)| !a.is_finite() || !b.is_finite())
    {
        return Err(GeometryError::NonFinite);
    }
    let src: Vec<Point2> = correspondences.iter().map(|c| c.0).collect();
    let dst: Vec<Point2> = correspondences.iter().map(|c| c.1).collect();
    let (src_n, t_src) = normalize_points(&src)?;
    let (dst_n, t_dst) = normalize_points(&dst)?;

    if n == 4 && (has_collinear_triple(&src_n) || has_collinear_triple(&dst_n)) {
        return Err(GeometryError::DegenerateConfiguration("three collinear points"));
    }

    // Accumulate AᵀA for the 2N×9 system directly.
    let mut ata = [[0.0_f64; 9]; 9];
    for (p, q) in src_n.iter().zip(&dst_n) {
        let (x, y, u, v) = (p.u, p.v, q.u, q.v);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for r in [r0, r1] {
            for i in 0..9 {
                for j in i..9 {
                    ata[i][j] += r[i] * r[j];
                }
            }
        }
    }
    for i in 0..9 {
        for j in 0..i {
            ata[i][j] = ata[j][i];
        }
    }

    let (vals, vecs) = jacobi_eigen(ata);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let largest = vals[order[8]];
    if largest <= 0.0 || vals[order[1]] / largest < 1e-12 {
        return Err(GeometryError::DegenerateConfiguration("rank-deficient system"));
    }
    let k = order[0];
    let hn = [
        [vecs[0][k], vecs[1][k], vecs[2][k]],
        [vecs[3][k], vecs[4][k], vecs[5][k]],
        [vecs[6][k], vecs[7][k], vecs[8][k]],
    ];

    let t_dst_inv = [
        [1.0 / t_dst.scale, 0.0, t_dst.cu],
        [0.0, 1.0 / t_dst.scale, t_dst.cv],
        [0.0, 0.0, 1.0],
    ];
    let h = matmul3(&matmul3(&t_dst_inv, &hn), &t_src.matrix());
    let h = Homography3x3::new(h)
        .map_err(|_| GeometryError::DegenerateConfiguration("singular solution"))?
        .with_unit_h33();

    if n == 4 {
        for (p, q) in correspondences {
            let r = h.apply(*p)?;
            if r.distance(q) > MINIMAL_REPROJECTION_TOL {
                return Err(GeometryError::DegenerateConfiguration(
                    "minimal solution does not reproject its inputs",
                ));
            }
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy)]
struct Similarity {
    cu: f64,
    cv: f64,
    scale: f64,
}

impl Similarity {
    fn matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.scale, 0.0, -self.scale * self.cu],
            [0.0, self.scale, -self.scale * self.cv],
            [0.0, 0.0, 1.0],
        ]
    }
}

/// Translates the centroid to the origin and scales the mean distance to √2.
fn normalize_points(pts: &[Point2]) -> Result<(Vec<Point2>, Similarity)> {
    let n = pts.len() as f64;
    let cu = pts.iter().map(|p| p.u).sum::<f64>() / n;
    let cv = pts.iter().map(|p| p.v).sum::<f64>() / n;
    let mean_dist = pts.iter().map(|p| (p.u - cu).hypot(p.v - cv)).sum::<f64>() / n;
    if !(mean_dist > 1e-12) {
        return Err(GeometryError::DegenerateConfiguration("coincident points"));
    }
    let scale = std::f64::consts::SQRT_2 / mean_dist;
    let out = pts
        .iter()
        .map(|p| Point2::new((p.u - cu) * scale, (p.v - cv) * scale))
        .collect();
    Ok((out, Similarity { cu, cv, scale }))
}

/// Collinearity test for normalized points (mean distance √2 from origin).
fn has_collinear_triple(pts: &[Point2]) -> bool {
    let n = pts.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (pts[i], pts[j], pts[k]);
                let cross = (b.u - a.u) * (c.v - a.v) - (b.v - a.v) * (c.u - a.u);
                if cross.abs() < 1e-9 {
                    return true;
                }
            }
        }
    }
    false
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
///
/// Returns the eigenvalues and a matrix whose columns are the eigenvectors.
pub(crate) fn jacobi_eigen<const N: usize>(mut a: [[f64; N]; N]) -> ([f64; N], [[f64; N]; N]) {
    let mut v = [[0.0; N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..N)
            .flat_map(|p| (p + 1..N).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        let diag: f64 = (0..N).map(|i| a[i][i] * a[i][i]).sum();
        if off == 0.0 || off <= 1e-32 * diag {
            break;
        }
        for p in 0..N {
            for q in p + 1..N {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut vals = [0.0; N];
    for (i, x) in vals.iter_mut().enumerate() {
        *x = a[i][i];
    }
    (vals, v)
}

/// Homography taking the corners of `frame` to the corners displaced by `d`.
///
/// A uniform displacement yields the exact translation matrix.
pub fn four_point_to_matrix(d: &FourPointDelta, frame: &PatchFrame) -> Result<Homography3x3> {
    if !d.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let (du, dv) = d.corner(0);
    if (1..4).all(|i| d.corner(i) == (du, dv)) {
        return Ok(Homography3x3::translation(du, dv));
    }
    let src = frame.corners();
    let dst = d.displaced_corners(frame);
    let pairs: Vec<(Point2, Point2)> = src.into_iter().zip(dst).collect();
    dlt(&pairs)
}

/// Corner offsets `H(corner_i) - corner_i` of `frame`.
pub fn matrix_to_four_point(h: &Homography3x3, frame: &PatchFrame) -> Result<FourPointDelta> {
    let mut d = [0.0; 8];
    for (i, c) in frame.corners().iter().enumerate() {
        let m = h.apply(*c)?;
        d[2 * i] = m.u - c.u;
        d[2 * i + 1] = m.v - c.v;
    }
    Ok(FourPointDelta { d })
}

/// Clamps every component to `[-limit, limit]`.
pub fn clip_four_point(d: &FourPointDelta, limit: f64) -> FourPointDelta {
    FourPointDelta {
        d: d.d.map(|x| x.clamp(-limit, limit)),
    }
}
