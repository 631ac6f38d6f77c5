//! Overlay rendering: patch outlines, ground-truth and estimated quads,
//! baseline matches, and classification confidence grids.

use std::path::{Path, PathBuf};

use crate::datagen::TrainingTriplet;
use crate::geometry::{FourPointDelta, PatchFrame, Point2};
use crate::imaging::pnm::{self, RgbImage};
use crate::imaging::GrayImage;
use crate::nn::quant::{Decoded, NUM_BINS};

pub const BLUE: [u8; 3] = [0, 0, 255];
pub const GREEN: [u8; 3] = [0, 255, 0];
pub const RED: [u8; 3] = [255, 0, 0];
const GAP: usize = 8;

/// One method's estimate to draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub delta: FourPointDelta,
    /// Feature matches `(in A, in B)` to draw as lines, pixel-index
    /// coordinates.
    pub matches: Vec<(Point2, Point2)>,
}

pub fn draw_line(img: &mut RgbImage, a: Point2, b: Point2, color: [u8; 3]) {
    let steps = (a.distance(&b).ceil() as usize).max(1) * 2;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a.u + (b.u - a.u) * t;
        let y = a.v + (b.v - a.v) * t;
        img.put(x.floor() as i64, y.floor() as i64, color);
    }
}

/// Closed polygon through continuous-coordinate corners.
pub fn draw_quad(img: &mut RgbImage, corners: &[Point2; 4], offset: (f64, f64), color: [u8; 3]) {
    let shifted = corners.map(|p| Point2::new(p.u + offset.0, p.v + offset.1));
    for i in 0..4 {
        draw_line(img, shifted[i], shifted[(i + 1) % 4], color);
    }
}

fn blit(canvas: &mut RgbImage, img: &GrayImage, x0: usize, y0: usize) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            let v = (img.get(x, y).clamp(0.0, 1.0) * 255.0).round() as u8;
            canvas.put((x0 + x) as i64, (y0 + y) as i64, [v, v, v]);
        }
    }
}

/// Side-by-side rendering. Left: patch A inside a margin, with its outline
/// and the ground-truth quad in blue and each estimate's quad in green.
/// Right: patch B. Match lines run in red from A to B.
pub fn render(sample: &TrainingTriplet, overlays: &[Overlay]) -> RgbImage {
    let side = sample.patch_a.width();
    let reach = overlays
        .iter()
        .map(|o| o.delta.max_abs())
        .fold(sample.label.max_abs(), f64::max);
    let margin = reach.ceil() as usize + 2;
    let (w, h) = (2 * margin + side + GAP + side + margin, 2 * margin + side);
    let mut canvas = RgbImage::new(w, h, [32, 32, 32]);
    let a_org = (margin, margin);
    let b_org = (2 * margin + side + GAP, margin);
    blit(&mut canvas, &sample.patch_a, a_org.0, a_org.1);
    blit(&mut canvas, &sample.patch_b, b_org.0, b_org.1);

    let frame = PatchFrame::local(side).expect("patch side >= 2");
    let off_a = (a_org.0 as f64, a_org.1 as f64);
    draw_quad(&mut canvas, &frame.corners(), off_a, BLUE);
    draw_quad(&mut canvas, &sample.label.displaced_corners(&frame), off_a, BLUE);
    for o in overlays {
        for (pa, pb) in &o.matches {
            let a = Point2::new(pa.u + 0.5 + off_a.0, pa.v + 0.5 + off_a.1);
            let b = Point2::new(pb.u + 0.5 + b_org.0 as f64, pb.v + 0.5 + b_org.1 as f64);
            draw_line(&mut canvas, a, b, RED);
        }
    }
    for o in overlays {
        draw_quad(&mut canvas, &o.delta.displaced_corners(&frame), off_a, GREEN);
    }
    canvas
}

/// Writes color PPM, or grayscale PGM when the path ends in `.pgm`.
pub fn save(img: &RgbImage, path: &Path) -> crate::imaging::Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("pgm") => pnm::write_pgm(path, &img.to_gray()),
        _ => pnm::write_ppm(path, img),
    }
}

/// A corner's 21x21 confidence grid as an image, `[v][u]` to `(row, col)`,
/// scaled so the largest probability is white.
pub fn grid_image(grid: &[[f64; NUM_BINS]; NUM_BINS]) -> GrayImage {
    let max = grid.iter().flatten().cloned().fold(0.0, f64::max);
    GrayImage::from_fn(NUM_BINS, NUM_BINS, |x, y| {
        if max > 0.0 {
            (grid[y][x] / max) as f32
        } else {
            0.0
        }
    })
}

/// Writes `{stem}_corner{1..4}.pgm` next to `stem`.
pub fn write_confidence_grids(decoded: &Decoded, stem: &Path) -> crate::imaging::Result<Vec<PathBuf>> {
    let name = stem.file_name().and_then(|n| n.to_str()).unwrap_or("grid").to_string();
    (0..4)
        .map(|c| {
            let p = stem.with_file_name(format!("{name}_corner{}.pgm", c + 1));
            pnm::write_pgm(&p, &grid_image(&decoded.corner_grid(c)))?;
            Ok(p)
        })
        .collect()
}
