//! Procedural natural-ish scenes for running the pipeline without a photo
//! corpus: smooth shading, value noise, overlapping shapes and gratings.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::imaging::{self, pnm, GrayImage};
use crate::rng::{stream_rng, streams};

enum Shape {
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
    Ellipse { cx: f32, cy: f32, rx: f32, ry: f32, c: f32, s: f32 },
    Triangle([(f32, f32); 3]),
}

impl Shape {
    fn contains(&self, x: f32, y: f32) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Ellipse { cx, cy, rx, ry, c, s } => {
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Triangle(p) => {
                let edge = |a: (f32, f32), b: (f32, f32)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
                let (e0, e1, e2) = (edge(p[0], p[1]), edge(p[1], p[2]), edge(p[2], p[0]));
                (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0)
            }
        }
    }

    fn bounds(&self) -> (f32, f32, f32, f32) {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => (x0, y0, x1, y1),
            Shape::Ellipse { cx, cy, rx, ry, .. } => {
                let r = rx.max(ry);
                (cx - r, cy - r, cx + r, cy + r)
            }
            Shape::Triangle(p) => {
                let xs = p.map(|q| q.0);
                let ys = p.map(|q| q.1);
                (
                    xs.iter().cloned().fold(f32::MAX, f32::min),
                    ys.iter().cloned().fold(f32::MAX, f32::min),
                    xs.iter().cloned().fold(f32::MIN, f32::max),
                    ys.iter().cloned().fold(f32::MIN, f32::max),
                )
            }
        }
    }
}

struct Fill {
    base: f32,
    /// Optional sinusoidal grating: (amplitude, kx, ky, phase).
    grating: Option<(f32, f32, f32, f32)>,
}

impl Fill {
    fn at(&self, x: f32, y: f32) -> f32 {
        match self.grating {
            Some((a, kx, ky, ph)) => self.base + a * (kx * x + ky * y + ph).sin(),
            None => self.base,
        }
    }
}

fn value_noise(width: usize, height: usize, cell: usize, rng: &mut impl Rng) -> Vec<f32> {
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let grid: Vec<f32> = (0..gw * gh).map(|_| rng.random::<f32>() - 0.5).collect();
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        let gy = y as f32 / cell as f32;
        let (iy, fy) = (gy.floor() as usize, gy.fract());
        let sy = fy * fy * (3.0 - 2.0 * fy);
        for x in 0..width {
            let gx = x as f32 / cell as f32;
            let (ix, fx) = (gx.floor() as usize, gx.fract());
            let sx = fx * fx * (3.0 - 2.0 * fx);
            let g = |i: usize, j: usize| grid[j * gw + i];
            let top = g(ix, iy) * (1.0 - sx) + g(ix + 1, iy) * sx;
            let bot = g(ix, iy + 1) * (1.0 - sx) + g(ix + 1, iy + 1) * sx;
            out[y * width + x] = top * (1.0 - sy) + bot * sy;
        }
    }
    out
}

/// Renders a random scene of the given size.
pub fn render_scene(width: usize, height: usize, rng: &mut impl Rng) -> GrayImage {
    let (wf, hf) = (width as f32, height as f32);
    let scale = wf.min(hf);

    let g0: f32 = rng.random_range(0.2..0.8);
    let gx: f32 = rng.random_range(-0.3..0.3);
    let gy: f32 = rng.random_range(-0.3..0.3);
    let coarse = value_noise(width, height, (scale / 4.0).max(2.0) as usize, rng);
    let fine = value_noise(width, height, (scale / 24.0).max(2.0) as usize, rng);
    let mut px: Vec<f32> = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f32 / wf, (i / width) as f32 / hf);
            g0 + gx * (x - 0.5) + gy * (y - 0.5) + 0.35 * coarse[i] + 0.15 * fine[i]
        })
        .collect();

    let count = rng.random_range(14..28);
    for _ in 0..count {
        let size = scale * rng.random_range(0.06..0.35);
        let cx = rng.random_range(-0.1..1.1) * wf;
        let cy = rng.random_range(-0.1..1.1) * hf;
        let shape = match rng.random_range(0..3) {
            0 => {
                let aspect: f32 = rng.random_range(0.4..2.5);
                let (hw, hh) = (size * aspect.sqrt() / 2.0, size / aspect.sqrt() / 2.0);
                Shape::Rect {
                    x0: cx - hw,
                    y0: cy - hh,
                    x1: cx + hw,
                    y1: cy + hh,
                }
            }
            1 => {
                let t: f32 = rng.random_range(0.0..std::f32::consts::PI);
                Shape::Ellipse {
                    cx,
                    cy,
                    rx: size / 2.0,
                    ry: size * rng.random_range(0.2..0.5),
                    c: t.cos(),
                    s: t.sin(),
                }
            }
            _ => {
                let mut p = [(0.0, 0.0); 3];
                for q in p.iter_mut() {
                    *q = (
                        cx + size * rng.random_range(-0.7..0.7),
                        cy + size * rng.random_range(-0.7..0.7),
                    );
                }
                Shape::Triangle(p)
            }
        };
        let grating = if rng.random_bool(0.35) {
            let period = scale * rng.random_range(0.03..0.12);
            let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
            let k = std::f32::consts::TAU / period;
            Some((
                rng.random_range(0.1..0.3),
                k * theta.cos(),
                k * theta.sin(),
                rng.random_range(0.0..std::f32::consts::TAU),
            ))
        } else {
            None
        };
        let fill = Fill {
            base: rng.random_range(0.0..1.0),
            grating,
        };
        let (bx0, by0, bx1, by1) = shape.bounds();
        let xa = bx0.floor().max(0.0) as usize;
        let ya = by0.floor().max(0.0) as usize;
        let xb = (bx1.ceil().max(0.0) as usize).min(width);
        let yb = (by1.ceil().max(0.0) as usize).min(height);
        for y in ya..yb {
            for x in xa..xb {
                let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
                if shape.contains(fx, fy) {
                    px[y * width + x] = fill.at(fx, fy);
                }
            }
        }
    }

    let img = GrayImage::from_fn(width, height, |x, y| px[y * width + x]);
    imaging::gaussian_blur(&img, 0.6)
}

/// Renders `count` scenes; scene `i` depends only on `(seed, i)`.
pub fn scenes(count: usize, width: usize, height: usize, seed: u64) -> Vec<GrayImage> {
    (0..count)
        .map(|i| render_scene(width, height, &mut stream_rng(seed, streams::SCENE, i as u64)))
        .collect()
}

/// Writes `count` scenes as `scene_00000.pgm`, ... into `dir`.
pub fn write_corpus(dir: &Path, count: usize, width: usize, height: usize, seed: u64) -> crate::imaging::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(count);
    for (i, img) in scenes(count, width, height, seed).iter().enumerate() {
        let p = dir.join(format!("scene_{i:05}.pgm"));
        pnm::write_pgm(&p, img)?;
        paths.push(p);
    }
    Ok(paths)
}
