//! Oriented FAST corners and rotated binary descriptors.

use std::sync::OnceLock;

use rand_distr::{Distribution, Normal};

use crate::geometry::Point2;
use crate::imaging::{gaussian_blur, resize_bilinear, GrayImage};
use crate::rng::stream_rng;

/// Offsets of the 16-pixel Bresenham circle of radius 3, clockwise from the
/// top.
const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -3),
    (-1, -3),
];
const ARC: usize = 9;
/// Radius of the descriptor patch and of the orientation window.
pub const PATCH_RADIUS: i32 = 15;
pub const DESCRIPTOR_BITS: usize = 256;
const PATTERN_SEED: u64 = 0x6f72_6221;
/// Pre-smoothing before binary tests.
const DESCRIBE_BLUR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Segment-test intensity threshold (image values in `[0, 1]`).
    pub threshold: f32,
    pub levels: usize,
    pub scale_factor: f64,
    /// Pixels skipped at each level's border.
    pub border: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold: 0.08,
            levels: 3,
            scale_factor: 1.2,
            border: 3,
        }
    }
}

/// Detected corner, in level-0 pixel-index coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f32,
    /// Intensity-centroid angle, radians.
    pub orientation: f64,
    /// Pyramid level the corner was found on.
    pub level: usize,
}

/// 256-bit binary descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BinaryDescriptor(pub [u64; 4]);

impl BinaryDescriptor {
    pub fn hamming(&self, other: &Self) -> u32 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a ^ b).count_ones()).sum()
    }
}

/// Descriptors and which keypoints they belong to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Described {
    pub descriptors: Vec<BinaryDescriptor>,
    /// Index into the input keypoints for each descriptor.
    pub kept: Vec<usize>,
    /// Keypoints whose rotated pattern left the image.
    pub dropped: Vec<usize>,
}

struct Level {
    image: GrayImage,
    /// Level-0 pixels per level pixel.
    scale: f64,
}

fn pyramid(img: &GrayImage, levels: usize, factor: f64) -> Vec<Level> {
    (0..levels.max(1))
        .map_while(|l| {
            let s = factor.powi(l as i32);
            let w = (img.width() as f64 / s).round() as usize;
            let h = (img.height() as f64 / s).round() as usize;
            (w >= 7 && h >= 7).then(|| Level {
                image: if l == 0 { img.clone() } else { resize_bilinear(img, w, h) },
                scale: img.width() as f64 / w as f64,
            })
        })
        .collect()
}

fn to_level0(x: f64, scale: f64) -> f64 {
    (x + 0.5) * scale - 0.5
}

fn to_level(x: f64, scale: f64) -> f64 {
    (x + 0.5) / scale - 0.5
}

/// Segment-test score: zero unless `ARC` contiguous circle pixels are all
/// brighter or all darker than the center by `t`; otherwise the summed
/// excess of the better side.
fn fast_score(img: &GrayImage, x: usize, y: usize, t: f32) -> f32 {
    let p = img.get(x, y);
    let ring: [f32; 16] = std::array::from_fn(|i| {
        let (dx, dy) = CIRCLE[i];
        img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize)
    });
    let mut best = 0.0f32;
    for sign in [1.0f32, -1.0] {
        let pass: [bool; 16] = std::array::from_fn(|i| sign * (ring[i] - p) > t);
        let mut run = 0;
        let mut longest = 0;
        for i in 0..32 {
            if pass[i % 16] {
                run += 1;
                longest = longest.max(run);
            } else {
                run = 0;
            }
        }
        if longest >= ARC {
            let sad: f32 = ring.iter().map(|&r| (sign * (r - p) - t).max(0.0)).sum();
            best = best.max(sad);
        }
    }
    best
}

/// Angle of the intensity centroid inside a disc of radius `PATCH_RADIUS`
/// (clipped to the image).
fn orientation(img: &GrayImage, x: usize, y: usize) -> f64 {
    let (mut m10, mut m01) = (0.0f64, 0.0f64);
    let r = PATCH_RADIUS;
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let (px, py) = (x as i32 + dx, y as i32 + dy);
            if px < 0 || py < 0 || px >= img.width() as i32 || py >= img.height() as i32 {
                continue;
            }
            let v = img.get(px as usize, py as usize) as f64;
            m10 += dx as f64 * v;
            m01 += dy as f64 * v;
        }
    }
    m01.atan2(m10)
}

/// FAST-9 corners with 3x3 non-maximum suppression over an image pyramid,
/// keeping the `max_keypoints` best scores.
pub fn detect(img: &GrayImage, max_keypoints: usize) -> Vec<Keypoint> {
    detect_with(img, max_keypoints, &DetectorConfig::default())
}

pub fn detect_with(img: &GrayImage, max_keypoints: usize, cfg: &DetectorConfig) -> Vec<Keypoint> {
    let mut out = Vec::new();
    let border = cfg.border.max(3);
    for (l, level) in pyramid(img, cfg.levels, cfg.scale_factor).iter().enumerate() {
        let im = &level.image;
        let (w, h) = (im.width(), im.height());
        if w <= 2 * border || h <= 2 * border {
            continue;
        }
        let mut score = vec![0.0f32; w * h];
        for y in border..h - border {
            for x in border..w - border {
                score[y * w + x] = fast_score(im, x, y, cfg.threshold);
            }
        }
        for y in border..h - border {
            for x in border..w - border {
                let s = score[y * w + x];
                if s <= 0.0 {
                    continue;
                }
                // Strict maximum against earlier neighbours, non-strict
                // against later ones, so plateaus keep exactly one point.
                let mut is_max = true;
                'nms: for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let n = score[(y as i32 + dy) as usize * w + (x as i32 + dx) as usize];
                        let earlier = dy < 0 || (dy == 0 && dx < 0);
                        if n > s || (earlier && n == s) {
                            is_max = false;
                            break 'nms;
                        }
                    }
                }
                if is_max {
                    out.push(Keypoint {
                        x: to_level0(x as f64, level.scale),
                        y: to_level0(y as f64, level.scale),
                        score: s,
                        orientation: orientation(im, x, y),
                        level: l,
                    });
                }
            }
        }
    }
    // Stable sort keeps level/raster order among equal scores.
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out.truncate(max_keypoints);
    out
}

/// Fixed sampling pattern: 256 point pairs drawn from an isotropic Gaussian
/// (sigma = 31/5) and clipped to the patch.
pub fn pattern() -> &'static [[(f64, f64); 2]; DESCRIPTOR_BITS] {
    static PATTERN: OnceLock<[[(f64, f64); 2]; DESCRIPTOR_BITS]> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = stream_rng(PATTERN_SEED, 0, 0);
        let normal = Normal::<f64>::new(0.0, 31.0 / 5.0).expect("valid sigma");
        let r = PATCH_RADIUS as f64;
        let mut draw = || normal.sample(&mut rng).clamp(-r, r).round();
        std::array::from_fn(|_| [(draw(), draw()), (draw(), draw())])
    })
}

/// Rotated binary tests around each keypoint on the pre-smoothed pyramid
/// level it was found on.
pub fn describe(img: &GrayImage, keypoints: &[Keypoint]) -> Described {
    describe_with(img, keypoints, &DetectorConfig::default())
}

pub fn describe_with(img: &GrayImage, keypoints: &[Keypoint], cfg: &DetectorConfig) -> Described {
    let levels: Vec<(GrayImage, f64)> = pyramid(img, cfg.levels, cfg.scale_factor)
        .into_iter()
        .map(|l| (gaussian_blur(&l.image, DESCRIBE_BLUR), l.scale))
        .collect();
    let pat = pattern();
    let mut out = Described::default();
    for (i, kp) in keypoints.iter().enumerate() {
        let Some((im, scale)) = levels.get(kp.level) else {
            out.dropped.push(i);
            continue;
        };
        let (cx, cy) = (to_level(kp.x, *scale), to_level(kp.y, *scale));
        let (s, c) = kp.orientation.sin_cos();
        let at = |(px, py): (f64, f64)| Point2::new(cx + c * px - s * py, cy + s * px + c * py);
        let (wmax, hmax) = ((im.width() - 1) as f64, (im.height() - 1) as f64);
        let inside = pat.iter().flatten().all(|&p| {
            let q = at(p);
            q.u >= 0.0 && q.v >= 0.0 && q.u <= wmax && q.v <= hmax
        });
        if !inside {
            out.dropped.push(i);
            continue;
        }
        let mut bits = [0u64; 4];
        for (b, [p, q]) in pat.iter().enumerate() {
            if im.bilinear_sample(at(*p)) < im.bilinear_sample(at(*q)) {
                bits[b / 64] |= 1 << (b % 64);
            }
        }
        out.descriptors.push(BinaryDescriptor(bits));
        out.kept.push(i);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::synthetic::render_scene;
    use crate::rng::Rng64;
    use rand::SeedableRng;

    #[test]
    fn constant_image_has_no_corners() {
        assert!(detect(&GrayImage::filled(64, 64, 0.5), 100).is_empty());
    }

    #[test]
    fn bright_square_corners() {
        let img = GrayImage::from_fn(40, 40, |x, y| if (18..23).contains(&x) && (18..23).contains(&y) { 1.0 } else { 0.0 });
        let kps = detect_with(
            &img,
            50,
            &DetectorConfig {
                levels: 1,
                ..DetectorConfig::default()
            },
        );
        assert!(!kps.is_empty());
        let corners = [(18.0, 18.0), (22.0, 18.0), (22.0, 22.0), (18.0, 22.0)];
        for k in &kps {
            let near = corners.iter().any(|&(cx, cy)| (k.x - cx).abs() <= 2.0 && (k.y - cy).abs() <= 2.0);
            assert!(near, "{k:?} away from the square corners");
        }
        for &(cx, cy) in &corners {
            assert!(kps.iter().any(|k| (k.x - cx).abs() <= 2.0 && (k.y - cy).abs() <= 2.0));
        }
    }

    #[test]
    fn count_is_capped() {
        let img = render_scene(128, 96, &mut Rng64::seed_from_u64(4));
        let all = detect(&img, usize::MAX);
        assert!(all.len() > 20);
        assert_eq!(detect(&img, 10).len(), 10);
        assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn descriptor_is_rotation_robust() {
        let img = render_scene(96, 96, &mut Rng64::seed_from_u64(9));
        // Rotate 90 degrees clockwise: (x, y) -> (h - 1 - y, x).
        let n = 96;
        let rot = GrayImage::from_fn(n, n, |x, y| img.get(y, n - 1 - x));
        let kp = Keypoint {
            x: 40.0,
            y: 52.0,
            score: 1.0,
            orientation: 0.0,
            level: 0,
        };
        let lvl = |im: &GrayImage, k: Keypoint| Keypoint {
            orientation: orientation(im, k.x as usize, k.y as usize),
            ..k
        };
        let a = lvl(&img, kp);
        let b = lvl(
            &rot,
            Keypoint {
                x: (n - 1) as f64 - kp.y,
                y: kp.x,
                ..kp
            },
        );
        let da = describe(&img, &[a]);
        let db = describe(&rot, &[b]);
        assert_eq!(da.kept, vec![0]);
        assert_eq!(db.kept, vec![0]);
        assert!(da.descriptors[0].hamming(&db.descriptors[0]) < 64);
        assert_eq!(da, describe(&img, &[a]));
    }

    #[test]
    fn border_keypoints_are_dropped() {
        let img = render_scene(64, 64, &mut Rng64::seed_from_u64(1));
        let kp = |x, y| Keypoint {
            x,
            y,
            score: 1.0,
            orientation: 0.3,
            level: 0,
        };
        let d = describe(&img, &[kp(2.0, 30.0), kp(32.0, 32.0), kp(60.0, 61.0)]);
        assert_eq!(d.kept, vec![1]);
        assert_eq!(d.dropped, vec![0, 2]);
    }
}
