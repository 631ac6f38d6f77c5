//! Grayscale rasters: sampling, warping, cropping, resizing and the
//! augmentation effects used during pair generation.
//!
//! Pixel `(x, y)` has its center at continuous coordinate `(x + 0.5, y + 0.5)`.
//! [`GrayImage::bilinear_sample`] works in pixel-index coordinates (integer
//! coordinates hit pixel centers); [`warp`] and [`resize_bilinear`] convert
//! between the two conventions.

pub mod pnm;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Homography3x3, PatchFrame, Point2};

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("buffer length {len} does not match {width}x{height}")]
    BufferSize { width: usize, height: usize, len: usize },
    #[error("image dimensions must be positive, got {0}x{1}")]
    EmptyImage(usize, usize),
    #[error("pixel value {0} outside [0, 1]")]
    PixelRange(f32),
    #[error("crop {side}x{side} at ({x}, {y}) is outside the {width}x{height} image")]
    CropOutOfBounds {
        x: f64,
        y: f64,
        side: usize,
        width: usize,
        height: usize,
    },
    #[error("crop origin ({0}, {1}) is not on the pixel grid")]
    CropNotIntegral(f64, f64),
    #[error("malformed image file: {0}")]
    Format(String),
    #[error("unsupported image format: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// Single-channel raster with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::EmptyImage(width, height));
        }
        if pixels.len() != width * height {
            return Err(ImagingError::BufferSize {
                width,
                height,
                len: pixels.len(),
            });
        }
        if let Some(&p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(ImagingError::PixelRange(p));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        Self {
            width,
            height,
            pixels: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    /// Builds an image from `f(x, y)`; values are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    /// Decodes 8-bit intensities (`v / 255`).
    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }

    /// Encodes as `round(p * 255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| quantize_u8(p)).collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.pixels[y * self.width + x] = value.clamp(0.0, 1.0);
    }

    /// Bilinear interpolation in pixel-index coordinates; points outside
    /// `[0, w-1] x [0, h-1]` read as 0.
    pub fn bilinear_sample(&self, p: Point2) -> f32 {
        let (x, y) = (p.u, p.v);
        let (wmax, hmax) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if !(x >= 0.0 && x <= wmax && y >= 0.0 && y <= hmax) {
            return 0.0;
        }
        self.interpolate(x, y) as f32
    }

    /// Bilinear interpolation with coordinates clamped into the image.
    fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        self.interpolate(x, y)
    }

    #[inline]
    fn interpolate(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p00 = self.get(x0, y0) as f64;
        let p10 = self.get(x1, y0) as f64;
        let p01 = self.get(x0, y1) as f64;
        let p11 = self.get(x1, y1) as f64;
        let top = p00 * (1.0 - fx) + p10 * fx;
        let bottom = p01 * (1.0 - fx) + p11 * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

#[inline]
pub(crate) fn quantize_u8(p: f32) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Value of output pixel `(x, y)` when pulling from `img` through `map_out_to_in`.
#[inline]
fn warp_pixel(img: &GrayImage, map_out_to_in: &Homography3x3, x: usize, y: usize) -> f32 {
    let center = Point2::new(x as f64 + 0.5, y as f64 + 0.5);
    match map_out_to_in.apply(center) {
        Ok(src) => img.bilinear_sample(Point2::new(src.u - 0.5, src.v - 0.5)),
        Err(_) => 0.0,
    }
}

/// Inverse-maps every output pixel through `map_out_to_in` and samples `img`.
pub fn warp(img: &GrayImage, map_out_to_in: &Homography3x3, out_w: usize, out_h: usize) -> GrayImage {
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            pixels.push(warp_pixel(img, map_out_to_in, x, y));
        }
    }
    GrayImage {
        width: out_w,
        height: out_h,
        pixels,
    }
}

/// Same as `crop(&warp(img, map, w, h), frame)` without warping the whole image.
pub fn warp_region(img: &GrayImage, map_out_to_in: &Homography3x3, frame: &PatchFrame) -> Result<GrayImage> {
    let (x0, y0) = frame_origin(frame, img.width, img.height)?;
    let mut pixels = Vec::with_capacity(frame.side * frame.side);
    for y in y0..y0 + frame.side {
        for x in x0..x0 + frame.side {
            pixels.push(warp_pixel(img, map_out_to_in, x, y));
        }
    }
    Ok(GrayImage {
        width: frame.side,
        height: frame.side,
        pixels,
    })
}

fn frame_origin(frame: &PatchFrame, width: usize, height: usize) -> Result<(usize, usize)> {
    let (ox, oy) = (frame.origin.u, frame.origin.v);
    if ox.fract() != 0.0 || oy.fract() != 0.0 {
        return Err(ImagingError::CropNotIntegral(ox, oy));
    }
    if ox < 0.0
        || oy < 0.0
        || frame.side == 0
        || ox as usize + frame.side > width
        || oy as usize + frame.side > height
    {
        return Err(ImagingError::CropOutOfBounds {
            x: ox,
            y: oy,
            side: frame.side,
            width,
            height,
        });
    }
    Ok((ox as usize, oy as usize))
}

pub fn crop(img: &GrayImage, frame: &PatchFrame) -> Result<GrayImage> {
    let (x0, y0) = frame_origin(frame, img.width, img.height)?;
    let side = frame.side;
    let mut pixels = Vec::with_capacity(side * side);
    for y in y0..y0 + side {
        let row = y * img.width;
        pixels.extend_from_slice(&img.pixels[row + x0..row + x0 + side]);
    }
    Ok(GrayImage {
        width: side,
        height: side,
        pixels,
    })
}

/// Bilinear resampling with half-pixel centers (`src = (i + 0.5) * in/out - 0.5`).
pub fn resize_bilinear(img: &GrayImage, new_w: usize, new_h: usize) -> GrayImage {
    assert!(new_w > 0 && new_h > 0, "resize target must be non-empty");
    if new_w == img.width && new_h == img.height {
        return img.clone();
    }
    let sx = img.width as f64 / new_w as f64;
    let sy = img.height as f64 / new_h as f64;
    let mut pixels = Vec::with_capacity(new_w * new_h);
    for y in 0..new_h {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..new_w {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            pixels.push(img.sample_clamped(src_x, src_y).clamp(0.0, 1.0) as f32);
        }
    }
    GrayImage {
        width: new_w,
        height: new_h,
        pixels,
    }
}

/// Luma conversion with weights 0.299, 0.587, 0.114.
pub fn to_grayscale(width: usize, height: usize, rgb: &[[f32; 3]]) -> Result<GrayImage> {
    if rgb.len() != width * height {
        return Err(ImagingError::BufferSize {
            width,
            height,
            len: rgb.len(),
        });
    }
    let pixels = rgb
        .iter()
        .map(|&[r, g, b]| {
            let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
            y.clamp(0.0, 1.0) as f32
        })
        .collect();
    GrayImage::new(width, height, pixels)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|x| *x /= sum);
    k
}

/// Separable Gaussian blur truncated at 3σ with clamp-to-edge borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let mut tmp = vec![0.0f64; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = (x + i as isize - r).clamp(0, w - 1);
                acc += kv * img.pixels[(y * w + xx) as usize] as f64;
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut pixels = vec![0.0f32; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = (y + i as isize - r).clamp(0, h - 1);
                acc += kv * tmp[(yy * w + x) as usize];
            }
            pixels[(y * w + x) as usize] = acc.clamp(0.0, 1.0) as f32;
        }
    }
    GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

/// Adds i.i.d. Gaussian noise and clamps back into `[0, 1]`.
pub fn add_gaussian_noise(img: &GrayImage, sigma: f64, rng: &mut impl Rng) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let pixels = img
        .pixels
        .iter()
        .map(|&p| (p as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32)
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

/// Augmentation parameters applied during pair generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Gaussian blur sigma in pixels, applied to the source image.
    pub blur_sigma: f64,
    /// Additive noise sigma in intensity units, applied per patch.
    pub noise_sigma: f64,
    /// Number of occluding rectangles per patch.
    pub occlusion_count: usize,
    /// Largest rectangle side as a fraction of the patch side.
    pub occlusion_max_side: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 0.0,
            noise_sigma: 0.0,
            occlusion_count: 0,
            occlusion_max_side: 0.25,
        }
    }
}

impl AugmentConfig {
    pub fn is_valid(&self) -> bool {
        self.blur_sigma >= 0.0
            && self.noise_sigma >= 0.0
            && self.occlusion_max_side > 0.0
            && self.occlusion_max_side <= 1.0
    }
}

/// In-paints `cfg.occlusion_count` axis-aligned rectangles of uniform random
/// intensity.
pub fn occlude(img: &GrayImage, cfg: &AugmentConfig, rng: &mut impl Rng) -> GrayImage {
    let mut out = img.clone();
    let max_side = ((cfg.occlusion_max_side * img.width.min(img.height) as f64).round() as usize).max(1);
    for _ in 0..cfg.occlusion_count {
        let rw = rng.random_range(1..=max_side);
        let rh = rng.random_range(1..=max_side);
        let x0 = rng.random_range(0..=img.width - rw.min(img.width));
        let y0 = rng.random_range(0..=img.height - rh.min(img.height));
        let value: f32 = rng.random();
        for y in y0..(y0 + rh).min(img.height) {
            for x in x0..(x0 + rw).min(img.width) {
                out.set(x, y, value);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn smooth_image(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as f32, y as f32);
            0.5 + 0.25 * (x * 0.11).sin() * (y * 0.07).cos() + 0.2 * ((x + y) * 0.05).sin()
        })
    }

    #[test]
    fn constructor_validates() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(0, 2, vec![]).is_err());
        assert!(matches!(
            GrayImage::new(1, 1, vec![1.5]),
            Err(ImagingError::PixelRange(_))
        ));
    }

    #[test]
    fn bilinear_sample_examples() {
        let img = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(img.bilinear_sample(Point2::new(1.0, 0.0)), 1.0);
        assert_eq!(img.bilinear_sample(Point2::new(0.5, 0.0)), 0.5);
        assert_eq!(img.bilinear_sample(Point2::new(-5.0, -5.0)), 0.0);
        assert_eq!(img.bilinear_sample(Point2::new(1.01, 0.0)), 0.0);
    }

    #[test]
    fn warp_identity_is_bit_exact() {
        let img = smooth_image(37, 23);
        assert_eq!(warp(&img, &Homography3x3::identity(), 37, 23), img);
    }

    #[test]
    fn warp_integer_translation_shifts_with_zero_fill() {
        let img = smooth_image(20, 10);
        let out = warp(&img, &Homography3x3::translation(3.0, 2.0), 20, 10);
        for y in 0..10 {
            for x in 0..20 {
                let expected = if x + 3 < 20 && y + 2 < 10 { img.get(x + 3, y + 2) } else { 0.0 };
                assert_eq!(out.get(x, y), expected);
            }
        }
    }

    #[test]
    fn warp_round_trip_interior() {
        let img = smooth_image(96, 96);
        let frame = PatchFrame::new(Point2::new(16.0, 16.0), 64).unwrap();
        let d = crate::geometry::FourPointDelta::new([3.0, -2.0, -4.0, 1.5, 2.5, 3.0, -1.0, -3.5]);
        let h = crate::geometry::four_point_to_matrix(&d, &frame).unwrap();
        let there = warp(&img, &h, 96, 96);
        let back = warp(&there, &h.invert().unwrap(), 96, 96);
        let mut err = 0.0;
        let mut n = 0;
        for y in 24..72 {
            for x in 24..72 {
                err += (back.get(x, y) - img.get(x, y)).abs() as f64;
                n += 1;
            }
        }
        assert!(err / (n as f64) < 0.02, "mean abs error {}", err / n as f64);
    }

    #[test]
    fn warp_region_equals_crop_of_warp() {
        let img = smooth_image(64, 48);
        let frame = PatchFrame::new(Point2::new(10.0, 7.0), 24).unwrap();
        let d = crate::geometry::FourPointDelta::new([1.0, 2.0, -3.0, 0.5, 2.0, -1.0, 0.0, 3.0]);
        let h = crate::geometry::four_point_to_matrix(&d, &frame).unwrap();
        let full = crop(&warp(&img, &h, 64, 48), &frame).unwrap();
        assert_eq!(warp_region(&img, &h, &frame).unwrap(), full);
    }

    #[test]
    fn crop_examples() {
        let img = smooth_image(30, 20);
        let full = GrayImage::from_fn(20, 20, |x, y| img.get(x, y));
        assert_eq!(crop(&img, &PatchFrame::local(20).unwrap()).unwrap(), full);
        let c = crop(&img, &PatchFrame::new(Point2::new(7.0, 3.0), 9).unwrap()).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                assert_eq!(c.get(x, y), img.pixels()[(y + 3) * 30 + x + 7]);
            }
        }
        let bad = PatchFrame {
            origin: Point2::new(0.0, 0.0),
            side: 0,
        };
        assert!(crop(&img, &bad).is_err());
        let outside = PatchFrame::new(Point2::new(25.0, 0.0), 9).unwrap();
        assert!(matches!(crop(&img, &outside), Err(ImagingError::CropOutOfBounds { .. })));
        let frac = PatchFrame::new(Point2::new(1.5, 0.0), 4).unwrap();
        assert!(matches!(crop(&img, &frac), Err(ImagingError::CropNotIntegral(..))));
    }

    #[test]
    fn resize_examples() {
        let img = smooth_image(13, 9);
        assert_eq!(resize_bilinear(&img, 13, 9), img);
        let c = resize_bilinear(&GrayImage::filled(10, 10, 0.3), 7, 4);
        assert!(c.pixels().iter().all(|&p| (p - 0.3).abs() < 1e-7));
        let checker = GrayImage::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(resize_bilinear(&checker, 1, 1).pixels(), &[0.5]);
    }

    #[test]
    fn grayscale_examples() {
        let g = to_grayscale(3, 1, &[[1.0, 1.0, 1.0], [1.0, 0.0, 0.0], [0.4, 0.4, 0.4]]).unwrap();
        assert!((g.get(0, 0) - 1.0).abs() < 1e-6);
        assert!((g.get(1, 0) - 0.299).abs() < 1e-7);
        assert!((g.get(2, 0) - 0.4).abs() < 1e-6);
    }

    #[test]
    fn blur_examples() {
        let img = smooth_image(20, 20);
        assert_eq!(gaussian_blur(&img, 0.0), img);
        let c = gaussian_blur(&GrayImage::filled(15, 11, 0.7), 2.0);
        assert!(c.pixels().iter().all(|&p| (p - 0.7).abs() < 1e-6));
    }

    #[test]
    fn augmentations_are_seed_deterministic_and_bounded() {
        let img = smooth_image(32, 32);
        let noisy = |seed| add_gaussian_noise(&img, 0.1, &mut Xoshiro256PlusPlus::seed_from_u64(seed));
        assert_eq!(noisy(5).to_u8(), noisy(5).to_u8());
        assert_ne!(noisy(5).to_u8(), noisy(6).to_u8());
        assert!(noisy(5).pixels().iter().all(|p| (0.0..=1.0).contains(p)));

        let cfg = AugmentConfig {
            occlusion_count: 3,
            occlusion_max_side: 0.5,
            ..Default::default()
        };
        let occ = |seed| occlude(&img, &cfg, &mut Xoshiro256PlusPlus::seed_from_u64(seed));
        assert_eq!(occ(9), occ(9));
        assert_ne!(occ(9), img);
        assert_eq!(
            add_gaussian_noise(&img, 0.0, &mut Xoshiro256PlusPlus::seed_from_u64(1)),
            img
        );
    }
}
