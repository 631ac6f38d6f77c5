//! Binary PGM (P5) and PPM (P6) codecs, 8-bit only.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{quantize_u8, to_grayscale, GrayImage, ImagingError, Result};

/// 8-bit RGB raster used for overlays.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    pub fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.data[y as usize * self.width + x as usize] = c;
        }
    }

    /// Luma-weighted grayscale copy.
    pub fn to_gray(&self) -> GrayImage {
        let rgb: Vec<[f32; 3]> = self
            .data
            .iter()
            .map(|c| c.map(|v| v as f32 / 255.0))
            .collect();
        to_grayscale(self.width, self.height, &rgb).expect("consistent buffer")
    }
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(ImagingError::Format("file too short".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(ImagingError::Format("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text
            .parse()
            .map_err(|_| ImagingError::Format(format!("bad header field {text:?}")))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(ImagingError::Format("missing raster separator".into()));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(ImagingError::EmptyImage(width, height));
    }
    if maxval == 0 || maxval > 255 {
        return Err(ImagingError::Unsupported(format!("maxval {maxval}")));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

fn raster<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8]> {
    let n = h.width * h.height * channels;
    bytes
        .get(h.data_start..h.data_start + n)
        .ok_or_else(|| ImagingError::Format(format!("raster truncated, expected {n} bytes")))
}

/// Decodes a P5 or P6 buffer to grayscale (P6 via luma weights).
pub fn decode_pnm(bytes: &[u8]) -> Result<GrayImage> {
    let h = parse_header(bytes)?;
    let scale = h.maxval as f32;
    match &h.magic {
        b"P5" => {
            let data = raster(bytes, &h, 1)?;
            GrayImage::new(
                h.width,
                h.height,
                data.iter().map(|&b| (b as f32 / scale).min(1.0)).collect(),
            )
        }
        b"P6" => {
            let data = raster(bytes, &h, 3)?;
            let rgb: Vec<[f32; 3]> = data
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]].map(|v| (v as f32 / scale).min(1.0)))
                .collect();
            to_grayscale(h.width, h.height, &rgb)
        }
        m => Err(ImagingError::Unsupported(format!(
            "magic {:?}",
            String::from_utf8_lossy(m)
        ))),
    }
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let bytes = fs::read(path)?;
    if !bytes.starts_with(b"P5") {
        return Err(ImagingError::Unsupported("expected binary PGM (P5)".into()));
    }
    decode_pnm(&bytes)
}

/// Encodes as P5 with `round(p * 255)` intensities.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&p| quantize_u8(p)));
    out
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(img))?;
    Ok(())
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().flatten());
    fs::write(path, out)?;
    Ok(())
}

/// True for extensions [`load_gray`] understands.
pub fn is_supported(path: &Path) -> bool {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm" | "ppm" | "pnm") => true,
        Some("png" | "jpg" | "jpeg") => cfg!(feature = "image-formats"),
        _ => false,
    }
}

/// Loads any supported image file as grayscale.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" | "ppm" | "pnm" => decode_pnm(&fs::read(path)?),
        #[cfg(feature = "image-formats")]
        "png" | "jpg" | "jpeg" => {
            let rgb = image::open(path)
                .map_err(|e| ImagingError::Format(e.to_string()))?
                .to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let px: Vec<[f32; 3]> = rgb.pixels().map(|p| p.0.map(|v| v as f32 / 255.0)).collect();
            to_grayscale(w, h, &px)
        }
        other => Err(ImagingError::Unsupported(format!("extension {other:?}"))),
    }
}
