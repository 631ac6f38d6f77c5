//! Labeled pair generation and the on-disk dataset format.
//!
//! One training example is made by cropping a square patch A from a corpus
//! image, perturbing its four corners by offsets drawn uniformly from
//! `[-rho, rho]`, and cropping patch B at the same position from the image
//! warped by the resulting homography. The label is the 4-point offset.
//!
//! A dataset directory holds `samples.bin` (fixed-size little-endian records:
//! patch A bytes, patch B bytes, 8 x f32 label) and `manifest.json`.

pub mod synthetic;

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{self, FourPointDelta, GeometryError, PatchFrame, Point2};
use crate::imaging::{self, pnm, AugmentConfig, GrayImage, ImagingError};
use crate::rng::{record_rng, Rng64};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.bin";
pub const GENERATOR_NAME: &str = "xoshiro256++/seed_from_u64(seed^index)";

const GEN_CHUNK: usize = 256;
/// Corpora whose resized pixels fit under this count stay cached in memory.
const CACHE_PIXEL_BUDGET: usize = 128 << 20;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("image {width}x{height} too small for patch {patch} with margin {margin}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        patch: usize,
        margin: usize,
    },
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("corpus {0} contains no usable images")]
    EmptyCorpus(PathBuf),
    #[error("dataset version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("dataset is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatagenError>;

/// Pair-generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub patch_size: usize,
    /// Largest absolute corner offset, pixels.
    pub rho: f64,
    /// Corpus images are resized to `(width, height)` first; `None` keeps native size.
    pub resize_to: Option<(usize, usize)>,
    /// Minimum distance between the patch and the image border.
    pub border_margin: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl GenConfig {
    /// 128 px patches, rho 32, images at 320x240.
    pub fn train(seed: u64) -> Self {
        Self {
            patch_size: 128,
            rho: 32.0,
            resize_to: Some((320, 240)),
            border_margin: 32,
            augment: AugmentConfig::default(),
            seed,
        }
    }

    /// 256 px patches, rho 64, images at 640x480.
    pub fn test(seed: u64) -> Self {
        Self {
            patch_size: 256,
            rho: 64.0,
            resize_to: Some((640, 480)),
            border_margin: 64,
            augment: AugmentConfig::default(),
            seed,
        }
    }

    /// Quarter-scale training preset: 32 px patches, rho 8, images at 80x60.
    pub fn desk(seed: u64) -> Self {
        Self {
            patch_size: 32,
            rho: 8.0,
            resize_to: Some((80, 60)),
            border_margin: 8,
            augment: AugmentConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DatagenError::InvalidConfig(m));
        if self.patch_size < 2 {
            return bad(format!("patch_size {} < 2", self.patch_size));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad(format!("rho {} must be finite and non-negative", self.rho));
        }
        if self.rho > self.border_margin as f64 {
            return bad(format!(
                "rho {} exceeds border margin {}",
                self.rho, self.border_margin
            ));
        }
        if let Some((w, h)) = self.resize_to {
            if self.patch_size + 2 * self.border_margin > w.min(h) {
                return bad(format!(
                    "patch {} + 2*margin {} does not fit in {w}x{h}",
                    self.patch_size, self.border_margin
                ));
            }
        }
        if !self.augment.is_valid() {
            return bad(format!("augmentation out of range: {:?}", self.augment));
        }
        Ok(())
    }

    fn min_side(&self) -> usize {
        self.patch_size + 2 * self.border_margin
    }
}

/// One generated example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTriplet {
    pub patch_a: GrayImage,
    pub patch_b: GrayImage,
    pub label: FourPointDelta,
    /// Placement in the source image; not persisted, so `None` after loading.
    pub frame: Option<PatchFrame>,
}

impl TrainingTriplet {
    /// Checks that the homography rebuilt from the label moves the frame
    /// corners exactly onto `corner + label`. Returns the worst error in px.
    pub fn corner_consistency_error(&self) -> Result<f64> {
        let frame = match self.frame {
            Some(f) => f,
            None => PatchFrame::local(self.patch_a.width())?,
        };
        corner_consistency_error(&self.label, &frame)
    }
}

/// Largest distance between `H(corner_i)` and `corner_i + label_i`, where `H`
/// is rebuilt from the label.
pub fn corner_consistency_error(label: &FourPointDelta, frame: &PatchFrame) -> Result<f64> {
    let h = geometry::four_point_to_matrix(label, frame)?;
    let targets = label.displaced_corners(frame);
    let mut worst = 0.0_f64;
    for (c, t) in frame.corners().iter().zip(&targets) {
        worst = worst.max(h.apply(*c)?.distance(t));
    }
    Ok(worst)
}

/// Generates one example from `img` (already grayscale and resized).
///
/// Draw order: patch origin x, origin y, the 8 offsets, then one sub-seed for
/// noise and one for occlusion. Offsets are rounded to f32 before the
/// homography is built so the persisted label describes the warp exactly.
pub fn generate_triplet(img: &GrayImage, cfg: &GenConfig, rng: &mut impl Rng) -> Result<TrainingTriplet> {
    let (w, h) = (img.width(), img.height());
    if w < cfg.min_side() || h < cfg.min_side() {
        return Err(DatagenError::ImageTooSmall {
            width: w,
            height: h,
            patch: cfg.patch_size,
            margin: cfg.border_margin,
        });
    }
    let m = cfg.border_margin;
    let ox = rng.random_range(m..=w - m - cfg.patch_size);
    let oy = rng.random_range(m..=h - m - cfg.patch_size);
    let frame = PatchFrame::new(Point2::new(ox as f64, oy as f64), cfg.patch_size)?;

    let mut d = [0.0f64; 8];
    for x in d.iter_mut() {
        let v: f64 = if cfg.rho > 0.0 {
            rng.random_range(-cfg.rho..=cfg.rho)
        } else {
            0.0
        };
        *x = (v as f32 as f64).clamp(-cfg.rho, cfg.rho);
    }
    let label = FourPointDelta::new(d);
    let noise_seed = rng.next_u64();
    let occlusion_seed = rng.next_u64();

    let blurred;
    let source = if cfg.augment.blur_sigma > 0.0 {
        blurred = imaging::gaussian_blur(img, cfg.augment.blur_sigma);
        &blurred
    } else {
        img
    };

    let h_ab = geometry::four_point_to_matrix(&label, &frame)?;
    let mut patch_a = imaging::crop(source, &frame)?;
    let mut patch_b = imaging::warp_region(source, &h_ab, &frame)?;

    let aug = &cfg.augment;
    if aug.noise_sigma > 0.0 {
        let mut r = Rng64::seed_from_u64(noise_seed);
        patch_a = imaging::add_gaussian_noise(&patch_a, aug.noise_sigma, &mut r);
        patch_b = imaging::add_gaussian_noise(&patch_b, aug.noise_sigma, &mut r);
    }
    if aug.occlusion_count > 0 {
        let mut r = Rng64::seed_from_u64(occlusion_seed);
        patch_a = imaging::occlude(&patch_a, aug, &mut r);
        patch_b = imaging::occlude(&patch_b, aug, &mut r);
    }

    Ok(TrainingTriplet {
        patch_a,
        patch_b,
        label,
        frame: Some(frame),
    })
}

/// Checksum entry for one corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub file: String,
    pub sha256: String,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub count: usize,
    pub patch_size: usize,
    pub rho: f64,
    pub seed: u64,
    pub generator: String,
    pub config: GenConfig,
    pub sources: Vec<SourceEntry>,
    pub skipped: usize,
}

impl DatasetManifest {
    pub fn record_size(&self) -> usize {
        record_size(self.patch_size)
    }
}

pub fn record_size(patch_size: usize) -> usize {
    2 * patch_size * patch_size + 8 * 4
}

/// Encodes a triplet as one `samples.bin` record.
pub fn encode_record(t: &TrainingTriplet, out: &mut Vec<u8>) {
    out.extend(t.patch_a.to_u8());
    out.extend(t.patch_b.to_u8());
    for x in t.label.d {
        out.extend((x as f32).to_le_bytes());
    }
}

fn decode_record(bytes: &[u8], patch: usize) -> Result<TrainingTriplet> {
    let n = patch * patch;
    let patch_a = GrayImage::from_u8(patch, patch, &bytes[..n])?;
    let patch_b = GrayImage::from_u8(patch, patch, &bytes[n..2 * n])?;
    let mut d = [0.0; 8];
    for (i, x) in d.iter_mut().enumerate() {
        let o = 2 * n + 4 * i;
        let v = f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(DatagenError::Corrupt(format!("non-finite label {v}")));
        }
        *x = v as f64;
    }
    Ok(TrainingTriplet {
        patch_a,
        patch_b,
        label: FourPointDelta::new(d),
        frame: None,
    })
}

enum CorpusImages {
    Memory(Vec<Arc<GrayImage>>),
    Files(Vec<PathBuf>),
}

/// Image corpus prepared for generation: grayscale, resized, filtered.
pub struct Corpus {
    images: CorpusImages,
    resize_to: Option<(usize, usize)>,
    pub sources: Vec<SourceEntry>,
    pub skipped: usize,
}

impl Corpus {
    /// Scans `dir` for supported images in file-name order, checksums them and
    /// drops the ones too small for `cfg`.
    pub fn from_dir(dir: &Path, cfg: &GenConfig) -> Result<Self> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && pnm::is_supported(p))
            .collect();
        files.sort();

        let mut kept = Vec::new();
        let mut cached = Vec::new();
        let mut sources = Vec::new();
        let mut skipped = 0;
        let mut pixels = 0usize;
        for path in files {
            let bytes = fs::read(&path)?;
            let img = prepare(pnm::load_gray(&path)?, cfg.resize_to);
            if img.width() < cfg.min_side() || img.height() < cfg.min_side() {
                skipped += 1;
                continue;
            }
            pixels += img.width() * img.height();
            if pixels <= CACHE_PIXEL_BUDGET {
                cached.push(Arc::new(img));
            }
            sources.push(SourceEntry {
                file: path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                sha256: hex(&Sha256::digest(&bytes)),
            });
            kept.push(path);
        }
        if skipped > 0 {
            log::warn!("skipped {skipped} corpus image(s) smaller than {} px", cfg.min_side());
        }
        if kept.is_empty() {
            return Err(DatagenError::EmptyCorpus(dir.to_path_buf()));
        }
        let images = if cached.len() == kept.len() {
            CorpusImages::Memory(cached)
        } else {
            CorpusImages::Files(kept)
        };
        Ok(Self {
            images,
            resize_to: cfg.resize_to,
            sources,
            skipped,
        })
    }

    /// Wraps in-memory images; they are resized per `cfg` and filtered.
    pub fn from_images(images: Vec<GrayImage>, cfg: &GenConfig) -> Result<Self> {
        let total = images.len();
        let kept: Vec<Arc<GrayImage>> = images
            .into_iter()
            .map(|img| prepare(img, cfg.resize_to))
            .filter(|img| img.width() >= cfg.min_side() && img.height() >= cfg.min_side())
            .map(Arc::new)
            .collect();
        if kept.is_empty() {
            return Err(DatagenError::EmptyCorpus(PathBuf::from("<memory>")));
        }
        let sources = kept
            .iter()
            .enumerate()
            .map(|(i, img)| {
                let mut hasher = Sha256::new();
                hasher.update(img.to_u8());
                SourceEntry {
                    file: format!("memory:{i}"),
                    sha256: hex(&hasher.finalize()),
                }
            })
            .collect();
        Ok(Self {
            skipped: total - kept.len(),
            images: CorpusImages::Memory(kept),
            resize_to: cfg.resize_to,
            sources,
        })
    }

    pub fn len(&self) -> usize {
        match &self.images {
            CorpusImages::Memory(v) => v.len(),
            CorpusImages::Files(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn image(&self, index: usize) -> Result<Arc<GrayImage>> {
        match &self.images {
            CorpusImages::Memory(v) => Ok(v[index].clone()),
            CorpusImages::Files(v) => Ok(Arc::new(prepare(pnm::load_gray(&v[index])?, self.resize_to))),
        }
    }

    /// Record `index` of the dataset defined by `(self, cfg)`.
    pub fn triplet(&self, cfg: &GenConfig, index: u64) -> Result<TrainingTriplet> {
        let img = self.image((index % self.len() as u64) as usize)?;
        generate_triplet(&img, cfg, &mut record_rng(cfg.seed, index))
    }

    /// Records `range`, generated in parallel; identical to sequential output.
    pub fn triplets(&self, cfg: &GenConfig, range: std::ops::Range<u64>) -> Result<Vec<TrainingTriplet>> {
        range
            .into_par_iter()
            .map(|i| self.triplet(cfg, i))
            .collect()
    }
}

fn prepare(img: GrayImage, resize_to: Option<(usize, usize)>) -> GrayImage {
    match resize_to {
        Some((w, h)) => imaging::resize_bilinear(&img, w, h),
        None => img,
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Generates `n` records from the images in `corpus_dir` into `out_dir`.
pub fn generate_dataset(corpus_dir: &Path, cfg: &GenConfig, out_dir: &Path, n: usize) -> Result<DatasetManifest> {
    cfg.validate()?;
    let corpus = Corpus::from_dir(corpus_dir, cfg)?;
    write_dataset(&corpus, cfg, out_dir, n)
}

/// Writes records `0..n` of `corpus` under `cfg`; the manifest is written last.
pub fn write_dataset(corpus: &Corpus, cfg: &GenConfig, out_dir: &Path, n: usize) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let _ = fs::remove_file(out_dir.join(MANIFEST_FILE));
    let mut out = BufWriter::new(fs::File::create(out_dir.join(SAMPLES_FILE))?);
    let mut buf = Vec::with_capacity(GEN_CHUNK * record_size(cfg.patch_size));
    let mut start = 0u64;
    while start < n as u64 {
        let end = (start + GEN_CHUNK as u64).min(n as u64);
        buf.clear();
        for t in corpus.triplets(cfg, start..end)? {
            encode_record(&t, &mut buf);
        }
        out.write_all(&buf)?;
        start = end;
    }
    out.flush()?;
    drop(out);

    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        count: n,
        patch_size: cfg.patch_size,
        rho: cfg.rho,
        seed: cfg.seed,
        generator: GENERATOR_NAME.to_string(),
        config: *cfg,
        sources: corpus.sources.clone(),
        skipped: corpus.skipped,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(out_dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.version != FORMAT_VERSION {
        return Err(DatagenError::Version {
            found: m.version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(m)
}

/// Streaming reader over a dataset directory.
pub struct DatasetReader {
    manifest: DatasetManifest,
    reader: BufReader<fs::File>,
    next: usize,
    buf: Vec<u8>,
}

impl DatasetReader {
    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }
}

impl Iterator for DatasetReader {
    type Item = Result<TrainingTriplet>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.manifest.count {
            return None;
        }
        self.next += 1;
        if let Err(e) = self.reader.read_exact(&mut self.buf) {
            self.next = self.manifest.count;
            return Some(Err(DatagenError::Corrupt(format!("truncated record: {e}"))));
        }
        Some(decode_record(&self.buf, self.manifest.patch_size))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.manifest.count - self.next;
        (left, Some(left))
    }
}

/// Opens a dataset, checking version and file size before yielding records.
pub fn load_dataset(dir: &Path) -> Result<DatasetReader> {
    let manifest = read_manifest(dir)?;
    let file = fs::File::open(dir.join(SAMPLES_FILE))?;
    let expected = (manifest.count * manifest.record_size()) as u64;
    let actual = file.metadata()?.len();
    if actual != expected {
        return Err(DatagenError::Corrupt(format!(
            "{SAMPLES_FILE} has {actual} bytes, manifest implies {expected}"
        )));
    }
    let buf = vec![0u8; manifest.record_size()];
    Ok(DatasetReader {
        manifest,
        reader: BufReader::new(file),
        next: 0,
        buf,
    })
}

/// Compact in-memory pair storage for training (8-bit patches).
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub a: Vec<u8>,
    pub b: Vec<u8>,
    pub label: [f32; 8],
}

impl PairRecord {
    pub fn from_triplet(t: &TrainingTriplet) -> Self {
        Self {
            a: t.patch_a.to_u8(),
            b: t.patch_b.to_u8(),
            label: t.label.d.map(|x| x as f32),
        }
    }

    pub fn to_triplet(&self, patch_size: usize) -> TrainingTriplet {
        TrainingTriplet {
            patch_a: GrayImage::from_u8(patch_size, patch_size, &self.a).expect("sized record"),
            patch_b: GrayImage::from_u8(patch_size, patch_size, &self.b).expect("sized record"),
            label: FourPointDelta::new(self.label.map(|x| x as f64)),
            frame: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub patch_size: usize,
    pub rho: f64,
    pub records: Vec<PairRecord>,
}

impl PairSet {
    pub fn load(dir: &Path) -> Result<Self> {
        let reader = load_dataset(dir)?;
        let patch_size = reader.manifest().patch_size;
        let rho = reader.manifest().rho;
        let records = reader
            .map(|t| t.map(|t| PairRecord::from_triplet(&t)))
            .collect::<Result<_>>()?;
        Ok(Self {
            patch_size,
            rho,
            records,
        })
    }

    pub fn from_triplets(triplets: &[TrainingTriplet], rho: f64) -> Self {
        let patch_size = triplets.first().map_or(0, |t| t.patch_a.width());
        Self {
            patch_size,
            rho,
            records: triplets.iter().map(PairRecord::from_triplet).collect(),
        }
    }

    /// Generates records `range` of `(corpus, cfg)` directly into memory.
    pub fn generate(corpus: &Corpus, cfg: &GenConfig, range: std::ops::Range<u64>) -> Result<Self> {
        cfg.validate()?;
        let triplets = corpus.triplets(cfg, range)?;
        Ok(Self {
            patch_size: cfg.patch_size,
            rho: cfg.rho,
            records: triplets.iter().map(PairRecord::from_triplet).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(seed: u64, w: usize, h: usize) -> GrayImage {
        synthetic::render_scene(w, h, &mut Rng64::seed_from_u64(seed))
    }

    #[test]
    fn config_presets_are_valid() {
        for cfg in [GenConfig::train(0), GenConfig::test(0), GenConfig::desk(0)] {
            cfg.validate().unwrap();
        }
        let mut bad = GenConfig::train(0);
        bad.rho = 40.0;
        assert!(bad.validate().is_err());
        bad = GenConfig::train(0);
        bad.patch_size = 200;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_perturbation_gives_identical_patches() {
        let img = scene(1, 80, 60);
        let mut cfg = GenConfig::desk(3);
        cfg.rho = 0.0;
        let t = generate_triplet(&img, &cfg, &mut record_rng(3, 0)).unwrap();
        assert_eq!(t.label, FourPointDelta::ZERO);
        assert_eq!(t.patch_a.to_u8(), t.patch_b.to_u8());
        assert_eq!(t.patch_a, t.patch_b);
    }

    #[test]
    fn labels_bounded_and_corners_consistent() {
        let img = scene(2, 320, 240);
        let cfg = GenConfig::train(9);
        for i in 0..50 {
            let t = generate_triplet(&img, &cfg, &mut record_rng(9, i)).unwrap();
            assert!(t.label.max_abs() <= 32.0);
            assert!(t.corner_consistency_error().unwrap() < 1e-6);
            let f = t.frame.unwrap();
            assert!(f.origin.u >= 32.0 && f.origin.u + 128.0 <= 320.0 - 32.0);
            assert!(f.origin.v >= 32.0 && f.origin.v + 128.0 <= 240.0 - 32.0);
        }
    }

    #[test]
    fn patch_b_shows_patch_a_under_the_label_homography() {
        // patch_b(x) = I(H x) and patch_a(y) = I(p + y), so wherever H x lands
        // inside patch A the two should agree up to interpolation error.
        let img = imaging::gaussian_blur(&scene(4, 320, 240), 1.5);
        let cfg = GenConfig::train(5);
        let t = generate_triplet(&img, &cfg, &mut record_rng(5, 0)).unwrap();
        let local = PatchFrame::local(128).unwrap();
        let h = geometry::four_point_to_matrix(&t.label, &local).unwrap();
        let mismatch = |h: &geometry::Homography3x3| {
            let (mut err, mut n) = (0.0, 0);
            for y in (4..124).step_by(3) {
                for x in (4..124).step_by(3) {
                    let q = h.apply(Point2::new(x as f64 + 0.5, y as f64 + 0.5)).unwrap();
                    let s = Point2::new(q.u - 0.5, q.v - 0.5);
                    if s.u > 1.0 && s.v > 1.0 && s.u < 126.0 && s.v < 126.0 {
                        err += (t.patch_a.bilinear_sample(s) - t.patch_b.get(x, y)).abs() as f64;
                        n += 1;
                    }
                }
            }
            err / n as f64
        };
        let good = mismatch(&h);
        let wrong = mismatch(&geometry::Homography3x3::translation(9.0, -7.0));
        assert!(good < 0.01, "consistent mismatch {good}");
        assert!(wrong > 3.0 * good, "wrong label mismatch {wrong} vs {good}");
    }

    #[test]
    fn too_small_image_rejected() {
        let img = GrayImage::filled(100, 100, 0.5);
        let err = generate_triplet(&img, &GenConfig::train(0), &mut record_rng(0, 0));
        assert!(matches!(err, Err(DatagenError::ImageTooSmall { .. })));
    }

    #[test]
    fn label_marginals_are_uniform() {
        let corpus = Corpus::from_images(vec![scene(6, 80, 60)], &GenConfig::desk(0)).unwrap();
        let cfg = GenConfig::desk(21);
        let rho = cfg.rho;
        let ts = corpus.triplets(&cfg, 0..10_000).unwrap();
        for k in 0..8 {
            let xs: Vec<f64> = ts.iter().map(|t| t.label.d[k]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            assert!(mean.abs() <= 0.05 * rho, "component {k} mean {mean}");
            let expected = rho * rho / 3.0;
            assert!((var - expected).abs() <= 0.1 * expected, "component {k} var {var}");
        }
    }

    #[test]
    fn augmentation_changes_patches_but_not_geometry() {
        let img = scene(8, 80, 60);
        let plain = GenConfig::desk(1);
        let mut aug = plain;
        aug.augment = AugmentConfig {
            blur_sigma: 1.0,
            noise_sigma: 0.05,
            occlusion_count: 2,
            occlusion_max_side: 0.3,
        };
        let a = generate_triplet(&img, &plain, &mut record_rng(1, 4)).unwrap();
        let b = generate_triplet(&img, &aug, &mut record_rng(1, 4)).unwrap();
        assert_eq!(a.label, b.label);
        assert_eq!(a.frame, b.frame);
        assert_ne!(a.patch_a, b.patch_a);
        let c = generate_triplet(&img, &aug, &mut record_rng(1, 4)).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn record_codec_round_trip() {
        let img = scene(3, 80, 60);
        let t = generate_triplet(&img, &GenConfig::desk(2), &mut record_rng(2, 0)).unwrap();
        let mut bytes = Vec::new();
        encode_record(&t, &mut bytes);
        assert_eq!(bytes.len(), record_size(32));
        let back = decode_record(&bytes, 32).unwrap();
        assert_eq!(back.label, t.label);
        assert_eq!(back.patch_a.to_u8(), t.patch_a.to_u8());
        assert_eq!(back.patch_b.to_u8(), t.patch_b.to_u8());
    }
}
