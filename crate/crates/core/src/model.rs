//! Shared data model: images, videos, prompts, masks, requests and artifacts.
//!
//! Every visual value exchanged between stages is an [`ImageBuffer`]: a dense
//! 8-bit RGB raster. Metric code promotes samples to `f64`.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const CHANNELS: usize = 3;

/// Default working resolution (square) that inputs are normalized to on ingest.
pub const DEFAULT_RESOLUTION: u32 = 256;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    ZeroDimension { width: u32, height: u32 },
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("frame {index} is {actual_w}x{actual_h}, expected {expected_w}x{expected_h}")]
    FrameDimension {
        index: usize,
        expected_w: u32,
        expected_h: u32,
        actual_w: u32,
        actual_h: u32,
    },
    #[error("a frame sequence needs at least one frame")]
    EmptySequence,
    #[error("frame rate must be a positive rational, got {num}/{den}")]
    FrameRate { num: u32, den: u32 },
    #[error("invalid prompt bundle: {0}")]
    Bundle(String),
    #[error("invalid mask set: {0}")]
    Masks(String),
    #[error("invalid request: {0}")]
    Request(String),
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense row-major RGB8 raster.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawImage", into = "RawImage")]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct RawImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl TryFrom<RawImage> for ImageBuffer {
    type Error = ModelError;
    fn try_from(raw: RawImage) -> Result<Self, Self::Error> {
        ImageBuffer::new(raw.width, raw.height, raw.data)
    }
}

impl From<ImageBuffer> for RawImage {
    fn from(img: ImageBuffer) -> Self {
        RawImage {
            width: img.width,
            height: img.height,
            data: img.data,
        }
    }
}

impl fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::ZeroDimension { width, height });
        }
        let expected = width as usize * height as usize * CHANNELS;
        if data.len() != expected {
            return Err(ModelError::BufferLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image where every pixel has the given color.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, ModelError> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::ZeroDimension { width, height });
        }
        let mut data = Vec::with_capacity(width as usize * height as usize * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Iterator over pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(CHANNELS).map(|p| [p[0], p[1], p[2]])
    }

    /// BT.601 luma of every pixel, row-major, in the 0..=255 domain.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels()
            .map(|[r, g, b]| 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
            .collect()
    }

    pub fn to_png(&self) -> Result<Vec<u8>, ModelError> {
        let img = RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer length checked at construction");
        let mut out = Vec::new();
        img.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)?;
        Ok(out)
    }

    /// Decodes any PNG; alpha is discarded and grayscale is expanded to RGB.
    pub fn from_png(bytes: &[u8]) -> Result<Self, ModelError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_png()?)?;
        Ok(())
    }

    /// Largest centered square crop.
    pub fn center_crop_square(&self) -> ImageBuffer {
        let side = self.width.min(self.height);
        let x0 = (self.width - side) / 2;
        let y0 = (self.height - side) / 2;
        ImageBuffer::from_fn(side, side, |x, y| self.pixel(x + x0, y + y0))
            .expect("crop side is positive")
    }

    /// Ingest normalization: center-crop to square then resize to `resolution`².
    pub fn normalize_for_ingest(&self, resolution: u32) -> Result<ImageBuffer, ModelError> {
        resize_bilinear(&self.center_crop_square(), resolution, resolution)
    }

    /// Number of differing bytes.
    pub fn hamming_distance(&self, other: &ImageBuffer) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| a != b)
            .count()
            + self.data.len().abs_diff(other.data.len())
    }
}

/// Bilinear resize with half-pixel center alignment and edge clamping.
///
/// Results are rounded half-up to the nearest 8-bit value.
pub fn resize_bilinear(image: &ImageBuffer, w: u32, h: u32) -> Result<ImageBuffer, ModelError> {
    if w == 0 || h == 0 {
        return Err(ModelError::ZeroDimension {
            width: w,
            height: h,
        });
    }
    if (w, h) == image.dimensions() {
        return Ok(image.clone());
    }
    let xs = sample_positions(image.width, w);
    let ys = sample_positions(image.height, h);
    let src_w = image.width as usize;
    let src = image.data();
    let mut data = Vec::with_capacity(w as usize * h as usize * CHANNELS);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..CHANNELS {
                let at = |x: usize, y: usize| src[(y * src_w + x) * CHANNELS + c] as f64;
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push(round_half_up_u8(v));
            }
        }
    }
    ImageBuffer::new(w, h, data)
}

/// For each destination index: (left neighbor, right neighbor, right weight).
fn sample_positions(src: u32, dst: u32) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    let last = (src - 1) as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = pos.floor();
            let hi = (lo + 1.0).min(last);
            (lo as usize, hi as usize, pos - lo)
        })
        .collect()
}

pub(crate) fn round_half_up_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Positive rational frame rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRate {
    pub num: u32,
    pub den: u32,
}

impl FrameRate {
    pub fn new(num: u32, den: u32) -> Result<Self, ModelError> {
        if num == 0 || den == 0 {
            return Err(ModelError::FrameRate { num, den });
        }
        Ok(Self { num, den })
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Default for FrameRate {
    fn default() -> Self {
        Self { num: 8, den: 1 }
    }
}

/// Ordered frames at one fixed resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSequence", into = "RawSequence")]
pub struct FrameSequence {
    frames: Vec<ImageBuffer>,
    fps: FrameRate,
}

#[derive(Serialize, Deserialize)]
struct RawSequence {
    frames: Vec<ImageBuffer>,
    fps: FrameRate,
}

impl TryFrom<RawSequence> for FrameSequence {
    type Error = ModelError;
    fn try_from(raw: RawSequence) -> Result<Self, Self::Error> {
        FrameSequence::new(raw.frames, raw.fps)
    }
}

impl From<FrameSequence> for RawSequence {
    fn from(seq: FrameSequence) -> Self {
        RawSequence {
            frames: seq.frames,
            fps: seq.fps,
        }
    }
}

impl FrameSequence {
    pub fn new(frames: Vec<ImageBuffer>, fps: FrameRate) -> Result<Self, ModelError> {
        FrameRate::new(fps.num, fps.den)?;
        let first = frames.first().ok_or(ModelError::EmptySequence)?;
        let (ew, eh) = first.dimensions();
        for (index, f) in frames.iter().enumerate() {
            if f.dimensions() != (ew, eh) {
                return Err(ModelError::FrameDimension {
                    index,
                    expected_w: ew,
                    expected_h: eh,
                    actual_w: f.width(),
                    actual_h: f.height(),
                });
            }
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &[ImageBuffer] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Always false; kept for the `len`/`is_empty` pairing.
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> FrameRate {
        self.fps
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.frames[0].dimensions()
    }

    pub fn first(&self) -> &ImageBuffer {
        &self.frames[0]
    }

    pub fn last(&self) -> &ImageBuffer {
        &self.frames[self.frames.len() - 1]
    }

    pub fn into_frames(self) -> Vec<ImageBuffer> {
        self.frames
    }
}

/// The three sub-prompts produced by prompt enhancement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawBundle", into = "RawBundle")]
pub struct PromptBundle {
    keywords: Vec<String>,
    frame_state: String,
    optimization_prompt: String,
    raw_user_text: String,
}

#[derive(Serialize, Deserialize)]
struct RawBundle {
    keywords: Vec<String>,
    frame_state: String,
    optimization_prompt: String,
    #[serde(default)]
    raw_user_text: String,
}

impl TryFrom<RawBundle> for PromptBundle {
    type Error = ModelError;
    fn try_from(raw: RawBundle) -> Result<Self, Self::Error> {
        PromptBundle::new(
            raw.keywords,
            raw.frame_state,
            raw.optimization_prompt,
            raw.raw_user_text,
        )
    }
}

impl From<PromptBundle> for RawBundle {
    fn from(b: PromptBundle) -> Self {
        RawBundle {
            keywords: b.keywords,
            frame_state: b.frame_state,
            optimization_prompt: b.optimization_prompt,
            raw_user_text: b.raw_user_text,
        }
    }
}

impl PromptBundle {
    pub fn new(
        keywords: Vec<String>,
        frame_state: impl Into<String>,
        optimization_prompt: impl Into<String>,
        raw_user_text: impl Into<String>,
    ) -> Result<Self, ModelError> {
        if keywords.is_empty() {
            return Err(ModelError::Bundle("keyword list is empty".into()));
        }
        if keywords.iter().any(|k| k.trim().is_empty()) {
            return Err(ModelError::Bundle("keywords must be non-empty".into()));
        }
        let frame_state = frame_state.into();
        let optimization_prompt = optimization_prompt.into();
        if frame_state.trim().is_empty() {
            return Err(ModelError::Bundle("frame state is empty".into()));
        }
        if optimization_prompt.trim().is_empty() {
            return Err(ModelError::Bundle("optimization prompt is empty".into()));
        }
        Ok(Self {
            keywords,
            frame_state,
            optimization_prompt,
            raw_user_text: raw_user_text.into(),
        })
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn frame_state(&self) -> &str {
        &self.frame_state
    }

    pub fn optimization_prompt(&self) -> &str {
        &self.optimization_prompt
    }

    pub fn raw_user_text(&self) -> &str {
        &self.raw_user_text
    }

    pub fn with_user_text(mut self, text: impl Into<String>) -> Self {
        self.raw_user_text = text.into();
        self
    }

    /// Text describing the desired final state: the user's request, or the
    /// optimization prompt when the bundle carries no user text.
    pub fn target_prompt(&self) -> &str {
        if self.raw_user_text.trim().is_empty() {
            &self.optimization_prompt
        } else {
            &self.raw_user_text
        }
    }
}

/// Binary raster, one flag per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::ZeroDimension { width, height });
        }
        if bits.len() != width as usize * height as usize {
            return Err(ModelError::BufferLength {
                expected: width as usize * height as usize,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self, ModelError> {
        Self::new(width, height, vec![false; width as usize * height as usize])
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, ModelError> {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::new(width, height, bits)
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn union_with(&mut self, other: &BinaryMask) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// Single-channel 8-bit PNG, 0 or 255.
    pub fn to_png(&self) -> Result<Vec<u8>, ModelError> {
        let raw = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.width, self.height, raw)
            .expect("mask length checked at construction");
        let mut out = Vec::new();
        img.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)?;
        Ok(out)
    }

    /// Any non-zero luma counts as set.
    pub fn from_png(bytes: &[u8]) -> Result<Self, ModelError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw().into_iter().map(|v| v > 0).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub label: String,
    pub confidence: f64,
    pub mask: BinaryMask,
}

/// Labeled masks from open-set detection, all matching one source image size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMaskSet", into = "RawMaskSet")]
pub struct MaskSet {
    width: u32,
    height: u32,
    entries: Vec<MaskEntry>,
}

#[derive(Serialize, Deserialize)]
struct RawMaskSet {
    width: u32,
    height: u32,
    entries: Vec<MaskEntry>,
}

impl TryFrom<RawMaskSet> for MaskSet {
    type Error = ModelError;
    fn try_from(raw: RawMaskSet) -> Result<Self, Self::Error> {
        MaskSet::new(raw.width, raw.height, raw.entries)
    }
}

impl From<MaskSet> for RawMaskSet {
    fn from(m: MaskSet) -> Self {
        RawMaskSet {
            width: m.width,
            height: m.height,
            entries: m.entries,
        }
    }
}

impl MaskSet {
    pub fn new(width: u32, height: u32, entries: Vec<MaskEntry>) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::ZeroDimension { width, height });
        }
        for e in &entries {
            if e.mask.dimensions() != (width, height) {
                let (mw, mh) = e.mask.dimensions();
                return Err(ModelError::Masks(format!(
                    "mask for '{}' is {mw}x{mh}, source is {width}x{height}",
                    e.label
                )));
            }
            if !(0.0..=1.0).contains(&e.confidence) {
                return Err(ModelError::Masks(format!(
                    "confidence {} for '{}' outside [0,1]",
                    e.confidence, e.label
                )));
            }
        }
        Ok(Self {
            width,
            height,
            entries,
        })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self, ModelError> {
        Self::new(width, height, Vec::new())
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn entries(&self) -> &[MaskEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }

    pub fn union(&self) -> BinaryMask {
        let mut out = BinaryMask::empty(self.width, self.height).expect("positive dims");
        for e in &self.entries {
            out.union_with(&e.mask);
        }
        out
    }
}

/// Everything needed to reproduce one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub input_image: ImageBuffer,
    pub user_text: String,
    pub frame_count: usize,
    pub seed: u64,
    pub lambda_mask: f64,
    pub candidate_count: usize,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.frame_count < 2 {
            return Err(ModelError::Request(format!(
                "frame_count must be at least 2, got {}",
                self.frame_count
            )));
        }
        if self.candidate_count < 1 {
            return Err(ModelError::Request("candidate_count must be at least 1".into()));
        }
        if !(self.lambda_mask.is_finite() && self.lambda_mask >= 0.0) {
            return Err(ModelError::Request(format!(
                "lambda_mask must be a non-negative real, got {}",
                self.lambda_mask
            )));
        }
        if self.user_text.trim().is_empty() {
            return Err(ModelError::Request("user_text is empty".into()));
        }
        Ok(())
    }
}

/// SHA-256 over a length-prefixed canonical encoding of every request field.
pub fn content_digest(request: &GenerationRequest) -> String {
    let mut h = Sha256::new();
    h.update(b"vidbridge.request.v1");
    let img = &request.input_image;
    h.update(img.width.to_le_bytes());
    h.update(img.height.to_le_bytes());
    h.update((img.data.len() as u64).to_le_bytes());
    h.update(&img.data);
    h.update((request.user_text.len() as u64).to_le_bytes());
    h.update(request.user_text.as_bytes());
    h.update((request.frame_count as u64).to_le_bytes());
    h.update(request.seed.to_le_bytes());
    h.update(request.lambda_mask.to_bits().to_le_bytes());
    h.update((request.candidate_count as u64).to_le_bytes());
    hex::encode(h.finalize())
}

/// Which provider handled a stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageProvenance {
    pub stage: String,
    pub providers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationArtifact {
    pub request_digest: String,
    pub prompt_bundle: PromptBundle,
    pub mask_set: MaskSet,
    pub end_frame: ImageBuffer,
    pub video: FrameSequence,
    pub provenance: Vec<StageProvenance>,
}

impl GenerationArtifact {
    /// Start-frame anchoring and length checks against the originating request.
    pub fn check_against(&self, request: &GenerationRequest) -> Result<(), ModelError> {
        if self.video.len() != request.frame_count {
            return Err(ModelError::Request(format!(
                "video has {} frames, request asked for {}",
                self.video.len(),
                request.frame_count
            )));
        }
        if self.video.first() != &request.input_image {
            return Err(ModelError::Request(
                "first video frame differs from the input image".into(),
            ));
        }
        Ok(())
    }
}
