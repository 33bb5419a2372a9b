//! Deterministic in-process providers.
//!
//! Every mock is a pure function of its inputs (and seed). The exact
//! semantics are fixed so that golden files stay portable:
//!
//! * enhancer: stop-word filtered noun extraction plus fixed templates
//! * detector: per-label color thresholding, label colors derived from SHA-256
//! * keyframe: seeded color shift and jitter outside the mask union
//! * interpolator: linear crossfade, rounded half-up
//! * embedder: 8x8 luma thumbnail (images) or hashed bag-of-words (text), D = 64
//! * scorer: Laplacian-variance sharpness squashed into [0, 1)

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    check_interpolation_args, check_labels, check_prompt, Detector, Embedder, Embedding,
    EnhanceRequest, Enhancer, Interpolator, KeyframeGenerator, ProviderError, QualityScorer, Role,
};
use crate::enhancer::render_bundle;
use crate::model::{
    BinaryMask, FrameRate, FrameSequence, ImageBuffer, MaskEntry, MaskSet, PromptBundle,
};

pub const EMBEDDING_DIM: usize = 64;
const THUMB: u32 = 8;

const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "his", "her", "its", "their",
    "my", "our", "your", "and", "or", "but", "of", "on", "in", "at", "to", "from", "with", "by",
    "for", "into", "onto", "over", "under", "is", "are", "was", "were", "be", "it", "as", "while",
    "then", "very", "up", "down", "out", "slowly", "quickly",
];

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "his", "her", "its", "their",
    "my", "our", "your",
];

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Words directly following a determiner; falls back to every non-stop word.
pub fn extract_keywords(text: &str) -> Vec<String> {
    let toks = tokens(text);
    fn push(out: &mut Vec<String>, w: &str) {
        if !out.iter().any(|k| k == w) {
            out.push(w.to_string());
        }
    }
    let mut out: Vec<String> = Vec::new();
    for pair in toks.windows(2) {
        if DETERMINERS.contains(&pair[0].as_str()) && !STOP_WORDS.contains(&pair[1].as_str()) {
            push(&mut out, &pair[1]);
        }
    }
    if out.is_empty() {
        for t in toks.iter().filter(|t| !STOP_WORDS.contains(&t.as_str())) {
            push(&mut out, t);
        }
    }
    if out.is_empty() {
        push(&mut out, "scene");
    }
    out
}

pub struct MockEnhancer;

impl Enhancer for MockEnhancer {
    fn id(&self) -> String {
        "mock-enhancer/1".into()
    }

    fn enhance(&self, request: &EnhanceRequest) -> Result<String, ProviderError> {
        check_prompt(Role::Enhancer, &request.text)?;
        let text = request.text.split_whitespace().collect::<Vec<_>>().join(" ");
        let keywords = extract_keywords(&text);
        let listed = keywords.join(", ");
        let bundle = PromptBundle::new(
            keywords,
            format!("The input frame shows {listed}."),
            format!("{text}; keep {listed} consistent with smooth natural motion"),
            "",
        )
        .expect("mock always produces a well-formed bundle");
        Ok(render_bundle(&bundle))
    }
}

/// Color that [`MockDetector`] segments for `label` (case-insensitive).
pub fn label_color(label: &str) -> [u8; 3] {
    let digest = Sha256::digest(format!("vidbridge.label:{}", label.trim().to_lowercase()));
    [digest[0], digest[1], digest[2]]
}

#[derive(Debug, Clone)]
pub struct MockDetector {
    /// Per-channel L-infinity tolerance around the label color.
    pub tolerance: u8,
    pub max_per_label: usize,
}

impl Default for MockDetector {
    fn default() -> Self {
        Self {
            tolerance: 24,
            max_per_label: 1,
        }
    }
}

impl Detector for MockDetector {
    fn id(&self) -> String {
        "mock-detector/1".into()
    }

    fn detect(&self, image: &ImageBuffer, labels: &[String]) -> Result<MaskSet, ProviderError> {
        check_labels(labels)?;
        let (w, h) = image.dimensions();
        let tol = self.tolerance as i32;
        let mut seen: Vec<String> = Vec::new();
        let mut entries = Vec::new();
        for label in labels {
            let key = label.trim().to_lowercase();
            if key.is_empty() || seen.contains(&key) || self.max_per_label == 0 {
                continue;
            }
            seen.push(key);
            let color = label_color(label);
            let mut bits = Vec::with_capacity(image.pixel_count());
            let mut closeness = 0.0;
            for p in image.pixels() {
                let d = (0..3)
                    .map(|c| (p[c] as i32 - color[c] as i32).abs())
                    .max()
                    .unwrap();
                let hit = d <= tol;
                if hit {
                    closeness += 1.0 - d as f64 / (tol + 1) as f64;
                }
                bits.push(hit);
            }
            let count = bits.iter().filter(|b| **b).count();
            if count == 0 {
                continue;
            }
            entries.push(MaskEntry {
                label: label.clone(),
                confidence: closeness / count as f64,
                mask: BinaryMask::new(w, h, bits).expect("dimensions from image"),
            });
        }
        MaskSet::new(w, h, entries).map_err(|e| ProviderError::contract(Role::Detector, e.to_string()))
    }
}

fn prompt_hash(prompt: &str) -> u64 {
    let d = Sha256::digest(prompt.as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub struct MockKeyframe;

impl KeyframeGenerator for MockKeyframe {
    fn id(&self) -> String {
        "mock-keyframe/1".into()
    }

    fn generate_keyframe(
        &self,
        image: &ImageBuffer,
        masks: &MaskSet,
        prompt: &str,
        seed: u64,
    ) -> Result<ImageBuffer, ProviderError> {
        check_prompt(Role::Keyframe, prompt)?;
        if masks.dimensions() != image.dimensions() {
            return Err(ProviderError::precondition(
                Role::Keyframe,
                "mask dimensions differ from image",
            ));
        }
        let keep = masks.union();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ prompt_hash(prompt));
        let shift: [i32; 3] = [
            rng.gen_range(-40..=40),
            rng.gen_range(-40..=40),
            rng.gen_range(-40..=40),
        ];
        let mut data = Vec::with_capacity(image.data().len());
        for (p, &kept) in image.pixels().zip(keep.bits()) {
            for c in 0..3 {
                let jitter: i32 = rng.gen_range(-8..=8);
                let v = if kept {
                    p[c]
                } else {
                    (p[c] as i32 + shift[c] + jitter).clamp(0, 255) as u8
                };
                data.push(v);
            }
        }
        Ok(ImageBuffer::new(image.width(), image.height(), data).expect("same size as input"))
    }
}

pub struct MockInterpolator;

/// Frame `t` of a `frame_count`-long crossfade, exact integer arithmetic with
/// half-up rounding.
pub fn crossfade_frame(start: &ImageBuffer, end: &ImageBuffer, t: usize, frame_count: usize) -> ImageBuffer {
    let den = (frame_count - 1) as u64;
    let (wa, wb) = (den - t as u64, t as u64);
    let data = start
        .data()
        .iter()
        .zip(end.data())
        .map(|(&a, &b)| {
            let num = wa * a as u64 + wb * b as u64;
            ((2 * num + den) / (2 * den)) as u8
        })
        .collect();
    ImageBuffer::new(start.width(), start.height(), data).expect("same size as start")
}

impl Interpolator for MockInterpolator {
    fn id(&self) -> String {
        "mock-interpolator/1".into()
    }

    fn interpolate(
        &self,
        start: &ImageBuffer,
        end: &ImageBuffer,
        _prompt: &str,
        frame_count: usize,
        _seed: u64,
    ) -> Result<FrameSequence, ProviderError> {
        check_interpolation_args(start, end, frame_count)?;
        let frames = (0..frame_count)
            .map(|t| crossfade_frame(start, end, t, frame_count))
            .collect();
        FrameSequence::new(frames, FrameRate::default())
            .map_err(|e| ProviderError::contract(Role::Interpolator, e.to_string()))
    }
}

pub struct MockEmbedder;

/// Block-averaged 8x8 luma thumbnail, row-major, 0..=255 domain.
pub fn luma_thumbnail(image: &ImageBuffer) -> Vec<f64> {
    let (w, h) = image.dimensions();
    let luma = image.luma();
    let bounds = |i: u32, n: u32| {
        let lo = (i * n / THUMB) as usize;
        let hi = (((i + 1) * n / THUMB) as usize).max(lo + 1);
        (lo, hi)
    };
    let mut out = Vec::with_capacity((THUMB * THUMB) as usize);
    for by in 0..THUMB {
        let (y0, y1) = bounds(by, h);
        for bx in 0..THUMB {
            let (x0, x1) = bounds(bx, w);
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += luma[y * w as usize + x];
                }
            }
            out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}

/// Hashed bag-of-words counts over [`EMBEDDING_DIM`] buckets.
pub fn text_buckets(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; EMBEDDING_DIM];
    for tok in tokens(text) {
        let d = Sha256::digest(tok.as_bytes());
        let bucket = u64::from_be_bytes(d[..8].try_into().unwrap()) % EMBEDDING_DIM as u64;
        v[bucket as usize] += 1.0;
    }
    v
}

impl Embedder for MockEmbedder {
    fn id(&self) -> String {
        "mock-embedder/1".into()
    }

    fn embed_image(&self, image: &ImageBuffer) -> Result<Embedding, ProviderError> {
        Ok(Embedding::normalized(luma_thumbnail(image)))
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        Ok(Embedding::normalized(text_buckets(text)))
    }
}

pub struct MockScorer;

/// Half-saturation point of the sharpness squash, in squared luma units.
pub const SHARPNESS_SCALE: f64 = 1000.0;

/// Population variance of the 4-neighbour Laplacian of luma over interior pixels.
pub fn laplacian_variance(image: &ImageBuffer) -> f64 {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w < 3 || h < 3 {
        return 0.0;
    }
    let l = image.luma();
    let mut vals = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = l[y * w + x];
            vals.push(l[y * w + x - 1] + l[y * w + x + 1] + l[(y - 1) * w + x] + l[(y + 1) * w + x] - 4.0 * c);
        }
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

impl QualityScorer for MockScorer {
    fn id(&self) -> String {
        "mock-scorer/1".into()
    }

    fn score_quality(&self, frame: &ImageBuffer) -> Result<f64, ProviderError> {
        let v = laplacian_variance(frame);
        Ok(v / (v + SHARPNESS_SCALE))
    }
}
