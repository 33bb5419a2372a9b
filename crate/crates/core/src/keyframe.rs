//! End-frame synthesis by candidate selection.
//!
//! Key-object masks are picked from open-set detection, `N` candidate end
//! frames are generated with consecutive seeds, and the candidate minimizing
//!
//! ```text
//! total = l_detect + lambda * l_mask + l_video
//! ```
//!
//! is kept. Each term is normalized to [0, 1]:
//!
//! * `l_detect`: one minus the mean confidence with which each key label is
//!   re-detected in the candidate (a missing label counts as 0).
//! * `l_mask`: mean absolute pixel difference between candidate and source
//!   inside the union of key masks, divided by 255.
//! * `l_video`: `(1 - cos(text, candidate)) / 2` in the embedder's space.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GenerationRequest, ImageBuffer, MaskEntry, MaskSet, PromptBundle};
use crate::providers::{Detector, Embedder, KeyframeGenerator, ProviderError, ProviderSet};

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_CANDIDATES: usize = 4;
pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.3;

#[derive(Debug, Error)]
pub enum KeyframeError {
    #[error("detection on the input image failed: {0}")]
    Detection(#[source] ProviderError),
    #[error("scoring candidate with seed {seed} failed: {source}")]
    Scoring {
        seed: u64,
        #[source]
        source: ProviderError,
    },
    #[error("all {} candidates failed to generate", .0.len())]
    AllCandidatesFailed(Vec<(u64, ProviderError)>),
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub l_detect: f64,
    pub l_mask: f64,
    pub l_video: f64,
    pub lambda: f64,
    pub total: f64,
}

impl CandidateScore {
    pub fn new(l_detect: f64, l_mask: f64, l_video: f64, lambda: f64) -> Self {
        Self {
            l_detect,
            l_mask,
            l_video,
            lambda,
            total: l_detect + lambda * l_mask + l_video,
        }
    }
}

/// Entries whose label matches a keyword (case-insensitive) at or above the
/// confidence floor, by descending confidence then label.
pub fn select_key_masks(masks: &MaskSet, keywords: &[String], confidence_floor: f64) -> MaskSet {
    let wanted: Vec<String> = keywords.iter().map(|k| k.trim().to_lowercase()).collect();
    let mut picked: Vec<MaskEntry> = masks
        .entries()
        .iter()
        .filter(|e| e.confidence >= confidence_floor)
        .filter(|e| wanted.contains(&e.label.trim().to_lowercase()))
        .cloned()
        .collect();
    picked.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.label.cmp(&b.label))
    });
    let (w, h) = masks.dimensions();
    MaskSet::new(w, h, picked).expect("subset of a valid mask set")
}

/// Scores one candidate end frame. Implementations must be deterministic.
pub trait CandidateScorer: Send + Sync {
    fn score(
        &self,
        candidate: &ImageBuffer,
        source: &ImageBuffer,
        key_masks: &MaskSet,
        text_prompt: &str,
        lambda: f64,
    ) -> Result<CandidateScore, ProviderError>;
}

/// The composite objective backed by a detector and an embedder.
pub struct CompositeScorer<'a> {
    pub detector: &'a dyn Detector,
    pub embedder: &'a dyn Embedder,
}

impl CandidateScorer for CompositeScorer<'_> {
    fn score(
        &self,
        candidate: &ImageBuffer,
        source: &ImageBuffer,
        key_masks: &MaskSet,
        text_prompt: &str,
        lambda: f64,
    ) -> Result<CandidateScore, ProviderError> {
        score_candidate(
            candidate,
            source,
            key_masks,
            text_prompt,
            lambda,
            self.embedder,
            self.detector,
        )
    }
}

fn unique_labels(masks: &MaskSet) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for l in masks.labels() {
        if !out.iter().any(|o| o.to_lowercase() == l.to_lowercase()) {
            out.push(l.to_string());
        }
    }
    out
}

pub fn detect_loss(
    candidate: &ImageBuffer,
    key_masks: &MaskSet,
    detector: &dyn Detector,
) -> Result<f64, ProviderError> {
    let labels = unique_labels(key_masks);
    if labels.is_empty() {
        return Ok(1.0);
    }
    let found = detector.detect(candidate, &labels)?;
    let total: f64 = labels
        .iter()
        .map(|l| {
            let l = l.to_lowercase();
            found
                .entries()
                .iter()
                .filter(|e| e.label.to_lowercase() == l)
                .map(|e| e.confidence)
                .fold(0.0, f64::max)
        })
        .sum();
    Ok((1.0 - total / labels.len() as f64).clamp(0.0, 1.0))
}

pub fn mask_loss(candidate: &ImageBuffer, source: &ImageBuffer, key_masks: &MaskSet) -> f64 {
    let union = key_masks.union();
    let n = union.count();
    if n == 0 {
        return 0.0;
    }
    let diff: u64 = candidate
        .pixels()
        .zip(source.pixels())
        .zip(union.bits())
        .filter(|(_, &inside)| inside)
        .map(|((a, b), _)| (0..3).map(|c| a[c].abs_diff(b[c]) as u64).sum::<u64>())
        .sum();
    diff as f64 / (n as f64 * 3.0 * 255.0)
}

pub fn video_loss(
    candidate: &ImageBuffer,
    text_prompt: &str,
    embedder: &dyn Embedder,
) -> Result<f64, ProviderError> {
    let text = embedder.embed_text(text_prompt)?;
    let image = embedder.embed_image(candidate)?;
    let cos = text.cosine(&image)?;
    Ok((1.0 - cos).clamp(0.0, 2.0) / 2.0)
}

pub fn score_candidate(
    candidate: &ImageBuffer,
    source: &ImageBuffer,
    key_masks: &MaskSet,
    text_prompt: &str,
    lambda: f64,
    embedder: &dyn Embedder,
    detector: &dyn Detector,
) -> Result<CandidateScore, ProviderError> {
    if candidate.dimensions() != source.dimensions() {
        return Err(ProviderError::Precondition {
            role: crate::providers::Role::Keyframe,
            message: format!(
                "candidate is {:?}, source is {:?}",
                candidate.dimensions(),
                source.dimensions()
            ),
        });
    }
    let l_detect = detect_loss(candidate, key_masks, detector)?;
    let l_mask = mask_loss(candidate, source, key_masks);
    let l_video = video_loss(candidate, text_prompt, embedder)?;
    Ok(CandidateScore::new(l_detect, l_mask, l_video, lambda))
}

/// One generated (or failed) candidate.
#[derive(Debug, Clone)]
pub struct Candidate {
    /// Position in the seed sequence, `seed = request.seed + offset`.
    pub offset: usize,
    pub seed: u64,
    pub outcome: Result<(ImageBuffer, CandidateScore), ProviderError>,
}

impl Candidate {
    pub fn score(&self) -> Option<&CandidateScore> {
        self.outcome.as_ref().ok().map(|(_, s)| s)
    }
}

/// Index of the lowest-total candidate, ties to the lowest seed offset.
/// Independent of the order of `candidates`.
pub fn select_best(candidates: &[Candidate]) -> Option<usize> {
    candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.score().map(|s| (i, s.total, c.offset)))
        .min_by(|a, b| match a.1.total_cmp(&b.1) {
            Ordering::Equal => a.2.cmp(&b.2),
            o => o,
        })
        .map(|(i, _, _)| i)
}

#[derive(Debug, Clone)]
pub struct EndFrameSelection {
    pub image: ImageBuffer,
    pub score: CandidateScore,
    pub seed: u64,
    /// Everything the detector found on the input image.
    pub detected: MaskSet,
    pub key_masks: MaskSet,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndFrameOptions {
    pub confidence_floor: f64,
}

impl Default for EndFrameOptions {
    fn default() -> Self {
        Self {
            confidence_floor: DEFAULT_CONFIDENCE_FLOOR,
        }
    }
}

/// Detect, select key masks, generate and score `candidate_count` end
/// frames, return the argmin.
pub fn generate_end_frame(
    request: &GenerationRequest,
    bundle: &PromptBundle,
    providers: &ProviderSet,
    options: &EndFrameOptions,
) -> Result<EndFrameSelection, KeyframeError> {
    let scorer = CompositeScorer {
        detector: providers.detector.as_ref(),
        embedder: providers.embedder.as_ref(),
    };
    generate_end_frame_with(
        request,
        bundle,
        providers.detector.as_ref(),
        providers.keyframe.as_ref(),
        &scorer,
        options,
    )
}

/// [`generate_end_frame`] with an explicit scorer.
pub fn generate_end_frame_with(
    request: &GenerationRequest,
    bundle: &PromptBundle,
    detector: &dyn Detector,
    generator: &dyn KeyframeGenerator,
    scorer: &dyn CandidateScorer,
    options: &EndFrameOptions,
) -> Result<EndFrameSelection, KeyframeError> {
    request
        .validate()
        .map_err(|e| KeyframeError::Invalid(e.to_string()))?;
    let source = &request.input_image;
    let detected = detector
        .detect(source, bundle.keywords())
        .map_err(KeyframeError::Detection)?;
    let key_masks = select_key_masks(&detected, bundle.keywords(), options.confidence_floor);
    let prompt = bundle.target_prompt();

    let generated: Vec<(usize, u64, Result<ImageBuffer, ProviderError>)> = (0..request.candidate_count)
        .into_par_iter()
        .map(|offset| {
            let seed = request.seed.wrapping_add(offset as u64);
            (offset, seed, generator.generate_keyframe(source, &key_masks, prompt, seed))
        })
        .collect();

    if generated.iter().all(|(_, _, r)| r.is_err()) {
        return Err(KeyframeError::AllCandidatesFailed(
            generated
                .into_iter()
                .map(|(_, seed, r)| (seed, r.unwrap_err()))
                .collect(),
        ));
    }

    let candidates = generated
        .into_par_iter()
        .map(|(offset, seed, r)| {
            let outcome = match r {
                Ok(img) => match scorer.score(&img, source, &key_masks, prompt, request.lambda_mask) {
                    Ok(s) => Ok((img, s)),
                    Err(source) => return Err(KeyframeError::Scoring { seed, source }),
                },
                Err(e) => {
                    tracing::warn!(seed, error = %e, "candidate generation failed");
                    Err(e)
                }
            };
            Ok(Candidate {
                offset,
                seed,
                outcome,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let best = select_best(&candidates).expect("at least one candidate generated");
    let (image, score) = candidates[best].outcome.clone().expect("selected candidate succeeded");
    Ok(EndFrameSelection {
        image,
        score,
        seed: candidates[best].seed,
        detected,
        key_masks,
        candidates,
    })
}
