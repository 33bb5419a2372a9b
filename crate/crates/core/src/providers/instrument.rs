//! Call counting and fault injection wrappers.

use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::Arc;

use super::{
    Detector, Embedder, Embedding, EnhanceRequest, Enhancer, Interpolator, KeyframeGenerator,
    ProviderError, QualityScorer, Role,
};
use crate::model::{FrameSequence, ImageBuffer, MaskSet};

/// Per-role call tally, cheap to clone and share.
#[derive(Debug, Clone, Default)]
pub struct CallCounter {
    counts: Arc<[AtomicUsize; 6]>,
}

impl CallCounter {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(role: Role) -> usize {
        Role::ALL.iter().position(|r| *r == role).unwrap()
    }

    pub fn record(&self, role: Role) {
        self.counts[Self::slot(role)].fetch_add(1, Ordering::SeqCst);
    }

    pub fn get(&self, role: Role) -> usize {
        self.counts[Self::slot(role)].load(Ordering::SeqCst)
    }

    pub fn total(&self) -> usize {
        Role::ALL.iter().map(|r| self.get(*r)).sum()
    }
}

pub struct Instrumented<P> {
    inner: P,
    counter: CallCounter,
}

impl<P> Instrumented<P> {
    pub fn new(inner: P, counter: CallCounter) -> Self {
        Self { inner, counter }
    }
}

impl<P: Enhancer> Enhancer for Instrumented<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn enhance(&self, request: &EnhanceRequest) -> Result<String, ProviderError> {
        self.counter.record(Role::Enhancer);
        self.inner.enhance(request)
    }
}

impl<P: Detector> Detector for Instrumented<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn detect(&self, image: &ImageBuffer, labels: &[String]) -> Result<MaskSet, ProviderError> {
        self.counter.record(Role::Detector);
        self.inner.detect(image, labels)
    }
}

impl<P: KeyframeGenerator> KeyframeGenerator for Instrumented<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn generate_keyframe(
        &self,
        image: &ImageBuffer,
        masks: &MaskSet,
        prompt: &str,
        seed: u64,
    ) -> Result<ImageBuffer, ProviderError> {
        self.counter.record(Role::Keyframe);
        self.inner.generate_keyframe(image, masks, prompt, seed)
    }
}

impl<P: Interpolator> Interpolator for Instrumented<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn interpolate(
        &self,
        start: &ImageBuffer,
        end: &ImageBuffer,
        prompt: &str,
        frame_count: usize,
        seed: u64,
    ) -> Result<FrameSequence, ProviderError> {
        self.counter.record(Role::Interpolator);
        self.inner.interpolate(start, end, prompt, frame_count, seed)
    }
}

impl<P: Embedder> Embedder for Instrumented<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn embed_image(&self, image: &ImageBuffer) -> Result<Embedding, ProviderError> {
        self.counter.record(Role::Embedder);
        self.inner.embed_image(image)
    }
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        self.counter.record(Role::Embedder);
        self.inner.embed_text(text)
    }
}

impl<P: QualityScorer> QualityScorer for Instrumented<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn score_quality(&self, frame: &ImageBuffer) -> Result<f64, ProviderError> {
        self.counter.record(Role::Scorer);
        self.inner.score_quality(frame)
    }
}

/// Fault injector: the first `k` calls (across all methods) fail with `error`,
/// later calls reach the inner provider.
pub struct FailFirst<P> {
    inner: P,
    remaining: AtomicU32,
    error: ProviderError,
}

impl<P> FailFirst<P> {
    pub fn new(inner: P, k: u32, error: ProviderError) -> Self {
        Self {
            inner,
            remaining: AtomicU32::new(k),
            error,
        }
    }

    fn gate(&self) -> Result<(), ProviderError> {
        let prev = self
            .remaining
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |r| r.checked_sub(1));
        match prev {
            Ok(_) => Err(self.error.clone()),
            Err(_) => Ok(()),
        }
    }
}

impl<P: Enhancer> Enhancer for FailFirst<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn enhance(&self, request: &EnhanceRequest) -> Result<String, ProviderError> {
        self.gate()?;
        self.inner.enhance(request)
    }
}

impl<P: Detector> Detector for FailFirst<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn detect(&self, image: &ImageBuffer, labels: &[String]) -> Result<MaskSet, ProviderError> {
        self.gate()?;
        self.inner.detect(image, labels)
    }
}

impl<P: KeyframeGenerator> KeyframeGenerator for FailFirst<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn generate_keyframe(
        &self,
        image: &ImageBuffer,
        masks: &MaskSet,
        prompt: &str,
        seed: u64,
    ) -> Result<ImageBuffer, ProviderError> {
        self.gate()?;
        self.inner.generate_keyframe(image, masks, prompt, seed)
    }
}

impl<P: Interpolator> Interpolator for FailFirst<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn interpolate(
        &self,
        start: &ImageBuffer,
        end: &ImageBuffer,
        prompt: &str,
        frame_count: usize,
        seed: u64,
    ) -> Result<FrameSequence, ProviderError> {
        self.gate()?;
        self.inner.interpolate(start, end, prompt, frame_count, seed)
    }
}

impl<P: Embedder> Embedder for FailFirst<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn embed_image(&self, image: &ImageBuffer) -> Result<Embedding, ProviderError> {
        self.gate()?;
        self.inner.embed_image(image)
    }
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        self.gate()?;
        self.inner.embed_text(text)
    }
}

impl<P: QualityScorer> QualityScorer for FailFirst<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn score_quality(&self, frame: &ImageBuffer) -> Result<f64, ProviderError> {
        self.gate()?;
        self.inner.score_quality(frame)
    }
}
