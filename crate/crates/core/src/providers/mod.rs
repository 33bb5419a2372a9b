//! Provider abstraction for the external model roles.
//!
//! Each role is a small object-safe trait. Two families implement them:
//! deterministic in-process mocks ([`mock`]) and an HTTP adapter speaking the
//! JSON wire protocol ([`remote`]). Retrying, fault injection and call
//! counting are layered on as wrappers so that any implementation gets them.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FrameSequence, ImageBuffer, MaskSet};

pub mod instrument;
pub mod mock;
pub mod remote;
pub mod retry;
pub mod wire;

pub use instrument::{CallCounter, FailFirst, Instrumented};
pub use retry::{RetryPolicy, Retrying};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Enhancer,
    Detector,
    Keyframe,
    Interpolator,
    Embedder,
    Scorer,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Enhancer,
        Role::Detector,
        Role::Keyframe,
        Role::Interpolator,
        Role::Embedder,
        Role::Scorer,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Enhancer => "enhancer",
            Role::Detector => "detector",
            Role::Keyframe => "keyframe",
            Role::Interpolator => "interpolator",
            Role::Embedder => "embedder",
            Role::Scorer => "scorer",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("{role}: precondition failed: {message}")]
    Precondition { role: Role, message: String },
    #[error("{role}: timed out")]
    Timeout { role: Role },
    #[error("{role}: transport error: {message}")]
    Transport { role: Role, message: String },
    #[error("{role}: HTTP {status} ({code}): {message}")]
    Status {
        role: Role,
        status: u16,
        code: String,
        message: String,
    },
    #[error("{role}: could not decode response: {message}")]
    Decode { role: Role, message: String },
    #[error("{role}: provider reported failure: {message}")]
    Failed { role: Role, message: String },
    #[error("{role}: response violates the contract: {message}")]
    Contract { role: Role, message: String },
    #[error("{role}: configuration error: {message}")]
    Config { role: Role, message: String },
}

impl ProviderError {
    pub fn role(&self) -> Role {
        match self {
            ProviderError::Precondition { role, .. }
            | ProviderError::Timeout { role }
            | ProviderError::Transport { role, .. }
            | ProviderError::Status { role, .. }
            | ProviderError::Decode { role, .. }
            | ProviderError::Failed { role, .. }
            | ProviderError::Contract { role, .. }
            | ProviderError::Config { role, .. } => *role,
        }
    }

    /// Transient failures worth another attempt; all routes are idempotent.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Timeout { .. } | ProviderError::Transport { .. } => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    pub(crate) fn precondition(role: Role, message: impl Into<String>) -> Self {
        ProviderError::Precondition {
            role,
            message: message.into(),
        }
    }

    pub(crate) fn contract(role: Role, message: impl Into<String>) -> Self {
        ProviderError::Contract {
            role,
            message: message.into(),
        }
    }
}

/// Vector in a provider's shared image/text embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
    normalized: bool,
}

impl Embedding {
    /// Stores the vector as given.
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    /// L2-normalizes `values`. A zero vector maps to the first basis vector so
    /// that every embedding has a defined direction.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = l2_norm(&values);
        if norm > 0.0 && norm.is_finite() {
            values.iter_mut().for_each(|v| *v /= norm);
        } else if !values.is_empty() {
            values.iter_mut().for_each(|v| *v = 0.0);
            values[0] = 1.0;
        }
        Self {
            values,
            normalized: true,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Cosine similarity; independent of the vectors' scale.
    pub fn cosine(&self, other: &Embedding) -> Result<f64, ProviderError> {
        if self.dim() != other.dim() {
            return Err(ProviderError::Config {
                role: Role::Embedder,
                message: format!("embedding dimensions differ: {} vs {}", self.dim(), other.dim()),
            });
        }
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let denom = l2_norm(&self.values) * l2_norm(&other.values);
        if denom == 0.0 {
            return Ok(0.0);
        }
        Ok((dot / denom).clamp(-1.0, 1.0))
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Payload sent to the enhancer.
///
/// `instruction` is the fully rendered template; mocks ignore it and work
/// from `text` directly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnhanceRequest {
    pub text: String,
    pub hint: String,
    pub instruction: String,
}

pub trait Enhancer: Send + Sync {
    fn id(&self) -> String;
    /// Returns the raw response text; parsing and validation happen upstream.
    fn enhance(&self, request: &EnhanceRequest) -> Result<String, ProviderError>;
}

pub trait Detector: Send + Sync {
    fn id(&self) -> String;
    fn detect(&self, image: &ImageBuffer, labels: &[String]) -> Result<MaskSet, ProviderError>;
}

pub trait KeyframeGenerator: Send + Sync {
    fn id(&self) -> String;
    fn generate_keyframe(
        &self,
        image: &ImageBuffer,
        masks: &MaskSet,
        prompt: &str,
        seed: u64,
    ) -> Result<ImageBuffer, ProviderError>;
}

pub trait Interpolator: Send + Sync {
    fn id(&self) -> String;
    fn interpolate(
        &self,
        start: &ImageBuffer,
        end: &ImageBuffer,
        prompt: &str,
        frame_count: usize,
        seed: u64,
    ) -> Result<FrameSequence, ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> String;
    fn embed_image(&self, image: &ImageBuffer) -> Result<Embedding, ProviderError>;
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError>;
}

pub trait QualityScorer: Send + Sync {
    fn id(&self) -> String;
    /// Frame quality in [0, 1].
    fn score_quality(&self, frame: &ImageBuffer) -> Result<f64, ProviderError>;
}

macro_rules! forward_arc {
    ($trait:ident { $( fn $name:ident(&self $(, $arg:ident : $ty:ty)* ) -> $ret:ty; )* }) => {
        impl<T: $trait + ?Sized> $trait for Arc<T> {
            fn id(&self) -> String {
                (**self).id()
            }
            $( fn $name(&self $(, $arg: $ty)*) -> $ret { (**self).$name($($arg),*) } )*
        }
    };
}

forward_arc!(Enhancer {
    fn enhance(&self, request: &EnhanceRequest) -> Result<String, ProviderError>;
});
forward_arc!(Detector {
    fn detect(&self, image: &ImageBuffer, labels: &[String]) -> Result<MaskSet, ProviderError>;
});
forward_arc!(KeyframeGenerator {
    fn generate_keyframe(&self, image: &ImageBuffer, masks: &MaskSet, prompt: &str, seed: u64) -> Result<ImageBuffer, ProviderError>;
});
forward_arc!(Interpolator {
    fn interpolate(&self, start: &ImageBuffer, end: &ImageBuffer, prompt: &str, frame_count: usize, seed: u64) -> Result<FrameSequence, ProviderError>;
});
forward_arc!(Embedder {
    fn embed_image(&self, image: &ImageBuffer) -> Result<Embedding, ProviderError>;
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError>;
});
forward_arc!(QualityScorer {
    fn score_quality(&self, frame: &ImageBuffer) -> Result<f64, ProviderError>;
});

/// Probes both embedding routes and fails when they disagree on dimension.
pub fn check_embedding_space(embedder: &dyn Embedder) -> Result<usize, ProviderError> {
    let probe = ImageBuffer::filled(8, 8, [128, 128, 128]).expect("fixed probe size");
    let image_dim = embedder.embed_image(&probe)?.dim();
    let text_dim = embedder.embed_text("probe")?.dim();
    if image_dim != text_dim || image_dim == 0 {
        return Err(ProviderError::Config {
            role: Role::Embedder,
            message: format!(
                "image embeddings have dimension {image_dim}, text embeddings {text_dim}"
            ),
        });
    }
    Ok(image_dim)
}

/// One provider per role. The quality scorer is optional; without it the
/// frame-quality metric is reported as unavailable.
#[derive(Clone)]
pub struct ProviderSet {
    pub enhancer: Arc<dyn Enhancer>,
    pub detector: Arc<dyn Detector>,
    pub keyframe: Arc<dyn KeyframeGenerator>,
    pub interpolator: Arc<dyn Interpolator>,
    pub embedder: Arc<dyn Embedder>,
    pub scorer: Option<Arc<dyn QualityScorer>>,
}

impl ProviderSet {
    pub fn mock() -> Self {
        Self {
            enhancer: Arc::new(mock::MockEnhancer),
            detector: Arc::new(mock::MockDetector::default()),
            keyframe: Arc::new(mock::MockKeyframe),
            interpolator: Arc::new(mock::MockInterpolator),
            embedder: Arc::new(mock::MockEmbedder),
            scorer: Some(Arc::new(mock::MockScorer)),
        }
    }

    /// Wraps every provider so that calls are tallied in `counter`.
    pub fn instrumented(self, counter: &CallCounter) -> Self {
        Self {
            enhancer: Arc::new(Instrumented::new(self.enhancer, counter.clone())),
            detector: Arc::new(Instrumented::new(self.detector, counter.clone())),
            keyframe: Arc::new(Instrumented::new(self.keyframe, counter.clone())),
            interpolator: Arc::new(Instrumented::new(self.interpolator, counter.clone())),
            embedder: Arc::new(Instrumented::new(self.embedder, counter.clone())),
            scorer: self
                .scorer
                .map(|s| Arc::new(Instrumented::new(s, counter.clone())) as Arc<dyn QualityScorer>),
        }
    }

    pub fn identities(&self) -> BTreeMap<Role, String> {
        let mut ids = BTreeMap::new();
        ids.insert(Role::Enhancer, self.enhancer.id());
        ids.insert(Role::Detector, self.detector.id());
        ids.insert(Role::Keyframe, self.keyframe.id());
        ids.insert(Role::Interpolator, self.interpolator.id());
        ids.insert(Role::Embedder, self.embedder.id());
        if let Some(s) = &self.scorer {
            ids.insert(Role::Scorer, s.id());
        }
        ids
    }
}

// Shared argument checks so that every implementation enforces the same
// preconditions.

pub(crate) fn check_labels(labels: &[String]) -> Result<(), ProviderError> {
    if labels.is_empty() {
        return Err(ProviderError::precondition(Role::Detector, "label list is empty"));
    }
    Ok(())
}

pub(crate) fn check_prompt(role: Role, prompt: &str) -> Result<(), ProviderError> {
    if prompt.trim().is_empty() {
        return Err(ProviderError::precondition(role, "prompt is empty"));
    }
    Ok(())
}

pub(crate) fn check_interpolation_args(
    start: &ImageBuffer,
    end: &ImageBuffer,
    frame_count: usize,
) -> Result<(), ProviderError> {
    if start.dimensions() != end.dimensions() {
        return Err(ProviderError::precondition(
            Role::Interpolator,
            format!(
                "start is {:?}, end is {:?}",
                start.dimensions(),
                end.dimensions()
            ),
        ));
    }
    if frame_count < 2 {
        return Err(ProviderError::precondition(
            Role::Interpolator,
            format!("frame_count must be at least 2, got {frame_count}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_is_scale_invariant() {
        let a = Embedding::raw(vec![1.0, 2.0, 3.0]);
        let b = Embedding::raw(vec![-2.0, 0.5, 4.0]);
        let scaled = Embedding::raw(vec![10.0, 20.0, 30.0]);
        let c1 = a.cosine(&b).unwrap();
        let c2 = scaled.cosine(&b).unwrap();
        assert!((c1 - c2).abs() < 1e-15);
        assert!((a.cosine(&scaled).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_dimension_mismatch_is_config_error() {
        let a = Embedding::raw(vec![1.0]);
        let b = Embedding::raw(vec![1.0, 0.0]);
        assert!(matches!(a.cosine(&b), Err(ProviderError::Config { .. })));
    }

    #[test]
    fn normalization() {
        let e = Embedding::normalized(vec![3.0, 4.0]);
        assert_eq!(e.values(), &[0.6, 0.8]);
        assert!(e.is_normalized());
        let z = Embedding::normalized(vec![0.0; 4]);
        assert_eq!(z.values(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn retryable_classification() {
        let status = |s| ProviderError::Status {
            role: Role::Detector,
            status: s,
            code: "x".into(),
            message: String::new(),
        };
        assert!(status(503).is_retryable());
        assert!(status(429).is_retryable());
        assert!(!status(400).is_retryable());
        assert!(ProviderError::Timeout { role: Role::Embedder }.is_retryable());
        assert!(!ProviderError::precondition(Role::Detector, "x").is_retryable());
    }

    struct Lopsided;
    impl Embedder for Lopsided {
        fn id(&self) -> String {
            "lopsided".into()
        }
        fn embed_image(&self, _: &ImageBuffer) -> Result<Embedding, ProviderError> {
            Ok(Embedding::normalized(vec![1.0; 4]))
        }
        fn embed_text(&self, _: &str) -> Result<Embedding, ProviderError> {
            Ok(Embedding::normalized(vec![1.0; 3]))
        }
    }

    #[test]
    fn mismatched_embedding_space_is_rejected() {
        assert!(matches!(
            check_embedding_space(&Lopsided),
            Err(ProviderError::Config { .. })
        ));
        assert_eq!(check_embedding_space(&mock::MockEmbedder).unwrap(), 64);
    }
}
