//! Retry with exponential backoff, as a wrapper over any provider.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    Detector, Embedder, Embedding, EnhanceRequest, Enhancer, Interpolator, KeyframeGenerator,
    ProviderError, QualityScorer,
};
use crate::model::{FrameSequence, ImageBuffer, MaskSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    #[serde(default = "default_max_backoff_ms")]
    pub max_backoff_ms: u64,
}

fn default_max_backoff_ms() -> u64 {
    30_000
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base_ms: 200,
            max_backoff_ms: default_max_backoff_ms(),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): `base * 2^retry`, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.min(63)).unwrap_or(u64::MAX);
        let ms = self
            .backoff_base_ms
            .saturating_mul(factor)
            .min(self.max_backoff_ms.max(self.backoff_base_ms));
        Duration::from_millis(ms)
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or has
    /// failed `max_retries + 1` times. Returns the value and how many retries
    /// were spent.
    pub fn run<T>(
        &self,
        sleep: &dyn Fn(Duration),
        mut op: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<(T, u32), ProviderError> {
        let mut retry = 0;
        loop {
            match op() {
                Ok(v) => return Ok((v, retry)),
                Err(e) if e.is_retryable() && retry < self.max_retries => {
                    tracing::debug!(error = %e, retry, "retrying provider call");
                    sleep(self.delay(retry));
                    retry += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Adds [`RetryPolicy`] semantics to every call of the wrapped provider.
///
/// Each call owns its own attempt counter; the only shared state is a
/// statistics counter of retries spent.
pub struct Retrying<P> {
    inner: P,
    policy: RetryPolicy,
    sleep: Sleeper,
    retries: Arc<AtomicU64>,
}

impl<P> Retrying<P> {
    pub fn new(inner: P, policy: RetryPolicy) -> Self {
        Self {
            inner,
            policy,
            sleep: Arc::new(std::thread::sleep),
            retries: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Replaces the sleep function (tests use a recorder instead of waiting).
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    pub fn retries_spent(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    /// Retries are tallied whether or not the call finally succeeds.
    fn call<T>(&self, mut op: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let mut attempts = 0u64;
        let result = self.policy.run(&*self.sleep, || {
            attempts += 1;
            op()
        });
        self.retries.fetch_add(attempts.saturating_sub(1), Ordering::Relaxed);
        result.map(|(v, _)| v)
    }
}

impl<P: Enhancer> Enhancer for Retrying<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn enhance(&self, request: &EnhanceRequest) -> Result<String, ProviderError> {
        self.call(|| self.inner.enhance(request))
    }
}

impl<P: Detector> Detector for Retrying<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn detect(&self, image: &ImageBuffer, labels: &[String]) -> Result<MaskSet, ProviderError> {
        self.call(|| self.inner.detect(image, labels))
    }
}

impl<P: KeyframeGenerator> KeyframeGenerator for Retrying<P> {
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
        self.call(|| self.inner.generate_keyframe(image, masks, prompt, seed))
    }
}

impl<P: Interpolator> Interpolator for Retrying<P> {
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
        self.call(|| self.inner.interpolate(start, end, prompt, frame_count, seed))
    }
}

impl<P: Embedder> Embedder for Retrying<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn embed_image(&self, image: &ImageBuffer) -> Result<Embedding, ProviderError> {
        self.call(|| self.inner.embed_image(image))
    }
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        self.call(|| self.inner.embed_text(text))
    }
}

impl<P: QualityScorer> QualityScorer for Retrying<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn score_quality(&self, frame: &ImageBuffer) -> Result<f64, ProviderError> {
        self.call(|| self.inner.score_quality(frame))
    }
}

#[cfg(test)]
mod tests {
    use std::cell::{Cell, RefCell};

    use super::*;
    use crate::providers::Role;

    fn transient() -> ProviderError {
        ProviderError::Transport {
            role: Role::Detector,
            message: "connection reset".into(),
        }
    }

    #[test]
    fn delays_are_monotone_and_capped() {
        let p = RetryPolicy {
            max_retries: 40,
            backoff_base_ms: 100,
            max_backoff_ms: 5_000,
        };
        let delays: Vec<_> = (0..40).map(|r| p.delay(r)).collect();
        assert_eq!(delays[0], Duration::from_millis(100));
        assert_eq!(delays[3], Duration::from_millis(800));
        assert!(delays.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*delays.last().unwrap(), Duration::from_millis(5_000));
    }

    #[test]
    fn fail_k_then_succeed() {
        let policy = RetryPolicy {
            max_retries: 3,
            backoff_base_ms: 1,
            max_backoff_ms: 100,
        };
        for k in 0..=4u32 {
            let calls = Cell::new(0u32);
            let slept = RefCell::new(Vec::new());
            let result = policy.run(&|d| slept.borrow_mut().push(d), || {
                calls.set(calls.get() + 1);
                if calls.get() <= k {
                    Err(transient())
                } else {
                    Ok(calls.get())
                }
            });
            if k <= policy.max_retries {
                assert_eq!(result.unwrap(), (k + 1, k));
            } else {
                assert_eq!(result.unwrap_err(), transient());
                assert_eq!(calls.get(), policy.max_retries + 1);
            }
            let slept = slept.into_inner();
            assert!(slept.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn non_retryable_errors_fail_immediately() {
        let calls = Cell::new(0);
        let err = RetryPolicy::default()
            .run(&|_| {}, || -> Result<(), _> {
                calls.set(calls.get() + 1);
                Err(ProviderError::precondition(Role::Detector, "no labels"))
            })
            .unwrap_err();
        assert_eq!(calls.get(), 1);
        assert!(matches!(err, ProviderError::Precondition { .. }));
    }
}
