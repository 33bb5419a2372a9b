//! TOML pipeline configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::enhancer::DEFAULT_ATTEMPTS;
use crate::keyframe::{DEFAULT_CANDIDATES, DEFAULT_CONFIDENCE_FLOOR, DEFAULT_LAMBDA};
use crate::model::{FrameRate, DEFAULT_RESOLUTION};
use crate::providers::mock::{
    MockDetector, MockEmbedder, MockEnhancer, MockInterpolator, MockKeyframe, MockScorer,
};
use crate::providers::remote::{self, ProviderEndpoint, RetryingRemote};
use crate::providers::{
    Detector, Embedder, Enhancer, Interpolator, KeyframeGenerator, ProviderSet,
    QualityScorer, RetryPolicy, Role,
};

use super::PipelineError;

/// Remote clients by role, kept so their retry counters can be read.
pub type RemoteHandles = Vec<(Role, Arc<RetryingRemote>)>;

pub const DEFAULT_FRAME_COUNT: usize = 16;

/// How one role is filled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    #[default]
    Mock,
    Remote {
        base_url: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_ms: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_retries: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        backoff_base_ms: Option<u64>,
    },
    /// Only meaningful for the optional quality scorer.
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub enhancer: ProviderConfig,
    pub detector: ProviderConfig,
    pub keyframe: ProviderConfig,
    pub interpolator: ProviderConfig,
    pub embedder: ProviderConfig,
    pub scorer: ProviderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub artifact_root: PathBuf,
    pub cache: bool,
    pub lambda_mask: f64,
    pub candidate_count: usize,
    pub frame_count: usize,
    pub seed: u64,
    pub resolution: u32,
    pub fps: FrameRate,
    pub confidence_floor: f64,
    pub enhance_attempts: usize,
    /// Upper bound on dataset entries evaluated concurrently.
    pub parallelism: usize,
    /// Optional path to a custom enhancer instruction template.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enhancer_template: Option<PathBuf>,
    pub retry: RetryPolicy,
    pub providers: ProvidersConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            artifact_root: PathBuf::from("artifacts"),
            cache: true,
            lambda_mask: DEFAULT_LAMBDA,
            candidate_count: DEFAULT_CANDIDATES,
            frame_count: DEFAULT_FRAME_COUNT,
            seed: 0,
            resolution: DEFAULT_RESOLUTION,
            fps: FrameRate::default(),
            confidence_floor: DEFAULT_CONFIDENCE_FLOOR,
            enhance_attempts: DEFAULT_ATTEMPTS,
            parallelism: 2,
            enhancer_template: None,
            retry: RetryPolicy::default(),
            providers: ProvidersConfig::default(),
        }
    }
}

/// The subset of the configuration that influences artifact content.
/// Recorded in every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub lambda_mask: f64,
    pub candidate_count: usize,
    pub frame_count: usize,
    pub seed: u64,
    pub resolution: u32,
    pub fps: FrameRate,
    pub confidence_floor: f64,
    pub enhance_attempts: usize,
    pub enhancer_template: Option<String>,
    pub providers: ProvidersConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.frame_count < 2 {
            return bad(format!("frame_count must be at least 2, got {}", self.frame_count));
        }
        if self.candidate_count < 1 {
            return bad("candidate_count must be at least 1".into());
        }
        if !(self.lambda_mask.is_finite() && self.lambda_mask >= 0.0) {
            return bad(format!("lambda_mask must be non-negative, got {}", self.lambda_mask));
        }
        if self.resolution == 0 {
            return bad("resolution must be positive".into());
        }
        if self.fps.num == 0 || self.fps.den == 0 {
            return bad("fps must be a positive rational".into());
        }
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return bad(format!("confidence_floor must be in [0,1], got {}", self.confidence_floor));
        }
        if self.enhance_attempts == 0 {
            return bad("enhance_attempts must be at least 1".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        let p = &self.providers;
        for (role, cfg) in [
            (Role::Enhancer, &p.enhancer),
            (Role::Detector, &p.detector),
            (Role::Keyframe, &p.keyframe),
            (Role::Interpolator, &p.interpolator),
            (Role::Embedder, &p.embedder),
        ] {
            if *cfg == ProviderConfig::Disabled {
                return bad(format!("the {role} provider cannot be disabled"));
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> ConfigSnapshot {
        ConfigSnapshot {
            lambda_mask: self.lambda_mask,
            candidate_count: self.candidate_count,
            frame_count: self.frame_count,
            seed: self.seed,
            resolution: self.resolution,
            fps: self.fps,
            confidence_floor: self.confidence_floor,
            enhance_attempts: self.enhance_attempts,
            enhancer_template: self
                .enhancer_template
                .as_ref()
                .map(|p| p.display().to_string()),
            providers: self.providers.clone(),
        }
    }

    fn endpoint(&self, role: Role, cfg: &ProviderConfig) -> Option<ProviderEndpoint> {
        match cfg {
            ProviderConfig::Remote {
                base_url,
                timeout_ms,
                max_retries,
                backoff_base_ms,
            } => Some(ProviderEndpoint {
                role,
                base_url: base_url.clone(),
                timeout_ms: timeout_ms.unwrap_or(60_000),
                max_retries: max_retries.unwrap_or(self.retry.max_retries),
                backoff_base_ms: backoff_base_ms.unwrap_or(self.retry.backoff_base_ms),
            }),
            _ => None,
        }
    }

    /// Instantiates every configured provider. Remote providers get the
    /// bearer token from [`remote::TOKEN_ENV`] when set.
    pub fn build_providers(&self) -> Result<ProviderSet, PipelineError> {
        self.build_providers_tracked().map(|(set, _)| set)
    }

    /// Like [`build_providers`](Self::build_providers), also returning the
    /// remote clients so their retry counters can be read.
    pub fn build_providers_tracked(&self) -> Result<(ProviderSet, RemoteHandles), PipelineError> {
        let token = std::env::var(remote::TOKEN_ENV).ok().filter(|t| !t.is_empty());
        let p = &self.providers;
        let mut handles = Vec::new();
        let mut connect = |role: Role, cfg: &ProviderConfig| -> Result<Option<Arc<RetryingRemote>>, PipelineError> {
            match self.endpoint(role, cfg) {
                Some(ep) => {
                    let client = Arc::new(
                        remote::connect(ep, token.clone()).map_err(|e| PipelineError::Config(e.to_string()))?,
                    );
                    handles.push((role, client.clone()));
                    Ok(Some(client))
                }
                None => Ok(None),
            }
        };

        let enhancer: Arc<dyn Enhancer> = match connect(Role::Enhancer, &p.enhancer)? {
            Some(r) => r,
            None => Arc::new(MockEnhancer),
        };
        let detector: Arc<dyn Detector> = match connect(Role::Detector, &p.detector)? {
            Some(r) => r,
            None => Arc::new(MockDetector::default()),
        };
        let keyframe: Arc<dyn KeyframeGenerator> = match connect(Role::Keyframe, &p.keyframe)? {
            Some(r) => r,
            None => Arc::new(MockKeyframe),
        };
        let interpolator: Arc<dyn Interpolator> = match connect(Role::Interpolator, &p.interpolator)? {
            Some(r) => r,
            None => Arc::new(MockInterpolator),
        };
        let embedder: Arc<dyn Embedder> = match connect(Role::Embedder, &p.embedder)? {
            Some(r) => r,
            None => Arc::new(MockEmbedder),
        };
        let scorer: Option<Arc<dyn QualityScorer>> = match &p.scorer {
            ProviderConfig::Disabled => None,
            cfg => match connect(Role::Scorer, cfg)? {
                Some(r) => Some(r),
                None => Some(Arc::new(MockScorer)),
            },
        };
        let set = ProviderSet {
            enhancer,
            detector,
            keyframe,
            interpolator,
            embedder,
            scorer,
        };
        Ok((set, handles))
    }
}
