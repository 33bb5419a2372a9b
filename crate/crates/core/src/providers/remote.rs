//! HTTP+JSON adapter for out-of-process providers.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::wire::{self, ErrorReply};
use super::{
    check_interpolation_args, check_labels, check_prompt, Detector, Embedder, Embedding,
    EnhanceRequest, Enhancer, Interpolator, KeyframeGenerator, ProviderError, QualityScorer,
    RetryPolicy, Retrying, Role,
};
use crate::enhancer::render_sections;
use crate::model::{FrameRate, FrameSequence, ImageBuffer, MaskSet};

/// Environment variable holding the bearer token sent to every provider.
pub const TOKEN_ENV: &str = "VIDBRIDGE_PROVIDER_TOKEN";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderEndpoint {
    pub role: Role,
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
}

impl ProviderEndpoint {
    pub fn new(role: Role, base_url: impl Into<String>) -> Self {
        Self {
            role,
            base_url: base_url.into(),
            timeout_ms: 60_000,
            max_retries: 3,
            backoff_base_ms: 200,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.timeout_ms == 0 {
            return Err(ProviderError::Config {
                role: self.role,
                message: "timeout must be positive".into(),
            });
        }
        url::Url::parse(&self.base_url).map_err(|e| ProviderError::Config {
            role: self.role,
            message: format!("bad base_url '{}': {e}", self.base_url),
        })?;
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            backoff_base_ms: self.backoff_base_ms,
            ..RetryPolicy::default()
        }
    }
}

/// Single-attempt client for one endpoint. Use [`connect`] for the retrying
/// form.
pub struct RemoteProvider {
    endpoint: ProviderEndpoint,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

pub type RetryingRemote = Retrying<RemoteProvider>;

/// Builds a client wrapped in the endpoint's retry policy.
pub fn connect(endpoint: ProviderEndpoint, token: Option<String>) -> Result<RetryingRemote, ProviderError> {
    let policy = endpoint.retry_policy();
    Ok(Retrying::new(RemoteProvider::new(endpoint, token)?, policy))
}

impl RemoteProvider {
    pub fn new(endpoint: ProviderEndpoint, token: Option<String>) -> Result<Self, ProviderError> {
        endpoint.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| ProviderError::Config {
                role: endpoint.role,
                message: e.to_string(),
            })?;
        Ok(Self {
            endpoint,
            token,
            http,
        })
    }

    pub fn endpoint(&self) -> &ProviderEndpoint {
        &self.endpoint
    }

    fn role(&self) -> Role {
        self.endpoint.role
    }

    fn url(&self, route: &str) -> String {
        format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), route)
    }

    /// POSTs `body` and returns the 2xx response text.
    fn post_raw<B: Serialize>(&self, route: &str, body: &B) -> Result<String, ProviderError> {
        let role = self.role();
        let mut req = self.http.post(self.url(route)).json(body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| transport_error(role, e))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| transport_error(role, e))?;
        if !status.is_success() {
            let (code, message) = match serde_json::from_str::<ErrorReply>(&text) {
                Ok(e) => (e.code, e.message),
                Err(_) => ("http_error".to_string(), text),
            };
            return Err(ProviderError::Status {
                role,
                status: status.as_u16(),
                code,
                message,
            });
        }
        Ok(text)
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, route: &str, body: &B) -> Result<R, ProviderError> {
        let text = self.post_raw(route, body)?;
        serde_json::from_str(&text).map_err(|e| self.decode_error(e))
    }

    fn decode_error(&self, e: impl std::fmt::Display) -> ProviderError {
        ProviderError::Decode {
            role: self.role(),
            message: e.to_string(),
        }
    }

    fn encode(&self, image: &ImageBuffer) -> Result<String, ProviderError> {
        wire::encode_image(image).map_err(|e| ProviderError::precondition(self.role(), e.to_string()))
    }

    fn decode(&self, b64: &str) -> Result<ImageBuffer, ProviderError> {
        wire::decode_image(b64).map_err(|e| self.decode_error(e))
    }
}

fn transport_error(role: Role, e: reqwest::Error) -> ProviderError {
    if e.is_timeout() {
        ProviderError::Timeout { role }
    } else {
        ProviderError::Transport {
            role,
            message: e.to_string(),
        }
    }
}

impl Enhancer for RemoteProvider {
    fn id(&self) -> String {
        format!("remote:{}@{}", self.role(), self.endpoint.base_url)
    }

    /// Structured replies are rendered into the labeled-section text form;
    /// anything else is handed back verbatim so the caller's parser can
    /// reject it and keep the payload.
    fn enhance(&self, request: &EnhanceRequest) -> Result<String, ProviderError> {
        check_prompt(Role::Enhancer, &request.text)?;
        let body = wire::EnhanceBody {
            text: request.text.clone(),
            hint: request.hint.clone(),
            instruction: request.instruction.clone(),
        };
        let text = self.post_raw(wire::ENHANCE, &body)?;
        Ok(match serde_json::from_str::<wire::EnhanceReply>(&text) {
            Ok(r) => render_sections(&r.keywords, &r.frame_state, &r.optimization_prompt),
            Err(_) => text,
        })
    }
}

impl Detector for RemoteProvider {
    fn id(&self) -> String {
        format!("remote:{}@{}", self.role(), self.endpoint.base_url)
    }

    fn detect(&self, image: &ImageBuffer, labels: &[String]) -> Result<MaskSet, ProviderError> {
        check_labels(labels)?;
        let body = wire::DetectBody {
            image_png_b64: self.encode(image)?,
            labels: labels.to_vec(),
        };
        let reply: wire::DetectReply = self.post(wire::DETECT, &body)?;
        wire::decode_masks(image.width(), image.height(), &reply.entries).map_err(|e| self.decode_error(e))
    }
}

impl KeyframeGenerator for RemoteProvider {
    fn id(&self) -> String {
        format!("remote:{}@{}", self.role(), self.endpoint.base_url)
    }

    fn generate_keyframe(
        &self,
        image: &ImageBuffer,
        masks: &MaskSet,
        prompt: &str,
        seed: u64,
    ) -> Result<ImageBuffer, ProviderError> {
        check_prompt(Role::Keyframe, prompt)?;
        let body = wire::KeyframeBody {
            image_png_b64: self.encode(image)?,
            masks: wire::encode_masks(masks)
                .map_err(|e| ProviderError::precondition(Role::Keyframe, e.to_string()))?,
            prompt: prompt.to_string(),
            seed,
        };
        let reply: wire::ImageReply = self.post(wire::KEYFRAME, &body)?;
        let out = self.decode(&reply.image_png_b64)?;
        if out.dimensions() != image.dimensions() {
            return Err(ProviderError::contract(
                Role::Keyframe,
                format!("returned {:?}, input was {:?}", out.dimensions(), image.dimensions()),
            ));
        }
        Ok(out)
    }
}

impl Interpolator for RemoteProvider {
    fn id(&self) -> String {
        format!("remote:{}@{}", self.role(), self.endpoint.base_url)
    }

    fn interpolate(
        &self,
        start: &ImageBuffer,
        end: &ImageBuffer,
        prompt: &str,
        frame_count: usize,
        seed: u64,
    ) -> Result<FrameSequence, ProviderError> {
        check_interpolation_args(start, end, frame_count)?;
        let body = wire::InterpolateBody {
            start_png_b64: self.encode(start)?,
            end_png_b64: self.encode(end)?,
            prompt: prompt.to_string(),
            frame_count,
            seed,
        };
        let reply: wire::InterpolateReply = self.post(wire::INTERPOLATE, &body)?;
        let frames = reply
            .frames
            .iter()
            .map(|f| self.decode(f))
            .collect::<Result<Vec<_>, _>>()?;
        FrameSequence::new(frames, FrameRate::default())
            .map_err(|e| ProviderError::contract(Role::Interpolator, e.to_string()))
    }
}

impl Embedder for RemoteProvider {
    fn id(&self) -> String {
        format!("remote:{}@{}", self.role(), self.endpoint.base_url)
    }

    fn embed_image(&self, image: &ImageBuffer) -> Result<Embedding, ProviderError> {
        let body = wire::EmbedImageBody {
            image_png_b64: self.encode(image)?,
        };
        let reply: wire::EmbedReply = self.post(wire::EMBED_IMAGE, &body)?;
        embedding_from(reply.values)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        let body = wire::EmbedTextBody {
            text: text.to_string(),
        };
        let reply: wire::EmbedReply = self.post(wire::EMBED_TEXT, &body)?;
        embedding_from(reply.values)
    }
}

fn embedding_from(values: Vec<f64>) -> Result<Embedding, ProviderError> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(ProviderError::contract(
            Role::Embedder,
            "embedding must be a non-empty finite vector",
        ));
    }
    Ok(Embedding::normalized(values))
}

impl QualityScorer for RemoteProvider {
    fn id(&self) -> String {
        format!("remote:{}@{}", self.role(), self.endpoint.base_url)
    }

    fn score_quality(&self, frame: &ImageBuffer) -> Result<f64, ProviderError> {
        let body = wire::ScoreBody {
            image_png_b64: self.encode(frame)?,
        };
        let reply: wire::ScoreReply = self.post(wire::SCORE, &body)?;
        if !(0.0..=1.0).contains(&reply.score) {
            return Err(ProviderError::contract(
                Role::Scorer,
                format!("score {} outside [0,1]", reply.score),
            ));
        }
        Ok(reply.score)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_validation() {
        let mut ep = ProviderEndpoint::new(Role::Detector, "http://127.0.0.1:9");
        assert!(ep.validate().is_ok());
        ep.timeout_ms = 0;
        assert!(ep.validate().is_err());
        let ep = ProviderEndpoint::new(Role::Detector, "not a url");
        assert!(matches!(ep.validate(), Err(ProviderError::Config { .. })));
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        // Port 9 (discard) is closed on loopback in the test sandbox.
        let mut ep = ProviderEndpoint::new(Role::Embedder, "http://127.0.0.1:9");
        ep.timeout_ms = 2_000;
        let p = RemoteProvider::new(ep, None).unwrap();
        let err = p.embed_text("x").unwrap_err();
        assert!(err.is_retryable(), "{err:?}");
    }
}
