//! JSON bodies of the provider HTTP protocol.
//!
//! Images travel as base64-encoded PNG. Masks inside `/v1/keyframe` requests
//! and `/v1/detect` responses are single-channel PNGs.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::model::{BinaryMask, ImageBuffer, MaskEntry, MaskSet, ModelError};

pub const ENHANCE: &str = "/v1/enhance";
pub const DETECT: &str = "/v1/detect";
pub const KEYFRAME: &str = "/v1/keyframe";
pub const INTERPOLATE: &str = "/v1/interpolate";
pub const EMBED_IMAGE: &str = "/v1/embed_image";
pub const EMBED_TEXT: &str = "/v1/embed_text";
pub const SCORE: &str = "/v1/score";
pub const HEALTH: &str = "/v1/health";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceBody {
    pub text: String,
    pub hint: String,
    /// Rendered instruction for LLM-backed servers; optional on the wire.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceReply {
    pub keywords: Vec<String>,
    pub frame_state: String,
    pub optimization_prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectBody {
    pub image_png_b64: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMask {
    pub label: String,
    pub confidence: f64,
    pub mask_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReply {
    pub entries: Vec<WireMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeBody {
    pub image_png_b64: String,
    pub masks: Vec<WireMask>,
    pub prompt: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReply {
    pub image_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolateBody {
    pub start_png_b64: String,
    pub end_png_b64: String,
    pub prompt: String,
    pub frame_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolateReply {
    pub frames: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedImageBody {
    pub image_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedTextBody {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedReply {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBody {
    pub image_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReply {
    pub score: f64,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub code: String,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn encode_image(image: &ImageBuffer) -> Result<String, ModelError> {
    Ok(B64.encode(image.to_png()?))
}

pub fn decode_image(b64: &str) -> Result<ImageBuffer, WireError> {
    Ok(ImageBuffer::from_png(&B64.decode(b64)?)?)
}

pub fn encode_masks(masks: &MaskSet) -> Result<Vec<WireMask>, ModelError> {
    masks
        .entries()
        .iter()
        .map(|e| {
            Ok(WireMask {
                label: e.label.clone(),
                confidence: e.confidence,
                mask_png_b64: B64.encode(e.mask.to_png()?),
            })
        })
        .collect()
}

pub fn decode_masks(width: u32, height: u32, wire: &[WireMask]) -> Result<MaskSet, WireError> {
    let entries = wire
        .iter()
        .map(|m| {
            Ok(MaskEntry {
                label: m.label.clone(),
                confidence: m.confidence,
                mask: BinaryMask::from_png(&B64.decode(&m.mask_png_b64)?)?,
            })
        })
        .collect::<Result<Vec<_>, WireError>>()?;
    Ok(MaskSet::new(width, height, entries)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_survive_the_wire() {
        let mask = BinaryMask::from_fn(4, 3, |x, y| x > y).unwrap();
        let set = MaskSet::new(
            4,
            3,
            vec![MaskEntry {
                label: "dog".into(),
                confidence: 0.75,
                mask,
            }],
        )
        .unwrap();
        let wire = encode_masks(&set).unwrap();
        let json = serde_json::to_string(&wire).unwrap();
        let back: Vec<WireMask> = serde_json::from_str(&json).unwrap();
        assert_eq!(decode_masks(4, 3, &back).unwrap(), set);
        assert!(decode_masks(5, 3, &back).is_err());
    }

    #[test]
    fn enhance_body_omits_empty_instruction() {
        let body = EnhanceBody {
            text: "t".into(),
            hint: "h".into(),
            instruction: String::new(),
        };
        assert_eq!(serde_json::to_string(&body).unwrap(), r#"{"text":"t","hint":"h"}"#);
        let parsed: EnhanceBody = serde_json::from_str(r#"{"text":"t","hint":"h"}"#).unwrap();
        assert_eq!(parsed, body);
    }

    #[test]
    fn bad_base64_is_an_error() {
        assert!(matches!(decode_image("@@@"), Err(WireError::Base64(_))));
    }
}
