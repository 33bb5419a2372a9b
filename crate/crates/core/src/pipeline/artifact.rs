//! On-disk artifact layout.
//!
//! ```text
//! <root>/<digest>/
//!   manifest.json
//!   input.png
//!   end_frame.png
//!   frames/frame_00000.png ...
//!   masks/mask_00.png ...
//!   candidates/candidate_<seed>.png
//!   scores.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fsutil;
use crate::keyframe::{CandidateScore, EndFrameSelection};
use crate::model::{
    BinaryMask, FrameRate, FrameSequence, GenerationArtifact, GenerationRequest, ImageBuffer,
    MaskEntry, MaskSet, PromptBundle, StageProvenance,
};
use crate::providers::Role;

use super::config::ConfigSnapshot;
use super::PipelineError;

pub const FORMAT: &str = "vidbridge.artifact.v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCORES_FILE: &str = "scores.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub user_text: String,
    pub frame_count: usize,
    pub seed: u64,
    pub lambda_mask: f64,
    pub candidate_count: usize,
    pub width: u32,
    pub height: u32,
    pub input: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub label: String,
    pub confidence: f64,
    pub file: String,
    /// Whether the mask was kept as a key mask for keyframe generation.
    pub key: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndFrameRecord {
    pub file: String,
    pub seed: u64,
    pub score: CandidateScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub fps: FrameRate,
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
    pub frames: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub format: String,
    pub request_digest: String,
    pub request: RequestRecord,
    pub prompt_bundle: PromptBundle,
    pub masks: Vec<MaskRecord>,
    pub end_frame: EndFrameRecord,
    pub video: VideoRecord,
    pub provenance: Vec<StageProvenance>,
    pub providers: BTreeMap<Role, String>,
    pub config: ConfigSnapshot,
}

/// One line of `scores.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub offset: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<CandidateScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub selected: bool,
}

pub fn frame_file(index: usize) -> String {
    format!("frames/frame_{index:05}.png")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn artifact_err(path: &Path, message: impl ToString) -> PipelineError {
    PipelineError::Artifact {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn write(dir: &Path, rel: &str, bytes: &[u8]) -> Result<(), PipelineError> {
    let path = dir.join(rel);
    fs::write(&path, bytes).map_err(io_err(&path))
}

fn write_image(dir: &Path, rel: &str, image: &ImageBuffer) -> Result<(), PipelineError> {
    let bytes = image.to_png().map_err(|e| artifact_err(&dir.join(rel), e))?;
    write(dir, rel, &bytes)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact records serialize");
    s.push('\n');
    s
}

/// Everything [`persist`] needs besides the artifact itself.
pub struct PersistInputs<'a> {
    pub request: &'a GenerationRequest,
    pub artifact: &'a GenerationArtifact,
    pub selection: &'a EndFrameSelection,
    pub providers: BTreeMap<Role, String>,
    pub config: ConfigSnapshot,
}

/// Writes the artifact into a staging directory next to `target`, then
/// renames it into place.
pub fn persist(target: &Path, inputs: &PersistInputs<'_>) -> Result<ArtifactManifest, PipelineError> {
    let parent = target.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let staging = fsutil::temp_sibling(target);
    let result = write_staging(&staging, inputs).and_then(|manifest| {
        fsutil::publish_dir(&staging, target).map_err(io_err(target))?;
        Ok(manifest)
    });
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

fn write_staging(dir: &Path, inputs: &PersistInputs<'_>) -> Result<ArtifactManifest, PipelineError> {
    let PersistInputs {
        request,
        artifact,
        selection,
        ..
    } = inputs;
    for sub in ["", "frames", "masks", "candidates"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }

    write_image(dir, "input.png", &request.input_image)?;
    write_image(dir, "end_frame.png", &artifact.end_frame)?;

    let mut frames = Vec::with_capacity(artifact.video.len());
    for (i, f) in artifact.video.frames().iter().enumerate() {
        let rel = frame_file(i);
        write_image(dir, &rel, f)?;
        frames.push(rel);
    }

    let key_labels: Vec<(&str, f64)> = selection
        .key_masks
        .entries()
        .iter()
        .map(|e| (e.label.as_str(), e.confidence))
        .collect();
    let mut masks = Vec::with_capacity(artifact.mask_set.len());
    for (i, e) in artifact.mask_set.entries().iter().enumerate() {
        let rel = format!("masks/mask_{i:02}.png");
        let bytes = e.mask.to_png().map_err(|err| artifact_err(&dir.join(&rel), err))?;
        write(dir, &rel, &bytes)?;
        masks.push(MaskRecord {
            label: e.label.clone(),
            confidence: e.confidence,
            file: rel,
            key: key_labels.contains(&(e.label.as_str(), e.confidence)),
        });
    }

    let mut scores = Vec::with_capacity(selection.candidates.len());
    let mut sorted: Vec<_> = selection.candidates.iter().collect();
    sorted.sort_by_key(|c| c.offset);
    for c in sorted {
        let record = match &c.outcome {
            Ok((img, score)) => {
                let rel = format!("candidates/candidate_{}.png", c.seed);
                write_image(dir, &rel, img)?;
                ScoreRecord {
                    offset: c.offset,
                    seed: c.seed,
                    file: Some(rel),
                    score: Some(*score),
                    error: None,
                    selected: c.seed == selection.seed,
                }
            }
            Err(e) => ScoreRecord {
                offset: c.offset,
                seed: c.seed,
                file: None,
                score: None,
                error: Some(e.to_string()),
                selected: false,
            },
        };
        scores.push(record);
    }
    write(dir, SCORES_FILE, to_json(&scores).as_bytes())?;

    let (width, height) = artifact.video.dimensions();
    let manifest = ArtifactManifest {
        format: FORMAT.to_string(),
        request_digest: artifact.request_digest.clone(),
        request: RequestRecord {
            user_text: request.user_text.clone(),
            frame_count: request.frame_count,
            seed: request.seed,
            lambda_mask: request.lambda_mask,
            candidate_count: request.candidate_count,
            width: request.input_image.width(),
            height: request.input_image.height(),
            input: "input.png".into(),
        },
        prompt_bundle: artifact.prompt_bundle.clone(),
        masks,
        end_frame: EndFrameRecord {
            file: "end_frame.png".into(),
            seed: selection.seed,
            score: selection.score,
        },
        video: VideoRecord {
            fps: artifact.video.fps(),
            width,
            height,
            frame_count: artifact.video.len(),
            frames,
        },
        provenance: artifact.provenance.clone(),
        providers: inputs.providers.clone(),
        config: inputs.config.clone(),
    };
    write(dir, MANIFEST_FILE, to_json(&manifest).as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<ArtifactManifest, PipelineError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: ArtifactManifest = serde_json::from_str(&text).map_err(|e| artifact_err(&path, e))?;
    if manifest.format != FORMAT {
        return Err(artifact_err(&path, format!("unknown format '{}'", manifest.format)));
    }
    Ok(manifest)
}

pub fn read_scores(dir: &Path) -> Result<Vec<ScoreRecord>, PipelineError> {
    let path = dir.join(SCORES_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| artifact_err(&path, e))
}

fn read_image(dir: &Path, rel: &str) -> Result<ImageBuffer, PipelineError> {
    let path = dir.join(rel);
    ImageBuffer::load(&path).map_err(|e| artifact_err(&path, e))
}

/// Loads a persisted artifact back into memory.
pub fn load(dir: &Path) -> Result<(ArtifactManifest, GenerationArtifact), PipelineError> {
    let manifest = read_manifest(dir)?;
    let end_frame = read_image(dir, &manifest.end_frame.file)?;
    let frames = manifest
        .video
        .frames
        .iter()
        .map(|rel| read_image(dir, rel))
        .collect::<Result<Vec<_>, _>>()?;
    let video = FrameSequence::new(frames, manifest.video.fps).map_err(|e| artifact_err(dir, e))?;
    if video.len() != manifest.video.frame_count {
        return Err(artifact_err(dir, "frame list disagrees with frame_count"));
    }

    let mut entries = Vec::with_capacity(manifest.masks.len());
    for m in &manifest.masks {
        let path: PathBuf = dir.join(&m.file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        entries.push(MaskEntry {
            label: m.label.clone(),
            confidence: m.confidence,
            mask: BinaryMask::from_png(&bytes).map_err(|e| artifact_err(&path, e))?,
        });
    }
    let mask_set = MaskSet::new(manifest.request.width, manifest.request.height, entries)
        .map_err(|e| artifact_err(dir, e))?;

    let artifact = GenerationArtifact {
        request_digest: manifest.request_digest.clone(),
        prompt_bundle: manifest.prompt_bundle.clone(),
        mask_set,
        end_frame,
        video,
        provenance: manifest.provenance.clone(),
    };
    Ok((manifest, artifact))
}
