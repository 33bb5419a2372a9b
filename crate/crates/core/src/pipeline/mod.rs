//! End-to-end runner: enhance, pick an end keyframe, synthesize, persist.
//! Also drives dataset evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enhancer::{enhance_with_retry, EnhanceError, EnhancerTemplate};
use crate::eval::{build_report, EntryReport, EvalError, ReportFile, ReportInputs};
use crate::fsutil;
use crate::keyframe::{generate_end_frame, EndFrameOptions, KeyframeError};
use crate::model::{
    content_digest, FrameSequence, GenerationArtifact, GenerationRequest, ImageBuffer, ModelError,
    StageProvenance,
};
use crate::providers::{check_embedding_space, ProviderError, ProviderSet, Role};
use crate::video::{synthesize, VideoError};

pub mod artifact;
pub mod config;
pub mod dataset;

pub use artifact::ArtifactManifest;
pub use config::{ConfigSnapshot, PipelineConfig, ProviderConfig, ProvidersConfig, RemoteHandles};
pub use dataset::DatasetEntry;

pub const TELEMETRY_DIR: &str = "telemetry";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PromptEnhancer,
    KeyframeGenerator,
    VideoGenerator,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::PromptEnhancer => "prompt_enhancer",
            Stage::KeyframeGenerator => "keyframe_generator",
            Stage::VideoGenerator => "video_generator",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The underlying failure of a stage.
#[derive(Debug, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Enhance(#[from] EnhanceError),
    #[error(transparent)]
    Keyframe(#[from] KeyframeError),
    #[error(transparent)]
    Video(#[from] VideoError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    Request(#[from] ModelError),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageFailure,
    },
    #[error("artifact {}: {message}", path.display())]
    Artifact { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("entry '{id}': {source}")]
    Entry {
        id: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    /// The stage that failed, looking through entry wrappers.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::Entry { source, .. } => source.stage(),
            _ => None,
        }
    }
}

fn stage_err<E: Into<StageFailure>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: e.into(),
    }
}

/// Timing and retry figures for one run. Kept out of the artifact
/// directory so that artifacts stay byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTelemetry {
    pub request_digest: String,
    pub cache_hit: bool,
    pub started_unix_ms: u128,
    pub total_ms: f64,
    pub stages: Vec<StageTelemetry>,
    /// Retries spent by remote providers during the run, per role.
    pub retries: BTreeMap<Role, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTelemetry {
    pub stage: Stage,
    pub duration_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub artifact: GenerationArtifact,
    pub dir: PathBuf,
    pub cache_hit: bool,
    pub telemetry: RunTelemetry,
}

pub struct Pipeline {
    config: PipelineConfig,
    providers: ProviderSet,
    template: EnhancerTemplate,
    remotes: RemoteHandles,
}

fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

impl Pipeline {
    /// Builds providers from the configuration.
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let (providers, remotes) = config.build_providers_tracked()?;
        let mut p = Self::with_providers(config, providers)?;
        p.remotes = remotes;
        Ok(p)
    }

    /// Uses the given providers; the configuration's provider section is
    /// recorded but not instantiated.
    pub fn with_providers(config: PipelineConfig, providers: ProviderSet) -> Result<Self, PipelineError> {
        config.validate()?;
        let template = match &config.enhancer_template {
            Some(path) => EnhancerTemplate::load(path)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?,
            None => EnhancerTemplate::default(),
        };
        Ok(Self {
            config,
            providers,
            template,
            remotes: Vec::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn providers(&self) -> &ProviderSet {
        &self.providers
    }

    /// Checks that image and text embeddings share a space. Returns the
    /// embedding dimension.
    pub fn preflight(&self) -> Result<usize, PipelineError> {
        check_embedding_space(self.providers.embedder.as_ref())
            .map_err(|e: ProviderError| PipelineError::Config(e.to_string()))
    }

    /// Normalizes `image` to the working resolution and fills the remaining
    /// request fields from the configuration.
    pub fn request(
        &self,
        image: &ImageBuffer,
        text: &str,
        frame_count: Option<usize>,
        seed: Option<u64>,
    ) -> Result<GenerationRequest, PipelineError> {
        let request = GenerationRequest {
            input_image: image.normalize_for_ingest(self.config.resolution)?,
            user_text: text.to_string(),
            frame_count: frame_count.unwrap_or(self.config.frame_count),
            seed: seed.unwrap_or(self.config.seed),
            lambda_mask: self.config.lambda_mask,
            candidate_count: self.config.candidate_count,
        };
        request.validate()?;
        Ok(request)
    }

    pub fn artifact_dir(&self, request: &GenerationRequest) -> PathBuf {
        self.config.artifact_root.join(content_digest(request))
    }

    fn retry_totals(&self) -> BTreeMap<Role, u64> {
        let mut out = BTreeMap::new();
        for (role, r) in &self.remotes {
            *out.entry(*role).or_insert(0) += r.retries_spent();
        }
        out
    }

    /// A cached artifact is reused only if it was produced under the same
    /// content-relevant configuration and provider identities.
    fn cached(&self, dir: &Path) -> Option<GenerationArtifact> {
        if !self.config.cache || !dir.join(artifact::MANIFEST_FILE).is_file() {
            return None;
        }
        match artifact::load(dir) {
            Ok((manifest, art))
                if manifest.config == self.config.snapshot()
                    && manifest.providers == self.providers.identities() =>
            {
                Some(art)
            }
            Ok(_) => {
                tracing::info!(dir = %dir.display(), "cached artifact was made with a different setup");
                None
            }
            Err(e) => {
                tracing::warn!(dir = %dir.display(), error = %e, "unreadable cached artifact");
                None
            }
        }
    }

    /// Runs enhance, end-frame selection and synthesis, then persists the
    /// artifact. With caching on, a matching artifact on disk is returned
    /// without any provider call.
    pub fn run(&self, request: &GenerationRequest) -> Result<RunOutcome, PipelineError> {
        request.validate()?;
        let started = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let t0 = Instant::now();
        let digest = content_digest(request);
        let dir = self.config.artifact_root.join(&digest);
        let retries_before = self.retry_totals();

        if let Some(artifact) = self.cached(&dir) {
            let telemetry = RunTelemetry {
                request_digest: digest,
                cache_hit: true,
                started_unix_ms: started,
                total_ms: elapsed_ms(t0),
                stages: Vec::new(),
                retries: BTreeMap::new(),
            };
            self.write_telemetry(&telemetry);
            return Ok(RunOutcome {
                artifact,
                dir,
                cache_hit: true,
                telemetry,
            });
        }

        let p = &self.providers;
        let mut stages = Vec::with_capacity(3);

        let t = Instant::now();
        let bundle = enhance_with_retry(
            p.enhancer.as_ref(),
            &request.user_text,
            "",
            &self.template,
            self.config.enhance_attempts,
        )
        .map_err(stage_err(Stage::PromptEnhancer))?;
        stages.push(StageTelemetry {
            stage: Stage::PromptEnhancer,
            duration_ms: elapsed_ms(t),
        });

        let t = Instant::now();
        let options = EndFrameOptions {
            confidence_floor: self.config.confidence_floor,
        };
        let selection =
            generate_end_frame(request, &bundle, p, &options).map_err(stage_err(Stage::KeyframeGenerator))?;
        stages.push(StageTelemetry {
            stage: Stage::KeyframeGenerator,
            duration_ms: elapsed_ms(t),
        });

        let t = Instant::now();
        let video = synthesize(
            &request.input_image,
            &selection.image,
            &bundle,
            request.frame_count,
            request.seed,
            p.interpolator.as_ref(),
        )
        .map_err(stage_err(Stage::VideoGenerator))?;
        let video = FrameSequence::new(video.into_frames(), self.config.fps)?;
        stages.push(StageTelemetry {
            stage: Stage::VideoGenerator,
            duration_ms: elapsed_ms(t),
        });

        let artifact = GenerationArtifact {
            request_digest: digest.clone(),
            prompt_bundle: bundle,
            mask_set: selection.detected.clone(),
            end_frame: selection.image.clone(),
            video,
            provenance: vec![
                StageProvenance {
                    stage: Stage::PromptEnhancer.to_string(),
                    providers: vec![p.enhancer.id()],
                },
                StageProvenance {
                    stage: Stage::KeyframeGenerator.to_string(),
                    providers: vec![p.detector.id(), p.keyframe.id(), p.embedder.id()],
                },
                StageProvenance {
                    stage: Stage::VideoGenerator.to_string(),
                    providers: vec![p.interpolator.id()],
                },
            ],
        };
        artifact.check_against(request)?;

        artifact::persist(
            &dir,
            &artifact::PersistInputs {
                request,
                artifact: &artifact,
                selection: &selection,
                providers: p.identities(),
                config: self.config.snapshot(),
            },
        )?;

        let after = self.retry_totals();
        let retries = after
            .iter()
            .map(|(role, n)| (*role, n - retries_before.get(role).copied().unwrap_or(0)))
            .collect();
        let telemetry = RunTelemetry {
            request_digest: digest,
            cache_hit: false,
            started_unix_ms: started,
            total_ms: elapsed_ms(t0),
            stages,
            retries,
        };
        self.write_telemetry(&telemetry);
        Ok(RunOutcome {
            artifact,
            dir,
            cache_hit: false,
            telemetry,
        })
    }

    /// Best effort: telemetry loss never fails a run.
    fn write_telemetry(&self, telemetry: &RunTelemetry) {
        let dir = self.config.artifact_root.join(TELEMETRY_DIR);
        let path = dir.join(format!("{}.json", telemetry.request_digest));
        let json = serde_json::to_string_pretty(telemetry).expect("telemetry serializes");
        if let Err(e) = std::fs::create_dir_all(&dir).and_then(|_| fsutil::write_atomic(&path, json.as_bytes())) {
            tracing::warn!(path = %path.display(), error = %e, "could not write telemetry");
        }
    }

    fn evaluate_entry(&self, entry: &DatasetEntry) -> Result<EntryReport, PipelineError> {
        let image = ImageBuffer::load(&entry.image_path).map_err(|e| PipelineError::Dataset(format!(
            "{}: {e}",
            entry.image_path.display()
        )))?;
        let request = self.request(&image, &entry.text, None, None)?;
        let outcome = self.run(&request)?;
        let reference = match &entry.reference_video_dir {
            Some(dir) => Some(dataset::load_reference(
                dir,
                self.config.resolution,
                request.frame_count,
                self.config.fps,
            )?),
            None => None,
        };
        let metrics = build_report(
            &ReportInputs {
                input_image: &request.input_image,
                prompt_text: &entry.text,
                video: &outcome.artifact.video,
                reference: reference.as_ref(),
            },
            self.providers.embedder.as_ref(),
            self.providers.scorer.as_deref(),
        )?;
        Ok(EntryReport {
            id: entry.id.clone(),
            metrics,
        })
    }

    /// Runs (or loads from cache) every dataset entry, scores it, and
    /// writes `report.json` and `report.csv` to `out_dir`. Entries run
    /// concurrently up to the configured parallelism; report order follows
    /// the dataset manifest.
    pub fn evaluate(&self, manifest_path: &Path, out_dir: &Path) -> Result<ReportFile, PipelineError> {
        let entries = dataset::load_dataset(manifest_path)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.parallelism)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let reports = pool.install(|| {
            entries
                .par_iter()
                .map(|entry| {
                    self.evaluate_entry(entry).map_err(|e| PipelineError::Entry {
                        id: entry.id.clone(),
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        })?;
        let report = ReportFile::from_entries(reports)?;
        report.emit(out_dir)?;
        Ok(report)
    }
}
