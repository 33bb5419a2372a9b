//! Evaluation harness: four-dimension metric suite and report files.
//!
//! | dimension               | metric                                  |
//! |-------------------------|-----------------------------------------|
//! | control-video alignment | MSE (first), image-video CLIP, text-video CLIP |
//! | motion effects          | video/reference CLIP, corresponding frames |
//! | temporal consistency    | adjacent-frame CLIP, video/reference CLIP |
//! | frame quality           | DOVER (provider-backed), video/reference SSIM |
//!
//! The two video/reference CLIP fields are computed identically.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FrameSequence, ImageBuffer};
use crate::providers::{Embedder, ProviderError, QualityScorer};

pub mod metrics;
pub mod preference;
pub mod ssim;

pub use metrics::{
    clip_corresponding, clip_image_video, clip_refvideo, clip_temporal, clip_text_video,
    mse_first, ssim, ssim_video,
};
pub use preference::{
    aggregate_preferences, format_percent, Choice, PreferenceDimension, PreferenceTally,
    PreferenceVote,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("temporal metrics need at least 2 frames, got {0}")]
    TooShort(usize),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("metric {field} = {value} outside its range")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("report parse: {0}")]
    Parse(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Column names in table order.
pub const METRIC_COLUMNS: [&str; 8] = [
    "mse_first",
    "image_genvideo_clip",
    "genvideo_text_clip",
    "genvideo_refvideo_corresponding",
    "genvideo_clip_temporal",
    "genvideo_refvideo_clip",
    "dover",
    "genvideo_refvideo_ssim",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse_first: f64,
    pub image_genvideo_clip: f64,
    pub genvideo_text_clip: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genvideo_refvideo_corresponding: Option<f64>,
    pub genvideo_clip_temporal: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genvideo_refvideo_clip: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dover: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genvideo_refvideo_ssim: Option<f64>,
}

impl MetricReport {
    /// Values in column order.
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.mse_first),
            Some(self.image_genvideo_clip),
            Some(self.genvideo_text_clip),
            self.genvideo_refvideo_corresponding,
            Some(self.genvideo_clip_temporal),
            self.genvideo_refvideo_clip,
            self.dover,
            self.genvideo_refvideo_ssim,
        ]
    }

    pub fn from_values(v: [Option<f64>; 8]) -> Result<Self, EvalError> {
        let req = |i: usize| {
            v[i].ok_or_else(|| EvalError::Parse(format!("{} is required", METRIC_COLUMNS[i])))
        };
        let report = Self {
            mse_first: req(0)?,
            image_genvideo_clip: req(1)?,
            genvideo_text_clip: req(2)?,
            genvideo_refvideo_corresponding: v[3],
            genvideo_clip_temporal: req(4)?,
            genvideo_refvideo_clip: v[5],
            dover: v[6],
            genvideo_refvideo_ssim: v[7],
        };
        Ok(report)
    }

    /// Every present value lies in its documented range, and the
    /// reference-dependent fields are present together or not at all.
    pub fn validate(&self) -> Result<(), EvalError> {
        let ranges: [(f64, f64); 8] = [
            (0.0, f64::INFINITY),
            (-1.0, 1.0),
            (-1.0, 1.0),
            (-1.0, 1.0),
            (-1.0, 1.0),
            (-1.0, 1.0),
            (0.0, 1.0),
            (-1.0, 1.0),
        ];
        for ((v, (lo, hi)), name) in self.values().iter().zip(ranges).zip(METRIC_COLUMNS) {
            if let Some(v) = v {
                if !(v >= &lo && v <= &hi) {
                    return Err(EvalError::OutOfRange { field: name, value: *v });
                }
            }
        }
        let refs = [
            self.genvideo_refvideo_corresponding.is_some(),
            self.genvideo_refvideo_clip.is_some(),
            self.genvideo_refvideo_ssim.is_some(),
        ];
        if refs.iter().any(|r| *r) && !refs.iter().all(|r| *r) {
            return Err(EvalError::Parse(
                "reference metrics must be all present or all absent".into(),
            ));
        }
        Ok(())
    }

    /// Field-wise mean; optional fields average over the reports that carry
    /// them and stay absent if none do.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let mut out = [None; 8];
        for (i, slot) in out.iter_mut().enumerate() {
            // sorted so the mean does not depend on entry order
            let mut present: Vec<f64> = reports.iter().filter_map(|r| r.values()[i]).collect();
            present.sort_by(f64::total_cmp);
            if !present.is_empty() {
                *slot = Some(present.iter().sum::<f64>() / present.len() as f64);
            }
        }
        MetricReport::from_values(out).ok()
    }
}

/// Everything the metric suite needs for one video.
pub struct ReportInputs<'a> {
    pub input_image: &'a ImageBuffer,
    pub prompt_text: &'a str,
    pub video: &'a FrameSequence,
    pub reference: Option<&'a FrameSequence>,
}

/// Computes every metric the inputs allow. Each frame is embedded once.
pub fn build_report(
    inputs: &ReportInputs<'_>,
    embedder: &dyn Embedder,
    scorer: Option<&dyn QualityScorer>,
) -> Result<MetricReport, EvalError> {
    let video = inputs.video;
    let frames = metrics::embed_frames(video, embedder)?;
    let image = embedder.embed_image(inputs.input_image)?;
    let text = embedder.embed_text(inputs.prompt_text)?;

    let (corresponding, refclip, ref_ssim) = match inputs.reference {
        Some(reference) => {
            if reference.len() != video.len() {
                return Err(EvalError::Shape(format!(
                    "video has {} frames, reference {}",
                    video.len(),
                    reference.len()
                )));
            }
            let ref_frames = metrics::embed_frames(reference, embedder)?;
            let c = metrics::mean_pairwise_cosine(&frames, &ref_frames)?;
            (Some(c), Some(c), Some(ssim_video(video, reference)?))
        }
        None => (None, None, None),
    };

    let dover = match scorer {
        Some(s) => {
            let sum = video
                .frames()
                .iter()
                .map(|f| s.score_quality(f))
                .sum::<Result<f64, _>>()?;
            Some(sum / video.len() as f64)
        }
        None => None,
    };

    let report = MetricReport {
        mse_first: mse_first(inputs.input_image, video)?,
        image_genvideo_clip: metrics::mean_cosine_to(&image, &frames)?,
        genvideo_text_clip: metrics::mean_cosine_to(&text, &frames)?,
        genvideo_refvideo_corresponding: corresponding,
        genvideo_clip_temporal: metrics::temporal_from(&frames)?,
        genvideo_refvideo_clip: refclip,
        dover,
        genvideo_refvideo_ssim: ref_ssim,
    };
    report.validate()?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryReport {
    pub id: String,
    pub metrics: MetricReport,
}

/// Contents of `report.json`: per-entry rows plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub entries: Vec<EntryReport>,
    pub aggregate: MetricReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown report format '{other}' (json|csv)")),
        }
    }
}

pub const AGGREGATE_ID: &str = "aggregate";

impl ReportFile {
    pub fn from_entries(entries: Vec<EntryReport>) -> Result<Self, EvalError> {
        let metrics: Vec<MetricReport> = entries.iter().map(|e| e.metrics.clone()).collect();
        let aggregate = MetricReport::mean(&metrics)
            .ok_or_else(|| EvalError::Parse("a report needs at least one entry".into()))?;
        Ok(Self { entries, aggregate })
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            ReportFormat::Csv => self.to_csv(),
        }
    }

    /// One row per entry plus a final `aggregate` row; empty cells are
    /// absent metrics. Values use the shortest exact decimal form.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = std::iter::once("id").chain(METRIC_COLUMNS).collect();
        w.write_record(&header).expect("in-memory write");
        let rows = self
            .entries
            .iter()
            .map(|e| (e.id.as_str(), &e.metrics))
            .chain(std::iter::once((AGGREGATE_ID, &self.aggregate)));
        for (id, m) in rows {
            let mut record = vec![id.to_string()];
            record.extend(m.values().iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let r: ReportFile = serde_json::from_str(text).map_err(|e| EvalError::Parse(e.to_string()))?;
        r.entries.iter().try_for_each(|e| e.metrics.validate())?;
        Ok(r)
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| EvalError::Parse(e.to_string()))?.clone();
        let expected: Vec<&str> = std::iter::once("id").chain(METRIC_COLUMNS).collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(EvalError::Parse(format!("unexpected CSV header {headers:?}")));
        }
        let mut entries = Vec::new();
        let mut aggregate = None;
        for record in reader.records() {
            let record = record.map_err(|e| EvalError::Parse(e.to_string()))?;
            let mut values = [None; 8];
            for (i, slot) in values.iter_mut().enumerate() {
                let cell = record.get(i + 1).unwrap_or("").trim();
                if !cell.is_empty() {
                    *slot = Some(cell.parse::<f64>().map_err(|e| {
                        EvalError::Parse(format!("{}: '{cell}': {e}", METRIC_COLUMNS[i]))
                    })?);
                }
            }
            let metrics = MetricReport::from_values(values)?;
            metrics.validate()?;
            let id = record.get(0).unwrap_or("").to_string();
            if id == AGGREGATE_ID {
                aggregate = Some(metrics);
            } else {
                entries.push(EntryReport { id, metrics });
            }
        }
        let aggregate = aggregate.ok_or_else(|| EvalError::Parse("missing aggregate row".into()))?;
        Ok(Self { entries, aggregate })
    }

    /// Writes `report.json` and `report.csv` into `dir`, each atomically.
    pub fn emit(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        crate::fsutil::write_atomic(&dir.join("report.json"), self.render(ReportFormat::Json).as_bytes())?;
        crate::fsutil::write_atomic(&dir.join("report.csv"), self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, EvalError> {
        Self::from_json(&std::fs::read_to_string(dir.join("report.json"))?)
    }
}
