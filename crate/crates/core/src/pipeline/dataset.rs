//! Evaluation dataset manifests and reference videos.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{FrameRate, FrameSequence, ImageBuffer};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_video_dir: Option<PathBuf>,
}

/// Reads a JSON list of entries. Relative paths are resolved against the
/// manifest's directory. Empty manifests and duplicate ids are errors.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetEntry>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut entries: Vec<DatasetEntry> = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Dataset(format!("{}: {e}", path.display())))?;
    if entries.is_empty() {
        return Err(PipelineError::Dataset(format!("{} has no entries", path.display())));
    }
    let mut seen = BTreeSet::new();
    for e in &entries {
        if !seen.insert(e.id.as_str()) {
            return Err(PipelineError::Dataset(format!("duplicate entry id '{}'", e.id)));
        }
    }
    let base = path.parent().unwrap_or(Path::new("."));
    for e in &mut entries {
        e.image_path = base.join(&e.image_path);
        if let Some(r) = &mut e.reference_video_dir {
            *r = base.join(&*r);
        }
    }
    Ok(entries)
}

/// Loads the PNG frames of `dir` in file-name order, normalizes each to
/// the working resolution, and resamples to `frame_count` frames by
/// nearest index so that they pair with a generated video.
pub fn load_reference(
    dir: &Path,
    resolution: u32,
    frame_count: usize,
    fps: FrameRate,
) -> Result<FrameSequence, PipelineError> {
    let io = |source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|x| x.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(PipelineError::Dataset(format!(
            "reference directory {} holds no PNG frames",
            dir.display()
        )));
    }
    let bad = |p: &Path, e: crate::model::ModelError| PipelineError::Dataset(format!("{}: {e}", p.display()));
    let frames = files
        .iter()
        .map(|p| {
            ImageBuffer::load(p)
                .and_then(|img| img.normalize_for_ingest(resolution))
                .map_err(|e| bad(p, e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = frames.len();
    let resampled = (0..frame_count)
        .map(|t| frames[resample_index(t, frame_count, n)].clone())
        .collect();
    FrameSequence::new(resampled, fps).map_err(|e| bad(dir, e))
}

/// Nearest source index for output position `t` of `out_len`, mapping the
/// first and last positions onto the first and last source frames.
pub fn resample_index(t: usize, out_len: usize, src_len: usize) -> usize {
    if out_len <= 1 || src_len <= 1 {
        return 0;
    }
    let num = t * (src_len - 1) * 2 + (out_len - 1);
    (num / ((out_len - 1) * 2)).min(src_len - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_endpoints_and_identity() {
        for n in 1..6 {
            assert_eq!((0..n).map(|t| resample_index(t, n, n)).collect::<Vec<_>>(), (0..n).collect::<Vec<_>>());
        }
        assert_eq!(resample_index(0, 16, 4), 0);
        assert_eq!(resample_index(15, 16, 4), 3);
        // 3 -> 5: positions 0, 0.5, 1, 1.5, 2 round half up
        assert_eq!((0..5).map(|t| resample_index(t, 5, 3)).collect::<Vec<_>>(), vec![0, 1, 1, 2, 2]);
    }

    #[test]
    fn dataset_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(&p, "[]").unwrap();
        assert!(matches!(load_dataset(&p), Err(PipelineError::Dataset(_))));
        fs::write(
            &p,
            r#"[{"id":"a","image_path":"a.png","text":"t"},{"id":"a","image_path":"b.png","text":"t"}]"#,
        )
        .unwrap();
        assert!(load_dataset(&p).is_err());
        fs::write(
            &p,
            r#"[{"id":"a","image_path":"a.png","text":"t","reference_video_dir":"ref"}]"#,
        )
        .unwrap();
        let e = load_dataset(&p).unwrap();
        assert_eq!(e[0].image_path, dir.path().join("a.png"));
        assert_eq!(e[0].reference_video_dir, Some(dir.path().join("ref")));
    }

    #[test]
    fn reference_loading_resamples() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3u8 {
            ImageBuffer::filled(4, 4, [i * 50; 3])
                .unwrap()
                .save_png(&dir.path().join(format!("f{i}.png")))
                .unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let seq = load_reference(dir.path(), 2, 5, FrameRate::default()).unwrap();
        assert_eq!(seq.len(), 5);
        assert_eq!(seq.dimensions(), (2, 2));
        let firsts: Vec<u8> = seq.frames().iter().map(|f| f.data()[0]).collect();
        assert_eq!(firsts, vec![0, 50, 50, 100, 100]);
    }
}
