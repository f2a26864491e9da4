//! Video records, dataset manifests, patient-disjoint splits and the
//! synthetic ultrasound-like generator.
//!
//! A manifest is a JSON document:
//!
//! ```text
//! {"tasks": {"AB": ["A-lines", "B-lines"]},
//!  "videos": [{"video_id": "v0", "patient_id": "p0", "fps": 10.0,
//!              "frames_dir": "frames/v0", "labels": {"AB": "B-lines"}}]}
//! ```
//!
//! Frames live in a directory of zero-padded, numbered 8-bit grayscale PNG
//! files and are only read on first access. Relative `frames_dir` paths are
//! resolved against `DATA_ROOT` when set, otherwise against the directory
//! holding the manifest.

mod split;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use split::{split_by_patient, Split, SplitAssignment};
pub use synthetic::{
    generate_synthetic, generate_synthetic_dataset, SyntheticConfig, SyntheticDataset,
    AB_CLASSES, LS_CLASSES,
};

/// Environment variable used to resolve relative frame directories.
pub const DATA_ROOT_ENV: &str = "DATA_ROOT";

/// Downstream classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    /// COVID-19 vs. non-COVID pneumonia vs. normal (three classes, B-mode).
    #[serde(rename = "COVID")]
    Covid,
    /// A-lines vs. B-lines (binary, B-mode).
    #[serde(rename = "AB")]
    Ab,
    /// Lung sliding present vs. absent (binary, M-mode).
    #[serde(rename = "LS")]
    Ls,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Covid => "COVID",
            Task::Ab => "AB",
            Task::Ls => "LS",
        }
    }

    pub fn is_mmode(self) -> bool {
        matches!(self, Task::Ls)
    }

    pub fn num_classes(self) -> usize {
        match self {
            Task::Covid => 3,
            Task::Ab | Task::Ls => 2,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "COVID" => Ok(Task::Covid),
            "AB" => Ok(Task::Ab),
            "LS" => Ok(Task::Ls),
            other => Err(Error::InvalidArgument(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
enum FrameSource {
    Memory(Arc<Vec<GrayImage>>),
    Directory {
        dir: PathBuf,
        loaded: OnceLock<Arc<Vec<GrayImage>>>,
    },
}

/// One B-mode video.
#[derive(Debug, Clone)]
pub struct VideoRecord {
    pub video_id: String,
    pub patient_id: String,
    pub fps: f64,
    /// Task name → class id.
    pub labels: BTreeMap<String, usize>,
    /// Optional per-frame labels (task name → one class id per frame).
    pub frame_labels: BTreeMap<String, Vec<usize>>,
    source: FrameSource,
}

fn check_frames(video_id: &str, frames: &[GrayImage]) -> Result<()> {
    let first = frames.first().ok_or_else(|| Error::Frame {
        video_id: video_id.to_string(),
        reason: "video has no frames".into(),
    })?;
    let dims = first.dimensions();
    if dims.0 == 0 || dims.1 == 0 {
        return Err(Error::Frame {
            video_id: video_id.to_string(),
            reason: "zero-sized frame".into(),
        });
    }
    if let Some(k) = frames.iter().position(|f| f.dimensions() != dims) {
        return Err(Error::Frame {
            video_id: video_id.to_string(),
            reason: format!(
                "frame {k} is {:?}, expected {dims:?} like frame 0",
                frames[k].dimensions()
            ),
        });
    }
    Ok(())
}

impl VideoRecord {
    /// Builds a record whose frames are already decoded.
    pub fn in_memory(
        video_id: impl Into<String>,
        patient_id: impl Into<String>,
        fps: f64,
        frames: Vec<GrayImage>,
        labels: BTreeMap<String, usize>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::InvalidFrameRate(fps));
        }
        check_frames(&video_id, &frames)?;
        Ok(Self {
            video_id,
            patient_id: patient_id.into(),
            fps,
            labels,
            frame_labels: BTreeMap::new(),
            source: FrameSource::Memory(Arc::new(frames)),
        })
    }

    /// Builds a record whose frames are read lazily from `dir`.
    pub fn from_directory(
        video_id: impl Into<String>,
        patient_id: impl Into<String>,
        fps: f64,
        dir: impl Into<PathBuf>,
        labels: BTreeMap<String, usize>,
    ) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::InvalidFrameRate(fps));
        }
        Ok(Self {
            video_id: video_id.into(),
            patient_id: patient_id.into(),
            fps,
            labels,
            frame_labels: BTreeMap::new(),
            source: FrameSource::Directory {
                dir: dir.into(),
                loaded: OnceLock::new(),
            },
        })
    }

    pub fn with_frame_labels(mut self, task: impl Into<String>, labels: Vec<usize>) -> Self {
        self.frame_labels.insert(task.into(), labels);
        self
    }

    /// Same metadata, new frames (used by resizing).
    pub fn with_frames(&self, frames: Vec<GrayImage>) -> Result<Self> {
        check_frames(&self.video_id, &frames)?;
        Ok(Self {
            source: FrameSource::Memory(Arc::new(frames)),
            ..self.clone()
        })
    }

    pub fn frames_dir(&self) -> Option<&Path> {
        match &self.source {
            FrameSource::Directory { dir, .. } => Some(dir),
            FrameSource::Memory(_) => None,
        }
    }

    /// Decoded frames; directory-backed records are read on first call.
    pub fn frames(&self) -> Result<Arc<Vec<GrayImage>>> {
        match &self.source {
            FrameSource::Memory(frames) => Ok(Arc::clone(frames)),
            FrameSource::Directory { dir, loaded } => {
                if let Some(frames) = loaded.get() {
                    return Ok(Arc::clone(frames));
                }
                let frames = Arc::new(read_frame_dir(&self.video_id, dir)?);
                Ok(Arc::clone(loaded.get_or_init(|| frames)))
            }
        }
    }

    pub fn num_frames(&self) -> Result<usize> {
        Ok(self.frames()?.len())
    }

    /// Frame size as `(height, width)`.
    pub fn frame_size(&self) -> Result<(usize, usize)> {
        let frames = self.frames()?;
        let (w, h) = frames[0].dimensions();
        Ok((h as usize, w as usize))
    }

    pub fn label(&self, task: &str) -> Option<usize> {
        self.labels.get(task).copied()
    }

    /// Per-frame label when available, otherwise the video-level label.
    pub fn frame_label(&self, task: &str, index: usize) -> Option<usize> {
        self.frame_labels
            .get(task)
            .and_then(|l| l.get(index).copied())
            .or_else(|| self.label(task))
    }

    pub fn is_labelled(&self) -> bool {
        !self.labels.is_empty()
    }
}

fn read_frame_dir(video_id: &str, dir: &Path) -> Result<Vec<GrayImage>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Frame {
        video_id: video_id.to_string(),
        reason: format!("cannot read frame directory {}: {e}", dir.display()),
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|ext| ext.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    let frames = paths
        .iter()
        .map(|p| Ok(image::open(p)?.to_luma8()))
        .collect::<Result<Vec<_>>>()?;
    check_frames(video_id, &frames)?;
    Ok(frames)
}

/// A collection of videos plus the class vocabulary of each task.
#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub records: Vec<VideoRecord>,
    /// Task name → ordered class names; class id = index.
    pub tasks: BTreeMap<String, Vec<String>>,
    pub provenance: String,
}

impl DatasetManifest {
    /// Checks id uniqueness, frame rates and label vocabularies.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.video_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate video_id {:?}",
                    r.video_id
                )));
            }
            if !(r.fps > 0.0 && r.fps.is_finite()) {
                return Err(Error::InvalidFrameRate(r.fps));
            }
            let all_labels = r
                .labels
                .iter()
                .map(|(t, &c)| (t, c))
                .chain(r.frame_labels.iter().flat_map(|(t, v)| v.iter().map(move |&c| (t, c))));
            for (task, class) in all_labels {
                let vocab = self.tasks.get(task).ok_or_else(|| Error::UnknownLabel {
                    task: task.clone(),
                    class: class.to_string(),
                })?;
                if class >= vocab.len() {
                    return Err(Error::UnknownLabel {
                        task: task.clone(),
                        class: class.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn patients(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.patient_id.as_str()).collect()
    }

    pub fn record(&self, video_id: &str) -> Option<&VideoRecord> {
        self.records.iter().find(|r| r.video_id == video_id)
    }

    pub fn classes(&self, task: &str) -> Option<&[String]> {
        self.tasks.get(task).map(Vec::as_slice)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    tasks: BTreeMap<String, Vec<String>>,
    videos: Vec<VideoEntry>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    provenance: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct VideoEntry {
    video_id: String,
    patient_id: String,
    fps: f64,
    frames_dir: PathBuf,
    #[serde(default)]
    labels: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    frame_labels: BTreeMap<String, Vec<String>>,
}

fn class_id(tasks: &BTreeMap<String, Vec<String>>, task: &str, class: &str) -> Result<usize> {
    tasks
        .get(task)
        .and_then(|v| v.iter().position(|c| c == class))
        .ok_or_else(|| Error::UnknownLabel {
            task: task.to_string(),
            class: class.to_string(),
        })
}

/// Loads a manifest, resolving relative frame directories against
/// `DATA_ROOT` (if set) or the manifest's own directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
    load_manifest_with_root(path, root.as_deref())
}

/// [`load_manifest`] with an explicit data root instead of the environment.
pub fn load_manifest_with_root(
    path: impl AsRef<Path>,
    data_root: Option<&Path>,
) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ManifestFile = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let base = match data_root {
        Some(root) => root.to_path_buf(),
        None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };

    let mut records = Vec::with_capacity(file.videos.len());
    for v in file.videos {
        if v.video_id.is_empty() || v.patient_id.is_empty() {
            return Err(Error::Manifest(
                "video_id and patient_id must be non-empty".into(),
            ));
        }
        let labels = v
            .labels
            .iter()
            .map(|(t, c)| Ok((t.clone(), class_id(&file.tasks, t, c)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let dir = if v.frames_dir.is_absolute() {
            v.frames_dir.clone()
        } else {
            base.join(&v.frames_dir)
        };
        let mut record = VideoRecord::from_directory(v.video_id, v.patient_id, v.fps, dir, labels)?;
        for (task, classes) in &v.frame_labels {
            let ids = classes
                .iter()
                .map(|c| class_id(&file.tasks, task, c))
                .collect::<Result<Vec<_>>>()?;
            record.frame_labels.insert(task.clone(), ids);
        }
        records.push(record);
    }
    let manifest = DatasetManifest {
        records,
        tasks: file.tasks,
        provenance: file.provenance,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Writes every record's frames as numbered PNGs under `out_dir/frames/<video_id>/`
/// plus `out_dir/manifest.json`, returning the manifest path.
pub fn write_dataset(manifest: &DatasetManifest, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    manifest.validate()?;
    let mut videos = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let rel = PathBuf::from("frames").join(&r.video_id);
        let dir = out_dir.join(&rel);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (k, frame) in r.frames()?.iter().enumerate() {
            frame.save(dir.join(format!("{k:06}.png")))?;
        }
        let name = |task: &String, id: usize| manifest.tasks[task][id].clone();
        videos.push(VideoEntry {
            video_id: r.video_id.clone(),
            patient_id: r.patient_id.clone(),
            fps: r.fps,
            frames_dir: rel,
            labels: r.labels.iter().map(|(t, &c)| (t.clone(), name(t, c))).collect(),
            frame_labels: r
                .frame_labels
                .iter()
                .map(|(t, v)| (t.clone(), v.iter().map(|&c| name(t, c)).collect()))
                .collect(),
        });
    }
    let file = ManifestFile {
        tasks: manifest.tasks.clone(),
        videos,
        provenance: manifest.provenance.clone(),
    };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&file)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    const TWO_VIDEOS: &str = r#"{
        "tasks": {"AB": ["A-lines", "B-lines"]},
        "videos": [
            {"video_id": "v1", "patient_id": "p1", "fps": 10.0, "frames_dir": "f/v1", "labels": {"AB": "A-lines"}},
            {"video_id": "v2", "patient_id": "p2", "fps": 30.0, "frames_dir": "f/v2", "labels": {"AB": "B-lines"}}
        ]}"#;

    #[test]
    fn loads_two_records_without_touching_frames() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(tmp.path(), "m.json", TWO_VIDEOS);
        let m = load_manifest_with_root(&p, None).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[1].label("AB"), Some(1));
        assert_eq!(m.records[0].frames_dir().unwrap(), tmp.path().join("f/v1"));
    }

    #[test]
    fn zero_fps_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(tmp.path(), "m.json", &TWO_VIDEOS.replace("30.0", "0"));
        let err = load_manifest_with_root(&p, None).unwrap_err();
        assert!(matches!(err, Error::InvalidFrameRate(_)));
        assert!(err.to_string().contains("invalid frame rate"));
    }

    #[test]
    fn label_outside_vocabulary_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(tmp.path(), "m.json", &TWO_VIDEOS.replace("\"B-lines\"}", "\"C-lines\"}"));
        assert!(matches!(
            load_manifest_with_root(&p, None),
            Err(Error::UnknownLabel { .. })
        ));
    }

    #[test]
    fn missing_file_and_malformed_json() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_manifest_with_root(tmp.path().join("nope.json"), None),
            Err(Error::Io { .. })
        ));
        let p = write(tmp.path(), "bad.json", r#"{"tasks": {}, "videos": [{"video_id": 3}]}"#);
        assert!(matches!(load_manifest_with_root(&p, None), Err(Error::Manifest(_))));
    }

    #[test]
    fn duplicate_video_ids_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(tmp.path(), "m.json", &TWO_VIDEOS.replace("\"v2\"", "\"v1\""));
        assert!(matches!(load_manifest_with_root(&p, None), Err(Error::Manifest(_))));
    }

    #[test]
    fn missing_frame_directory_fails_on_first_access() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(tmp.path(), "m.json", TWO_VIDEOS);
        let m = load_manifest_with_root(&p, Some(&tmp.path().join("elsewhere"))).unwrap();
        let err = m.records[0].frames().unwrap_err();
        assert!(matches!(err, Error::Frame { .. }));
    }

    #[test]
    fn in_memory_record_rejects_mixed_frame_sizes() {
        let frames = vec![GrayImage::new(4, 4), GrayImage::new(4, 5)];
        assert!(VideoRecord::in_memory("v", "p", 10.0, frames, BTreeMap::new()).is_err());
        assert!(VideoRecord::in_memory("v", "p", 10.0, vec![], BTreeMap::new()).is_err());
    }

    #[test]
    fn task_parsing() {
        assert_eq!("ab".parse::<Task>().unwrap(), Task::Ab);
        assert_eq!(Task::Covid.num_classes(), 3);
        assert!(Task::Ls.is_mmode());
        assert!("XY".parse::<Task>().is_err());
    }
}
