//! Dataset manifests and loading of one video into memory.
//!
//! A manifest is a JSON file whose paths are relative to its own directory:
//!
//! ```json
//! {
//!   "intrinsics": "intrinsics.json",
//!   "labels": "labels.csv",
//!   "splits": "splits.json",
//!   "videos": [
//!     {"id": "v000", "frames": "videos/v000/rgb", "depth": "videos/v000/depth",
//!      "skeleton": "videos/v000/skeleton.jsonl", "flow": "videos/v000/flow"}
//!   ]
//! }
//! ```
//!
//! Labels come from the CSV (`video_id,label`) or from a `label` field on
//! the video entry. Optional `flow` / `scene_flow` directories hold cached
//! fields named `00000.flo`, `00001.flo`, ... (`.sf3` for scene flow); a
//! cached file takes precedence over estimation for its frame pair.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{read_flo, read_sf3, FlowField2D, SceneFlowField};
use crate::geometry::CameraIntrinsics;
use crate::image::{DepthFrame, FrameGray};
use crate::localize::{read_skeletons, Skeleton};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub id: String,
    pub frames: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_flow: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Splits {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// On-disk form of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub splits: PathBuf,
    pub videos: Vec<VideoEntry>,
}

/// A parsed manifest with labels resolved and paths made absolute.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub intrinsics: Option<PathBuf>,
    pub videos: Vec<VideoEntry>,
    pub splits: Splits,
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == "video_id,label") {
            continue;
        }
        let (id, label) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("{}:{}: expected video_id,label", path.display(), i + 1)))?;
        if label.contains(',') || id.trim().is_empty() || label.trim().is_empty() {
            return Err(Error::Format(format!("{}:{}: expected video_id,label", path.display(), i + 1)));
        }
        out.push((id.trim().to_string(), label.trim().to_string()));
    }
    Ok(out)
}

pub fn labels_csv(rows: &[(String, String)]) -> String {
    let mut s = String::from("video_id,label\n");
    for (id, label) in rows {
        s.push_str(&format!("{id},{label}\n"));
    }
    s
}

impl DatasetManifest {
    /// Parses the manifest and checks its structure. Referenced media files
    /// are checked by [`DatasetManifest::validate_files`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let file: ManifestFile = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_file(file, &root)
    }

    pub fn from_file(file: ManifestFile, root: &Path) -> Result<Self> {
        let abs = |p: &Path| root.join(p);
        let mut videos = file.videos;
        let mut seen = HashSet::new();
        for v in &mut videos {
            if v.id.is_empty() || v.id.contains(['/', '\\']) {
                return Err(Error::Format(format!("invalid video id {:?}", v.id)));
            }
            if !seen.insert(v.id.clone()) {
                return Err(Error::Format(format!("duplicate video id {}", v.id)));
            }
            v.frames = abs(&v.frames);
            for p in [&mut v.depth, &mut v.skeleton, &mut v.flow, &mut v.scene_flow].into_iter().flatten() {
                *p = abs(p);
            }
        }
        if let Some(csv) = &file.labels {
            let rows = read_labels_csv(&abs(csv))?;
            let by_id: HashMap<&str, &str> = rows.iter().map(|(i, l)| (i.as_str(), l.as_str())).collect();
            for v in &mut videos {
                match (by_id.get(v.id.as_str()), &v.label) {
                    (Some(l), Some(inline)) if *l != inline => {
                        return Err(Error::Format(format!("video {} is labeled both {inline} and {l}", v.id)));
                    }
                    (Some(l), _) => v.label = Some(l.to_string()),
                    _ => {}
                }
            }
            if let Some((id, _)) = rows.iter().find(|(id, _)| !seen.contains(id)) {
                return Err(Error::Format(format!("labels list unknown video {id}")));
            }
        }
        if let Some(v) = videos.iter().find(|v| v.label.is_none()) {
            return Err(Error::Format(format!("video {} has no label", v.id)));
        }
        let splits = Splits::load(&abs(&file.splits))?;
        let train: HashSet<&String> = splits.train.iter().collect();
        if train.len() != splits.train.len() || splits.test.iter().collect::<HashSet<_>>().len() != splits.test.len() {
            return Err(Error::Format("a split lists a video twice".into()));
        }
        if let Some(id) = splits.test.iter().find(|id| train.contains(id)) {
            return Err(Error::Format(format!("video {id} is in both splits")));
        }
        if let Some(id) = splits.train.iter().chain(&splits.test).find(|id| !seen.contains(*id)) {
            return Err(Error::Format(format!("split lists unknown video {id}")));
        }
        Ok(DatasetManifest { root: root.to_path_buf(), intrinsics: file.intrinsics.map(|p| abs(&p)), videos, splits })
    }

    pub fn video(&self, id: &str) -> Result<&VideoEntry> {
        self.videos.iter().find(|v| v.id == id).ok_or_else(|| Error::Format(format!("unknown video {id}")))
    }

    pub fn label(&self, id: &str) -> Result<&str> {
        Ok(self.video(id)?.label.as_deref().expect("labels checked at load"))
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.videos.iter().filter_map(|v| v.label.as_deref()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Checks that every referenced file or directory exists.
    pub fn validate_files(&self) -> Result<()> {
        if let Some(k) = &self.intrinsics {
            exists(k)?;
        }
        self.videos.iter().try_for_each(check_entry_files)
    }

    pub fn load_intrinsics(&self, width: usize, height: usize) -> Result<CameraIntrinsics> {
        match &self.intrinsics {
            Some(p) => CameraIntrinsics::load(p),
            None => Ok(CameraIntrinsics::default_for(width, height)),
        }
    }
}

fn exists(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::file(p, std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file does not exist")))
    }
}

pub fn check_entry_files(v: &VideoEntry) -> Result<()> {
    exists(&v.frames)?;
    for p in [&v.depth, &v.skeleton, &v.flow, &v.scene_flow].into_iter().flatten() {
        exists(p)?;
    }
    Ok(())
}

fn list_pgm(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn cache_name(t: usize, ext: &str) -> String {
    format!("{t:05}.{ext}")
}

/// Everything the extraction stage needs for one video. Missing flow
/// entries are estimated.
#[derive(Debug, Clone)]
pub struct VideoInput {
    pub id: String,
    pub frames: Vec<FrameGray>,
    pub depths: Option<Vec<DepthFrame>>,
    pub flows: Vec<Option<FlowField2D>>,
    pub scene_flows: Vec<Option<SceneFlowField>>,
    pub skeletons: Option<Vec<Skeleton>>,
    pub intrinsics: CameraIntrinsics,
}

/// Reads one video. `need_depth` turns a missing depth directory into an
/// error; scene-flow caches are only read when depth is wanted.
pub fn load_video(manifest: &DatasetManifest, entry: &VideoEntry, need_depth: bool) -> Result<VideoInput> {
    check_entry_files(entry)?;
    let frames = list_pgm(&entry.frames)?.iter().map(|p| FrameGray::read_pgm(p)).collect::<Result<Vec<_>>>()?;
    let Some(first) = frames.first() else {
        return Err(Error::SequenceTooShort { frames: 0, required: 2 });
    };
    let (w, h) = (first.width, first.height);
    if frames.iter().any(|f| (f.width, f.height) != (w, h)) {
        return Err(Error::Shape(format!("{}: frames differ in size", entry.id)));
    }
    let pairs = frames.len().saturating_sub(1);
    let depths = match (&entry.depth, need_depth) {
        (Some(dir), true) => {
            let d = list_pgm(dir)?.iter().map(|p| DepthFrame::read_pgm(p)).collect::<Result<Vec<_>>>()?;
            if d.len() != frames.len() || d.iter().any(|f| (f.width, f.height) != (w, h)) {
                return Err(Error::Shape(format!("{}: {} depth frames for {} intensity frames", entry.id, d.len(), frames.len())));
            }
            Some(d)
        }
        (None, true) => return Err(Error::Config(format!("{}: 3D mode needs a depth directory", entry.id))),
        _ => None,
    };
    let cached = |dir: &Option<PathBuf>, ext: &str, t: usize| dir.as_ref().map(|d| d.join(cache_name(t, ext))).filter(|p| p.exists());
    let flows = (0..pairs)
        .map(|t| cached(&entry.flow, "flo", t).map(|p| read_flo(&p)).transpose())
        .collect::<Result<Vec<_>>>()?;
    let scene_flows = if need_depth {
        (0..pairs).map(|t| cached(&entry.scene_flow, "sf3", t).map(|p| read_sf3(&p)).transpose()).collect::<Result<Vec<_>>>()?
    } else {
        vec![None; pairs]
    };
    for f in flows.iter().flatten() {
        if (f.width, f.height) != (w, h) {
            return Err(Error::Shape(format!("{}: cached flow is {}x{}, frames are {w}x{h}", entry.id, f.width, f.height)));
        }
    }
    for f in scene_flows.iter().flatten() {
        if (f.width, f.height) != (w, h) {
            return Err(Error::Shape(format!("{}: cached scene flow is {}x{}, frames are {w}x{h}", entry.id, f.width, f.height)));
        }
    }
    let skeletons = entry.skeleton.as_ref().map(|p| read_skeletons(p)).transpose()?;
    Ok(VideoInput {
        id: entry.id.clone(),
        frames,
        depths,
        flows,
        scene_flows,
        skeletons,
        intrinsics: manifest.load_intrinsics(w, h)?,
    })
}
