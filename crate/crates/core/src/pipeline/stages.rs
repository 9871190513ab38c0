//! Pipeline stages, both in memory and as resumable on-disk commands.
//!
//! A work directory holds everything the commands produce:
//!
//! ```text
//! <work>/archives/<video>.tlar
//! <work>/model/{codebooks.tlcb, model.tlmd, config.json, training.json}
//! <work>/eval/{confusion.csv, confusion.ppm, report.json}
//! ```

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{self, EvalReport, LinearModel};
use crate::descriptors::{describe_2d, describe_3d};
use crate::encode::{build_codebooks, encode_video, select_codebook_pool, CandidateScore, CodebookSet, PoolVideo};
use crate::error::{Error, Result};
use crate::flow::{compose_scene_flow, estimate_flow_2d, FlowField2D, SceneFlowField};
use crate::io::write_atomic;
use crate::localize::{assign, joint_tracks_2d, joint_tracks_3d, normalization_scale, ClusterAssignment, Membership};
use crate::tracking::{track_2d, track_3d};

use super::archive::{ArchiveSource, DirArchiveSource, Trajectories, VideoArchive};
use super::config::{Mode, PipelineConfig};
use super::dataset::{load_video, DatasetManifest, VideoInput};

/// Flow fields for every frame pair, taking cached entries as they are.
fn complete_flows(input: &VideoInput, cfg: &PipelineConfig) -> Result<Vec<FlowField2D>> {
    input
        .flows
        .iter()
        .enumerate()
        .map(|(t, f)| match f {
            Some(f) => Ok(f.clone()),
            None => estimate_flow_2d(&input.frames[t], &input.frames[t + 1], &cfg.flow),
        })
        .collect()
}

fn complete_scene_flows(input: &VideoInput, cfg: &PipelineConfig) -> Result<Vec<SceneFlowField>> {
    let depths = input.depths.as_ref().ok_or_else(|| Error::Config(format!("{}: 3D mode needs depth", input.id)))?;
    let mut flows: Option<Vec<FlowField2D>> = None;
    let mut out = Vec::with_capacity(input.scene_flows.len());
    for (t, sf) in input.scene_flows.iter().enumerate() {
        match sf {
            Some(sf) => out.push(sf.clone()),
            None => {
                if flows.is_none() {
                    flows = Some(complete_flows(input, cfg)?);
                }
                let f = &flows.as_ref().unwrap()[t];
                out.push(compose_scene_flow(&depths[t], &depths[t + 1], f, &input.intrinsics, &cfg.flow)?);
            }
        }
    }
    Ok(out)
}

/// Tracks, localizes and describes one video. A skeleton is required unless
/// the config asks for global encoding.
pub fn extract_video(input: &VideoInput, cfg: &PipelineConfig) -> Result<VideoArchive> {
    cfg.validate()?;
    let skeletons = match (&input.skeletons, cfg.bow.global) {
        (Some(s), _) => Some(s),
        (None, true) => None,
        (None, false) => {
            return Err(Error::Config(format!("{}: localized encoding needs a skeleton file", input.id)));
        }
    };
    let (w, h) = (input.frames[0].width, input.frames[0].height);
    let unassigned = |n: usize| ClusterAssignment { members: vec![Membership::Rejected; n], distances: vec![f64::INFINITY; n] };
    let spec = &cfg.volume;
    match cfg.mode {
        Mode::TwoD => {
            let flows = complete_flows(input, cfg)?;
            let trajs = track_2d(&input.frames, &flows, &cfg.tracker_2d)?;
            let (joint_ids, assignment) = match skeletons {
                Some(s) => {
                    let joints = joint_tracks_2d(s);
                    let scale = normalization_scale(cfg.localize_2d.normalization, &joints, w, h);
                    (joints.iter().map(|j| j.id as i32).collect(), assign(&trajs, &joints, scale, &cfg.localize_2d)?)
                }
                None => (Vec::new(), unassigned(trajs.len())),
            };
            let descriptors =
                trajs.par_iter().map(|t| describe_2d(&input.frames, &flows, t, spec)).collect::<Result<Vec<_>>>()?;
            Ok(VideoArchive { id: input.id.clone(), joint_ids, trajectories: Trajectories::TwoD(trajs), assignment, descriptors })
        }
        Mode::ThreeD => {
            let depths = input.depths.as_ref().ok_or_else(|| Error::Config(format!("{}: 3D mode needs depth", input.id)))?;
            let sfs = complete_scene_flows(input, cfg)?;
            let trajs = track_3d(&input.frames, depths, &sfs, &input.intrinsics, &cfg.tracker_3d)?;
            let (joint_ids, assignment) = match skeletons {
                Some(s) => {
                    let joints = joint_tracks_3d(s);
                    let scale = normalization_scale(cfg.localize_3d.normalization, &joints, w, h);
                    (joints.iter().map(|j| j.id as i32).collect(), assign(&trajs, &joints, scale, &cfg.localize_3d)?)
                }
                None => (Vec::new(), unassigned(trajs.len())),
            };
            let descriptors = trajs.par_iter().map(|t| describe_3d(&sfs, t, spec)).collect::<Result<Vec<_>>>()?;
            Ok(VideoArchive { id: input.id.clone(), joint_ids, trajectories: Trajectories::ThreeD(trajs), assignment, descriptors })
        }
    }
}

fn pool_video(archive: &VideoArchive, label: &str) -> PoolVideo {
    PoolVideo { label: label.to_string(), descriptors: archive.descriptors.clone(), assignment: archive.assignment.clone() }
}

fn check_modes(archives: &[VideoArchive], cfg: &PipelineConfig) -> Result<()> {
    match archives.iter().find(|a| a.mode() != cfg.mode) {
        Some(a) => Err(Error::Config(format!("archive {} was extracted in {} mode, config is {}", a.id, a.mode().name(), cfg.mode.name()))),
        None => Ok(()),
    }
}

/// The joint-id list shared by all archives (empty for global encoding).
fn common_joint_ids(archives: &[VideoArchive], cfg: &PipelineConfig) -> Result<Vec<i32>> {
    if cfg.bow.global {
        return Ok(Vec::new());
    }
    let ids = archives.first().map(|a| a.joint_ids.clone()).unwrap_or_default();
    if let Some(a) = archives.iter().find(|a| a.joint_ids != ids) {
        return Err(Error::Format(format!("archive {} has joints {:?}, expected {:?}", a.id, a.joint_ids, ids)));
    }
    if ids.is_empty() {
        return Err(Error::NoJoints);
    }
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub videos: usize,
    pub training_accuracy: f64,
    /// Candidate scores and the chosen index when selection ran.
    pub selection: Option<(usize, Vec<CandidateScore>)>,
}

#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub books: CodebookSet,
    pub model: LinearModel,
    pub summary: TrainingSummary,
}

/// Random per-video trajectory pool of at most `sample_size` entries.
fn random_pool(videos: &[PoolVideo], sample_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    videos
        .iter()
        .map(|v| {
            let mut idx: Vec<usize> = (0..v.descriptors.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(sample_size);
            idx.sort_unstable();
            idx
        })
        .collect()
}

/// Learns codebooks and the classifier from training archives.
pub fn train_on<S: AsRef<str> + Sync>(archives: &[VideoArchive], labels: &[S], cfg: &PipelineConfig) -> Result<TrainedPipeline> {
    cfg.validate()?;
    if archives.len() != labels.len() {
        return Err(Error::Shape(format!("{} archives but {} labels", archives.len(), labels.len())));
    }
    check_modes(archives, cfg)?;
    let joint_ids = common_joint_ids(archives, cfg)?;
    let videos: Vec<PoolVideo> = archives.iter().zip(labels).map(|(a, l)| pool_video(a, l.as_ref())).collect();
    let (kinds, dims, bow) = (cfg.kinds(), cfg.dims(), cfg.bow_seeded());
    let cls = cfg.classifier_seeded();

    let (subset, selection) = if cfg.selection.enabled {
        let sel = select_codebook_pool(&videos, &joint_ids, kinds, &dims, &bow, &cfg.selection_seeded(), &cls)?;
        (sel.chosen_subset().to_vec(), Some((sel.chosen, sel.scores.clone())))
    } else {
        (random_pool(&videos, cfg.selection.params.sample_size, cfg.pool_seed()), None)
    };
    let refs: Vec<&PoolVideo> = videos.iter().collect();
    let books = build_codebooks(&refs, Some(&subset), &joint_ids, kinds, &dims, &bow)?;
    let hists = encode_all(archives, &books, cfg)?;
    let model = classify::train(&hists, labels, &cls)?;
    let training_accuracy = classify::evaluate(&model, &hists, labels)?.accuracy;
    Ok(TrainedPipeline { books, model, summary: TrainingSummary { videos: archives.len(), training_accuracy, selection } })
}

fn encode_all(archives: &[VideoArchive], books: &CodebookSet, cfg: &PipelineConfig) -> Result<Vec<Vec<f64>>> {
    let bow = cfg.bow_seeded();
    archives
        .par_iter()
        .map(|a| Ok(encode_video(&pool_video(a, ""), books, &a.joint_ids, cfg.kinds(), &bow)?.values))
        .collect()
}

pub fn evaluate_on<S: AsRef<str>>(
    trained: (&CodebookSet, &LinearModel),
    archives: &[VideoArchive],
    labels: &[S],
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    check_modes(archives, cfg)?;
    let hists = encode_all(archives, trained.0, cfg)?;
    classify::evaluate(trained.1, &hists, labels)
}

/// Runs `f` on a worker pool of `jobs` threads (all cores when `None`).
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone)]
pub struct WorkDir {
    pub root: PathBuf,
}

impl WorkDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        WorkDir { root: root.into() }
    }

    pub fn archives(&self) -> DirArchiveSource {
        DirArchiveSource::new(self.root.join("archives"))
    }

    pub fn model_dir(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
}

pub const CODEBOOK_FILE: &str = "codebooks.tlcb";
pub const MODEL_FILE: &str = "model.tlmd";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractSummary {
    pub extracted: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
}

enum Outcome {
    Extracted,
    Skipped,
}

/// Writes one archive per manifest video. Existing archives are kept unless
/// `force`; a failing video is reported and the others still run.
pub fn cmd_extract(manifest: &DatasetManifest, cfg: &PipelineConfig, work: &WorkDir, force: bool) -> Result<ExtractSummary> {
    cfg.validate()?;
    let source = work.archives();
    let results: Vec<Result<Outcome>> = manifest
        .videos
        .par_iter()
        .map(|entry| {
            let path = source.path(&entry.id);
            if path.exists() && !force {
                return Ok(Outcome::Skipped);
            }
            let input = load_video(manifest, entry, cfg.mode == Mode::ThreeD)?;
            extract_video(&input, cfg)?.save(&path)?;
            Ok(Outcome::Extracted)
        })
        .collect();
    let mut summary = ExtractSummary::default();
    for (entry, r) in manifest.videos.iter().zip(results) {
        match r {
            Ok(Outcome::Extracted) => summary.extracted.push(entry.id.clone()),
            Ok(Outcome::Skipped) => summary.skipped.push(entry.id.clone()),
            Err(e) => summary.failed.push((entry.id.clone(), e.to_string())),
        }
    }
    Ok(summary)
}

fn load_split(source: &dyn ArchiveSource, ids: &[String]) -> Result<Vec<VideoArchive>> {
    ids.par_iter().map(|id| source.load(id)).collect()
}

/// Trains from the training split only, reading archives through `source`.
pub fn train_from_source(manifest: &DatasetManifest, source: &dyn ArchiveSource, cfg: &PipelineConfig) -> Result<TrainedPipeline> {
    let ids = &manifest.splits.train;
    let archives = load_split(source, ids)?;
    let labels = ids.iter().map(|id| manifest.label(id)).collect::<Result<Vec<_>>>()?;
    train_on(&archives, &labels, cfg)
}

pub fn eval_from_source(
    manifest: &DatasetManifest,
    source: &dyn ArchiveSource,
    trained: (&CodebookSet, &LinearModel),
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    let ids = &manifest.splits.test;
    let archives = load_split(source, ids)?;
    let labels = ids.iter().map(|id| manifest.label(id)).collect::<Result<Vec<_>>>()?;
    evaluate_on(trained, &archives, &labels, cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Trains and writes the model directory. Returns `None` when the outputs
/// already exist and `force` is off.
pub fn cmd_train(manifest: &DatasetManifest, cfg: &PipelineConfig, work: &WorkDir, force: bool) -> Result<Option<TrainingSummary>> {
    let dir = work.model_dir();
    if !force && dir.join(CODEBOOK_FILE).exists() && dir.join(MODEL_FILE).exists() {
        return Ok(None);
    }
    let trained = train_from_source(manifest, &work.archives(), cfg)?;
    trained.books.save(&dir.join(CODEBOOK_FILE))?;
    trained.model.save(&dir.join(MODEL_FILE))?;
    write_json(&dir.join("config.json"), cfg)?;
    write_json(&dir.join("training.json"), &trained.summary)?;
    Ok(Some(trained.summary))
}

/// Evaluates on the test split and writes the report files. An existing
/// report is returned as is unless `force`.
pub fn cmd_eval(manifest: &DatasetManifest, cfg: &PipelineConfig, work: &WorkDir, model_dir: &Path, force: bool) -> Result<EvalReport> {
    let dir = work.eval_dir();
    let report_path = dir.join("report.json");
    if !force && report_path.exists() && dir.join("confusion.csv").exists() && dir.join("confusion.ppm").exists() {
        return read_json(&report_path);
    }
    let books = CodebookSet::load(&model_dir.join(CODEBOOK_FILE))?;
    let model = LinearModel::load(&model_dir.join(MODEL_FILE))?;
    let report = eval_from_source(manifest, &work.archives(), (&books, &model), cfg)?;
    report.write_confusion_csv(&dir.join("confusion.csv"))?;
    report.write_confusion_ppm(&dir.join("confusion.ppm"), 32)?;
    write_json(&report_path, &report)?;
    Ok(report)
}

/// One-paragraph description of an archive, codebook set, model, manifest
/// or config file, chosen by its contents.
pub fn inspect_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    match bytes.get(..4) {
        Some(b"TLAR") => {
            let a = VideoArchive::from_bytes(&bytes, path)?;
            let assigned = a.assignment.assigned_count();
            let mut per_joint = vec![0usize; a.joint_ids.len()];
            for m in &a.assignment.members {
                if let Membership::Assigned(j) = m {
                    per_joint[*j] += 1;
                }
            }
            let joints: Vec<String> = a.joint_ids.iter().zip(&per_joint).map(|(id, n)| format!("{id}:{n}")).collect();
            Ok(format!(
                "archive {} ({} mode): {} trajectories, {} assigned, {} rejected; per joint {}",
                a.id,
                a.mode().name(),
                a.trajectories.len(),
                assigned,
                a.trajectories.len() - assigned,
                joints.join(" ")
            ))
        }
        Some(b"TLCB") => {
            let s = CodebookSet::load(path)?;
            let lines: Vec<String> = s.books.iter().map(|b| format!("  joint {} {}: {} words x {}", b.joint, b.kind, b.k(), b.dim())).collect();
            Ok(format!("{} codebooks\n{}", s.books.len(), lines.join("\n")))
        }
        Some(b"TLMD") => {
            let m = LinearModel::load(path)?;
            Ok(format!("linear model: {} classes ({}), dimension {}", m.classes.len(), m.classes.join(", "), m.dim()))
        }
        _ => {
            let v: serde_json::Value = serde_json::from_slice(&bytes)
                .map_err(|_| Error::Format(format!("{}: unrecognized file", path.display())))?;
            if v.get("videos").is_some() {
                let m = DatasetManifest::load(path)?;
                Ok(format!(
                    "manifest: {} videos, {} classes, {} train / {} test",
                    m.videos.len(),
                    m.classes().len(),
                    m.splits.train.len(),
                    m.splits.test.len()
                ))
            } else {
                Ok(PipelineConfig::from_json(&String::from_utf8_lossy(&bytes))?.to_json())
            }
        }
    }
}
