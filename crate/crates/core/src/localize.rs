//! Grouping of trajectories around skeleton joints.
//!
//! A trajectory `P` and a joint track `Q` overlapping on frames `tau` are
//! compared with
//!
//! ```text
//! d(P, Q) = max_t s_t * (1/L) * sum_t r_t
//! s_t = |p_t - q_t|,  r_t = |(p_t - p_{t-1}) - (q_t - q_{t-1})|
//! ```
//!
//! where the `r` sum skips the first frame of `tau` and `L = |tau| - 1`.
//! The affinity is `exp(-d)`; each trajectory joins the joint of highest
//! affinity unless even that distance exceeds the rejection threshold.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointObservation {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    #[serde(rename = "X")]
    pub wx: f64,
    #[serde(rename = "Y")]
    pub wy: f64,
    #[serde(rename = "Z")]
    pub wz: f64,
}

/// Joint positions of one frame, in pixels and in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub frame: usize,
    pub joints: Vec<JointObservation>,
}

/// Per-frame positions of one joint, indexed by absolute frame number.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTrack<const D: usize> {
    pub id: u32,
    pub positions: Vec<[f64; D]>,
}

/// Anything with a start frame and a run of positions.
pub trait Track<const D: usize> {
    fn start_frame(&self) -> usize;
    fn points(&self) -> &[[f64; D]];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Raw units (pixels or meters).
    None,
    /// Divide coordinates by the frame diagonal.
    FrameDiagonal,
    /// Divide coordinates by the mean joint-to-centroid distance of the
    /// skeleton, averaged over the video. Falls back to the frame diagonal
    /// for single-joint skeletons.
    BodyScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeConfig {
    /// Largest accepted distance, in normalized units squared per frame.
    pub distance_threshold: f64,
    pub normalization: Normalization,
}

impl LocalizeConfig {
    pub fn default_2d() -> Self {
        LocalizeConfig { distance_threshold: 0.02, normalization: Normalization::BodyScale }
    }

    pub fn default_3d() -> Self {
        LocalizeConfig { distance_threshold: 0.05, normalization: Normalization::None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance_threshold > 0.0) {
            return Err(Error::Config(format!("distance threshold must be positive, got {}", self.distance_threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Membership {
    /// Index into the joint-track list passed to [`assign`].
    Assigned(usize),
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub members: Vec<Membership>,
    /// Smallest normalized distance found for each trajectory.
    pub distances: Vec<f64>,
}

impl ClusterAssignment {
    pub fn assigned_count(&self) -> usize {
        self.members.iter().filter(|m| matches!(m, Membership::Assigned(_))).count()
    }
}

fn norm<const D: usize>(a: [f64; D]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub<const D: usize>(a: [f64; D], b: [f64; D]) -> [f64; D] {
    std::array::from_fn(|i| a[i] - b[i])
}

/// Distance between two tracks already aligned on the same frames.
/// Returns `(d, mean spatial distance)`.
pub fn aligned_distance<const D: usize>(p: &[[f64; D]], q: &[[f64; D]]) -> Result<(f64, f64)> {
    let n = p.len().min(q.len());
    if n < 2 {
        return Err(Error::NoOverlap);
    }
    let mut max_s: f64 = 0.0;
    let mut sum_s = 0.0;
    let mut sum_r = 0.0;
    for t in 0..n {
        let s = norm(sub(p[t], q[t]));
        max_s = max_s.max(s);
        sum_s += s;
        if t > 0 {
            sum_r += norm(sub(sub(p[t], p[t - 1]), sub(q[t], q[t - 1])));
        }
    }
    Ok((max_s * sum_r / (n - 1) as f64, sum_s / n as f64))
}

/// Spatio-temporal distance over the frames both tracks cover.
pub fn traj_joint_distance<const D: usize>(p: &impl Track<D>, q: &JointTrack<D>) -> Result<f64> {
    overlap_distance(p, q).map(|(d, _)| d)
}

fn overlap_distance<const D: usize>(p: &impl Track<D>, q: &JointTrack<D>) -> Result<(f64, f64)> {
    let t0 = p.start_frame();
    let pts = p.points();
    let end = (t0 + pts.len()).min(q.positions.len());
    if end <= t0 + 1 {
        return Err(Error::NoOverlap);
    }
    aligned_distance(&pts[..end - t0], &q.positions[t0..end])
}

pub fn affinity(d: f64) -> f64 {
    (-d).exp()
}

/// Assigns each trajectory to its nearest joint. `scale` converts raw
/// coordinates to normalized units (distances are divided by `scale^2`).
pub fn assign<const D: usize, T: Track<D> + Sync>(
    trajectories: &[T],
    joints: &[JointTrack<D>],
    scale: f64,
    cfg: &LocalizeConfig,
) -> Result<ClusterAssignment> {
    use rayon::prelude::*;

    if joints.is_empty() {
        return Err(Error::NoJoints);
    }
    cfg.validate()?;
    if !(scale > 0.0) {
        return Err(Error::Config(format!("normalization scale must be positive, got {scale}")));
    }
    let inv = 1.0 / (scale * scale);
    let results: Vec<(Membership, f64)> = trajectories
        .par_iter()
        .map(|traj| {
            let mut best: Option<(f64, f64, usize)> = None;
            for (j, q) in joints.iter().enumerate() {
                let (d, mean_s) = overlap_distance(traj, q)?;
                let d = d * inv;
                let better = match best {
                    None => true,
                    Some((bd, bs, _)) => d < bd || (d == bd && mean_s < bs),
                };
                if better {
                    best = Some((d, mean_s, j));
                }
            }
            let (d, _, j) = best.expect("joints is non-empty");
            let m = if d > cfg.distance_threshold { Membership::Rejected } else { Membership::Assigned(j) };
            Ok((m, d))
        })
        .collect::<Result<_>>()?;
    let (members, distances) = results.into_iter().unzip();
    Ok(ClusterAssignment { members, distances })
}

pub fn read_skeletons(path: &Path) -> Result<Vec<Skeleton>> {
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Skeleton = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(s);
    }
    validate_skeletons(&out)?;
    Ok(out)
}

pub fn write_skeletons(path: &Path, skeletons: &[Skeleton]) -> Result<()> {
    let mut buf = Vec::new();
    for s in skeletons {
        serde_json::to_writer(&mut buf, s)?;
        buf.write_all(b"\n")?;
    }
    std::fs::write(path, buf).map_err(|e| Error::file(path, e))
}

fn validate_skeletons(skeletons: &[Skeleton]) -> Result<()> {
    let Some(first) = skeletons.first() else {
        return Ok(());
    };
    let mut ids: Vec<u32> = first.joints.iter().map(|j| j.id).collect();
    ids.sort_unstable();
    for (i, s) in skeletons.iter().enumerate() {
        if s.frame != i {
            return Err(Error::Format(format!("skeleton frames must be consecutive from 0; line {} has frame {}", i + 1, s.frame)));
        }
        let mut these: Vec<u32> = s.joints.iter().map(|j| j.id).collect();
        these.sort_unstable();
        if these != ids {
            return Err(Error::Format(format!("frame {} has a different joint set", s.frame)));
        }
        for j in &s.joints {
            if ![j.x, j.y, j.wx, j.wy, j.wz].iter().all(|v| v.is_finite()) {
                return Err(Error::Format(format!("frame {} joint {} has non-finite coordinates", s.frame, j.id)));
            }
        }
    }
    Ok(())
}

fn joint_ids(skeletons: &[Skeleton]) -> Vec<u32> {
    let mut ids: Vec<u32> = skeletons.first().map(|s| s.joints.iter().map(|j| j.id).collect()).unwrap_or_default();
    ids.sort_unstable();
    ids
}

fn tracks<const D: usize>(skeletons: &[Skeleton], f: impl Fn(&JointObservation) -> [f64; D]) -> Vec<JointTrack<D>> {
    joint_ids(skeletons)
        .into_iter()
        .map(|id| JointTrack {
            id,
            positions: skeletons
                .iter()
                .map(|s| f(s.joints.iter().find(|j| j.id == id).expect("validated joint set")))
                .collect(),
        })
        .collect()
}

/// Pixel tracks, one per joint, ordered by joint id.
pub fn joint_tracks_2d(skeletons: &[Skeleton]) -> Vec<JointTrack<2>> {
    tracks(skeletons, |j| [j.x, j.y])
}

/// World tracks in meters, one per joint, ordered by joint id.
pub fn joint_tracks_3d(skeletons: &[Skeleton]) -> Vec<JointTrack<3>> {
    tracks(skeletons, |j| [j.wx, j.wy, j.wz])
}

/// Mean distance of the joints from their centroid, averaged over frames.
pub fn body_scale<const D: usize>(joints: &[JointTrack<D>]) -> Option<f64> {
    if joints.len() < 2 {
        return None;
    }
    let frames = joints.iter().map(|j| j.positions.len()).min()?;
    if frames == 0 {
        return None;
    }
    let mut total = 0.0;
    for t in 0..frames {
        let mut c = [0.0; D];
        for j in joints {
            for (ci, pi) in c.iter_mut().zip(j.positions[t]) {
                *ci += pi / joints.len() as f64;
            }
        }
        total += joints.iter().map(|j| norm(sub(j.positions[t], c))).sum::<f64>() / joints.len() as f64;
    }
    let s = total / frames as f64;
    (s > 0.0).then_some(s)
}

/// Length unit for the chosen normalization.
pub fn normalization_scale<const D: usize>(
    normalization: Normalization,
    joints: &[JointTrack<D>],
    width: usize,
    height: usize,
) -> f64 {
    let diagonal = ((width * width + height * height) as f64).sqrt();
    match normalization {
        Normalization::None => 1.0,
        Normalization::FrameDiagonal => diagonal,
        Normalization::BodyScale => body_scale(joints).unwrap_or(diagonal),
    }
}
