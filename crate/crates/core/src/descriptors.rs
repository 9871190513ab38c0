//! Trajectory-aligned descriptors.
//!
//! Every histogram descriptor is pooled over a `32 x 32 x L` volume that
//! follows the trajectory: frame `t` of the volume is centred on the rounded
//! trajectory position at step `t`, with edge replication at the borders.
//! The volume is split into `2 x 2 x 3` cells, and each cell histogram is
//! normalized on its own.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowField2D, SceneFlowField};
use crate::image::FrameGray;
use crate::tracking::{Trajectory2D, Trajectory3D};

const ORIENT_BINS: usize = 8;
/// HOF cells below this magnitude (px/frame) vote into the zero bin.
pub const HOF_ZERO_THRESHOLD: f64 = 0.25;
/// HSF vectors below this norm (m/frame) vote into the zero bin.
pub const HSF_ZERO_THRESHOLD: f64 = 1e-3;
/// MBH3D derivative vectors below this norm (m/frame/px) vote into the zero bin.
pub const MBH3D_ZERO_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DescriptorKind {
    Tsd,
    Hog,
    Hof,
    Mbh,
    Tsd3d,
    Hsf,
    Mbh3d,
}

impl DescriptorKind {
    pub const ALL: [DescriptorKind; 7] = [
        DescriptorKind::Tsd,
        DescriptorKind::Hog,
        DescriptorKind::Hof,
        DescriptorKind::Mbh,
        DescriptorKind::Tsd3d,
        DescriptorKind::Hsf,
        DescriptorKind::Mbh3d,
    ];
    pub const KINDS_2D: [DescriptorKind; 4] =
        [DescriptorKind::Tsd, DescriptorKind::Hog, DescriptorKind::Hof, DescriptorKind::Mbh];
    pub const KINDS_3D: [DescriptorKind; 3] = [DescriptorKind::Tsd3d, DescriptorKind::Hsf, DescriptorKind::Mbh3d];

    pub fn name(self) -> &'static str {
        match self {
            DescriptorKind::Tsd => "TSD",
            DescriptorKind::Hog => "HOG",
            DescriptorKind::Hof => "HOF",
            DescriptorKind::Mbh => "MBH",
            DescriptorKind::Tsd3d => "TSD3D",
            DescriptorKind::Hsf => "HSF",
            DescriptorKind::Mbh3d => "MBH3D",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown descriptor kind code {code}")))
    }

    pub fn dim(self, spec: &VolumeSpec) -> usize {
        let cells = spec.cell_count();
        match self {
            DescriptorKind::Tsd => 2 * spec.temporal,
            DescriptorKind::Tsd3d => 3 * spec.temporal,
            DescriptorKind::Hog => cells * ORIENT_BINS,
            DescriptorKind::Hof | DescriptorKind::Hsf => cells * (ORIENT_BINS + 1),
            DescriptorKind::Mbh => 2 * cells * ORIENT_BINS,
            DescriptorKind::Mbh3d => 3 * cells * (ORIENT_BINS + 1),
        }
    }
}

impl std::fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeSpec {
    pub width: usize,
    pub height: usize,
    /// Number of frames `L` pooled per trajectory.
    pub temporal: usize,
    /// Cell grid (x, y, t).
    pub cells: [usize; 3],
}

impl VolumeSpec {
    pub fn new(width: usize, height: usize, temporal: usize, cells: [usize; 3]) -> Result<Self> {
        let s = VolumeSpec { width, height, temporal, cells };
        s.validate()?;
        Ok(s)
    }

    pub fn with_len(temporal: usize) -> Self {
        VolumeSpec { width: 32, height: 32, temporal, cells: [2, 2, 3] }
    }

    pub fn validate(&self) -> Result<()> {
        let [cx, cy, ct] = self.cells;
        if cx == 0 || cy == 0 || ct == 0 || self.width % cx != 0 || self.height % cy != 0 {
            return Err(Error::Config(format!(
                "volume {}x{} does not split into {cx}x{cy} cells",
                self.width, self.height
            )));
        }
        if self.temporal < 3 || self.temporal < ct {
            return Err(Error::Config(format!("temporal extent {} is too short", self.temporal)));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.cells.iter().product()
    }
}

impl Default for VolumeSpec {
    fn default() -> Self {
        Self::with_len(15)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorBlock {
    pub kind: DescriptorKind,
    pub values: Vec<f64>,
}

impl DescriptorBlock {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn normalized_steps<const D: usize>(points: &[[f64; D]], len: usize) -> Vec<f64> {
    let steps: Vec<[f64; D]> = points
        .windows(2)
        .take(len)
        .map(|w| std::array::from_fn(|d| w[1][d] - w[0][d]))
        .collect();
    let total: f64 = steps.iter().map(|s| s.iter().map(|c| c * c).sum::<f64>().sqrt()).sum();
    let mut out = vec![0.0; D * len];
    if total > 0.0 {
        for (i, s) in steps.iter().enumerate() {
            for d in 0..D {
                out[i * D + d] = s[d] / total;
            }
        }
    }
    out
}

/// Displacement sequence normalized by its total path length. Trajectories
/// shorter than `len` steps are zero-padded.
pub fn tsd(traj: &Trajectory2D, spec: &VolumeSpec) -> DescriptorBlock {
    DescriptorBlock { kind: DescriptorKind::Tsd, values: normalized_steps(&traj.points, spec.temporal) }
}

pub fn tsd3d(traj: &Trajectory3D, spec: &VolumeSpec) -> DescriptorBlock {
    DescriptorBlock { kind: DescriptorKind::Tsd3d, values: normalized_steps(&traj.points, spec.temporal) }
}

/// Splits `weight` between the two orientation bins nearest `angle`, bin
/// `k` being centred on `k * range / 8`.
fn orientation_vote(angle: f64, range: f64, weight: f64, hist: &mut [f64]) {
    let pos = angle.rem_euclid(range) / range * ORIENT_BINS as f64;
    let lo = pos.floor();
    let frac = pos - lo;
    let b0 = lo as usize % ORIENT_BINS;
    hist[b0] += weight * (1.0 - frac);
    hist[(b0 + 1) % ORIENT_BINS] += weight * frac;
}

enum Norm {
    L1,
    L2,
}

fn normalize(hist: &mut [f64], norm: &Norm) {
    let n = match norm {
        Norm::L1 => hist.iter().sum::<f64>(),
        Norm::L2 => hist.iter().map(|v| v * v).sum::<f64>().sqrt(),
    };
    if n > 0.0 {
        hist.iter_mut().for_each(|v| *v /= n);
    }
}

/// Walks the volume and lets `vote` fill the histogram of the cell each
/// pixel falls into. Output is cell-major (`t`, then `y`, then `x`), with
/// `channels` independent histograms of `bins` per cell laid out channel by
/// channel.
fn pool(
    spec: &VolumeSpec,
    centers: &[[f64; 2]],
    channels: usize,
    bins: usize,
    norm: Norm,
    mut vote: impl FnMut(usize, isize, isize, &mut [Vec<f64>]),
) -> Vec<f64> {
    let [cx, cy, ct] = spec.cells;
    let ncell = cx * cy * ct;
    let (cw, ch) = (spec.width / cx, spec.height / cy);
    let mut hists: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; bins]; ncell]; channels];
    let mut scratch: Vec<Vec<f64>> = vec![vec![0.0; bins]; channels];
    let frames = spec.temporal.min(centers.len());
    for (t, c) in centers.iter().take(frames).enumerate() {
        let tc = t * ct / spec.temporal;
        let x0 = c[0].round() as isize - (spec.width / 2) as isize;
        let y0 = c[1].round() as isize - (spec.height / 2) as isize;
        for oy in 0..spec.height {
            for ox in 0..spec.width {
                scratch.iter_mut().for_each(|h| h.iter_mut().for_each(|v| *v = 0.0));
                vote(t, x0 + ox as isize, y0 + oy as isize, &mut scratch);
                let cell = (tc * cy + oy / ch) * cx + ox / cw;
                for (ch_hist, s) in hists.iter_mut().zip(&scratch) {
                    for (acc, v) in ch_hist[cell].iter_mut().zip(s) {
                        *acc += v;
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(channels * ncell * bins);
    for ch_hist in hists.iter_mut() {
        for cell in ch_hist.iter_mut() {
            normalize(cell, &norm);
            out.extend_from_slice(cell);
        }
    }
    out
}

fn clamp_xy(x: isize, y: isize, w: usize, h: usize) -> usize {
    let x = x.clamp(0, w as isize - 1) as usize;
    let y = y.clamp(0, h as isize - 1) as usize;
    y * w + x
}

/// Central-difference derivatives of a plane at a (clamped) pixel.
fn derivs(data: &[f64], w: usize, h: usize, x: isize, y: isize) -> (f64, f64) {
    let x = x.clamp(0, w as isize - 1);
    let y = y.clamp(0, h as isize - 1);
    let dx = 0.5 * (data[clamp_xy(x + 1, y, w, h)] - data[clamp_xy(x - 1, y, w, h)]);
    let dy = 0.5 * (data[clamp_xy(x, y + 1, w, h)] - data[clamp_xy(x, y - 1, w, h)]);
    (dx, dy)
}

fn check_fields(available: usize, start: usize, spec: &VolumeSpec) -> Result<()> {
    spec.validate()?;
    if start + spec.temporal > available {
        return Err(Error::Shape(format!(
            "volume spans frames {start}..{} but only {available} are available",
            start + spec.temporal
        )));
    }
    Ok(())
}

/// Unsigned 8-bin gradient orientation histograms, L2 per cell.
pub fn hog(frames: &[FrameGray], traj: &Trajectory2D, spec: &VolumeSpec) -> Result<DescriptorBlock> {
    check_fields(frames.len(), traj.start_frame, spec)?;
    let values = pool(spec, &traj.points, 1, ORIENT_BINS, Norm::L2, |t, x, y, h| {
        let f = &frames[traj.start_frame + t];
        let (gx, gy) = derivs(&f.data, f.width, f.height, x, y);
        let mag = gx.hypot(gy);
        if mag > 0.0 {
            orientation_vote(gy.atan2(gx), PI, mag, &mut h[0]);
        }
    });
    Ok(DescriptorBlock { kind: DescriptorKind::Hog, values })
}

/// Signed 8-bin flow orientation histograms plus a zero-motion bin, L1 per
/// cell.
pub fn hof(flows: &[FlowField2D], traj: &Trajectory2D, spec: &VolumeSpec) -> Result<DescriptorBlock> {
    check_fields(flows.len(), traj.start_frame, spec)?;
    let values = pool(spec, &traj.points, 1, ORIENT_BINS + 1, Norm::L1, |t, x, y, h| {
        let f = &flows[traj.start_frame + t];
        let i = clamp_xy(x, y, f.width, f.height);
        let (u, v) = (f.u[i], f.v[i]);
        let mag = u.hypot(v);
        if mag < HOF_ZERO_THRESHOLD {
            h[0][ORIENT_BINS] += 1.0;
        } else {
            orientation_vote(v.atan2(u), 2.0 * PI, mag, &mut h[0]);
        }
    });
    Ok(DescriptorBlock { kind: DescriptorKind::Hof, values })
}

/// Motion boundary histograms: signed orientation histograms of the spatial
/// gradient of `u` and of `v`, L2 per cell, `u` part first.
pub fn mbh(flows: &[FlowField2D], traj: &Trajectory2D, spec: &VolumeSpec) -> Result<DescriptorBlock> {
    check_fields(flows.len(), traj.start_frame, spec)?;
    let values = pool(spec, &traj.points, 2, ORIENT_BINS, Norm::L2, |t, x, y, h| {
        let f = &flows[traj.start_frame + t];
        for (c, plane) in [&f.u, &f.v].into_iter().enumerate() {
            let (gx, gy) = derivs(plane, f.width, f.height, x, y);
            let mag = gx.hypot(gy);
            if mag > 0.0 {
                orientation_vote(gy.atan2(gx), 2.0 * PI, mag, &mut h[c]);
            }
        }
    });
    Ok(DescriptorBlock { kind: DescriptorKind::Mbh, values })
}

/// Bin of a scene-flow vector among azimuth quadrant x elevation sign.
/// Quadrants are centred on the axes; elevation zero counts as up.
pub fn hsf_bin(d: [f64; 3]) -> usize {
    let az = d[1].atan2(d[0]);
    let el = d[2].atan2(d[0].hypot(d[1]));
    let q = ((az + FRAC_PI_4) / FRAC_PI_2).floor().rem_euclid(4.0) as usize;
    2 * q + usize::from(el < 0.0)
}

/// Histograms of scene-flow direction: 8 (azimuth quadrant x elevation sign)
/// bins plus a zero-motion bin, L1 per cell. Invalid pixels are skipped.
pub fn hsf(scene_flows: &[SceneFlowField], traj: &Trajectory3D, spec: &VolumeSpec) -> Result<DescriptorBlock> {
    check_fields(scene_flows.len(), traj.start_frame, spec)?;
    let values = pool(spec, &traj.pixel_track, 1, ORIENT_BINS + 1, Norm::L1, |t, x, y, h| {
        let f = &scene_flows[traj.start_frame + t];
        let i = clamp_xy(x, y, f.width, f.height);
        let d = [f.dx[i], f.dy[i], f.dz[i]];
        if d.iter().any(|c| c.is_nan()) {
            return;
        }
        let mag = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if mag < HSF_ZERO_THRESHOLD {
            h[0][ORIENT_BINS] += 1.0;
        } else {
            h[0][hsf_bin(d)] += mag;
        }
    });
    Ok(DescriptorBlock { kind: DescriptorKind::Hsf, values })
}

/// Motion boundary histograms of the three scene-flow channels: signed
/// orientation of each channel's spatial gradient plus a zero bin, L1 per
/// cell. Pixels whose stencil touches an invalid sample are skipped.
pub fn mbh3d(scene_flows: &[SceneFlowField], traj: &Trajectory3D, spec: &VolumeSpec) -> Result<DescriptorBlock> {
    check_fields(scene_flows.len(), traj.start_frame, spec)?;
    let values = pool(spec, &traj.pixel_track, 3, ORIENT_BINS + 1, Norm::L1, |t, x, y, h| {
        let f = &scene_flows[traj.start_frame + t];
        for (c, plane) in [&f.dx, &f.dy, &f.dz].into_iter().enumerate() {
            let (gx, gy) = derivs(plane, f.width, f.height, x, y);
            if gx.is_nan() || gy.is_nan() {
                continue;
            }
            let mag = gx.hypot(gy);
            if mag < MBH3D_ZERO_THRESHOLD {
                h[c][ORIENT_BINS] += 1.0;
            } else {
                orientation_vote(gy.atan2(gx), 2.0 * PI, mag, &mut h[c]);
            }
        }
    });
    Ok(DescriptorBlock { kind: DescriptorKind::Mbh3d, values })
}

/// All 2D descriptors of a trajectory in `[TSD, HOG, HOF, MBH]` order.
pub fn describe_2d(
    frames: &[FrameGray],
    flows: &[FlowField2D],
    traj: &Trajectory2D,
    spec: &VolumeSpec,
) -> Result<Vec<DescriptorBlock>> {
    Ok(vec![tsd(traj, spec), hog(frames, traj, spec)?, hof(flows, traj, spec)?, mbh(flows, traj, spec)?])
}

/// All 3D descriptors of a trajectory in `[TSD3D, HSF, MBH3D]` order.
pub fn describe_3d(
    scene_flows: &[SceneFlowField],
    traj: &Trajectory3D,
    spec: &VolumeSpec,
) -> Result<Vec<DescriptorBlock>> {
    Ok(vec![tsd3d(traj, spec), hsf(scene_flows, traj, spec)?, mbh3d(scene_flows, traj, spec)?])
}
