//! Dense sampling and fixed-length trajectory tracking.
//!
//! Points are sampled on a regular grid, skipping homogeneous areas and cells
//! already covered by a live trajectory. Each point is pushed through the
//! motion field with a component-wise median over a small window; after
//! exactly `trajectory_len` steps the trajectory is closed and kept unless it
//! jumped, left the frame, or barely moved.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowField2D, SceneFlowField};
use crate::geometry::{back_project, project, CameraIntrinsics, PixelDepth, Point3};
use crate::image::{DepthFrame, FrameGray};
use crate::localize::Track;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Number of steps `L`; trajectories carry `L + 1` points.
    pub trajectory_len: usize,
    pub grid_step: usize,
    pub median_radius: usize,
    /// Smallest eigenvalue of the 3x3 gradient autocorrelation a sample needs.
    pub homogeneity_threshold: f64,
    /// Minimum positional variance (px^2 or m^2) of a kept trajectory.
    pub min_variance: f64,
    /// Largest single-frame displacement (px or m).
    pub max_step: f64,
}

impl TrackerConfig {
    pub fn default_2d() -> Self {
        TrackerConfig {
            trajectory_len: 15,
            grid_step: 5,
            median_radius: 1,
            homogeneity_threshold: 1e-3,
            min_variance: 1.0,
            max_step: 20.0,
        }
    }

    pub fn default_3d() -> Self {
        TrackerConfig { min_variance: 1e-4, max_step: 0.5, ..Self::default_2d() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectory_len < 2 {
            return Err(Error::Config(format!("trajectory length must be at least 2, got {}", self.trajectory_len)));
        }
        if self.grid_step < 1 {
            return Err(Error::Config("grid step must be at least 1".into()));
        }
        if !(self.homogeneity_threshold >= 0.0 && self.min_variance >= 0.0 && self.max_step >= 0.0) {
            return Err(Error::Config("tracker thresholds must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory2D {
    pub start_frame: usize,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory3D {
    pub start_frame: usize,
    pub points: Vec<[f64; 3]>,
    /// Projection of `points` into the image.
    pub pixel_track: Vec<[f64; 2]>,
}

impl Track<2> for Trajectory2D {
    fn start_frame(&self) -> usize {
        self.start_frame
    }
    fn points(&self) -> &[[f64; 2]] {
        &self.points
    }
}

impl Track<3> for Trajectory3D {
    fn start_frame(&self) -> usize {
        self.start_frame
    }
    fn points(&self) -> &[[f64; 3]] {
        &self.points
    }
}

/// Smallest eigenvalue of the gradient autocorrelation matrix summed over
/// the 3x3 neighbourhood of every pixel.
pub fn min_eigenvalue_map(frame: &FrameGray) -> Vec<f64> {
    let (w, h) = (frame.width, frame.height);
    let (gx, gy) = frame.gradients();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let i = yy * w + xx;
                    a += gx[i] * gx[i];
                    b += gx[i] * gy[i];
                    c += gy[i] * gy[i];
                }
            }
            let half_trace = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            out[y * w + x] = half_trace - disc;
        }
    }
    out
}

fn grid_positions(width: usize, height: usize, step: usize) -> impl Iterator<Item = (usize, usize)> {
    let off = step / 2;
    (off..height).step_by(step).flat_map(move |y| (off..width).step_by(step).map(move |x| (x, y)))
}

/// Grid samples that are textured and not within `grid_step / 2` of any
/// point in `occupied`.
pub fn sample_points(frame: &FrameGray, cfg: &TrackerConfig, occupied: &[[f64; 2]]) -> Vec<[f64; 2]> {
    if frame.width == 0 || frame.height == 0 {
        return Vec::new();
    }
    let eig = min_eigenvalue_map(frame);
    sample_with_eigen(&eig, frame.width, frame.height, cfg, occupied)
}

fn sample_with_eigen(eig: &[f64], w: usize, h: usize, cfg: &TrackerConfig, occupied: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let step = cfg.grid_step.max(1);
    let radius = step as f64 / 2.0;
    // bucket occupied points by grid cell for the proximity test
    let cells_x = w / step + 1;
    let cells_y = h / step + 1;
    let mut buckets: Vec<Vec<[f64; 2]>> = vec![Vec::new(); cells_x * cells_y];
    for p in occupied {
        if !(p[0].is_finite() && p[1].is_finite()) {
            continue;
        }
        let cx = (p[0].max(0.0) as usize / step).min(cells_x - 1);
        let cy = (p[1].max(0.0) as usize / step).min(cells_y - 1);
        buckets[cy * cells_x + cx].push(*p);
    }
    grid_positions(w, h, step)
        .filter(|&(x, y)| eig[y * w + x] >= cfg.homogeneity_threshold)
        .filter(|&(x, y)| {
            let (cx, cy) = (x / step, y / step);
            for by in cy.saturating_sub(1)..=(cy + 1).min(cells_y - 1) {
                for bx in cx.saturating_sub(1)..=(cx + 1).min(cells_x - 1) {
                    for p in &buckets[by * cells_x + bx] {
                        let (dx, dy) = (p[0] - x as f64, p[1] - y as f64);
                        if (dx * dx + dy * dy).sqrt() <= radius {
                            return false;
                        }
                    }
                }
            }
            true
        })
        .map(|(x, y)| [x as f64, y as f64])
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn inside(p: [f64; 2], w: usize, h: usize) -> bool {
    p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (w - 1) as f64 && p[1] <= (h - 1) as f64
}

/// Clipped `(2r+1)^2` window around the nearest pixel to `c`; `None` if the
/// window lies entirely outside the frame.
fn window(c: [f64; 2], r: usize, w: usize, h: usize) -> Option<(std::ops::RangeInclusive<usize>, std::ops::RangeInclusive<usize>)> {
    let (cx, cy) = (c[0].round(), c[1].round());
    let r = r as f64;
    let (x0, x1) = ((cx - r).max(0.0), (cx + r).min((w - 1) as f64));
    let (y0, y1) = ((cy - r).max(0.0), (cy + r).min((h - 1) as f64));
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some((x0 as usize..=x1 as usize, y0 as usize..=y1 as usize))
}

/// One median-filtered step through a 2D flow field. The window is centred
/// on the naive next position `p + flow(p)`.
pub fn advect_2d(p: [f64; 2], flow: &FlowField2D, cfg: &TrackerConfig) -> Option<[f64; 2]> {
    let (w, h) = (flow.width, flow.height);
    if !inside(p, w, h) {
        return None;
    }
    let (u0, v0) = flow.at(p[0].round() as usize, p[1].round() as usize);
    let (xs, ys) = window([p[0] + u0, p[1] + v0], cfg.median_radius, w, h)?;
    let mut us = Vec::with_capacity(9);
    let mut vs = Vec::with_capacity(9);
    for y in ys {
        for x in xs.clone() {
            let (u, v) = flow.at(x, y);
            us.push(u);
            vs.push(v);
        }
    }
    Some([p[0] + median(&mut us), p[1] + median(&mut vs)])
}

/// One median-filtered step through a scene flow field, window centred on
/// the projection of `q`. Invalid pixels are left out of the median.
pub fn advect_3d(q: Point3, sf: &SceneFlowField, k: &CameraIntrinsics, cfg: &TrackerConfig) -> Option<Point3> {
    let px = project(q, k).ok()?;
    let (w, h) = (sf.width, sf.height);
    if !inside([px.x, px.y], w, h) {
        return None;
    }
    let (xs, ys) = window([px.x, px.y], cfg.median_radius, w, h)?;
    let mut comps: [Vec<f64>; 3] = Default::default();
    for y in ys {
        for x in xs.clone() {
            if sf.is_valid_at(x, y) {
                for (c, v) in comps.iter_mut().zip(sf.at(x, y)) {
                    c.push(v);
                }
            }
        }
    }
    if comps[0].is_empty() {
        return None;
    }
    let [mut a, mut b, mut c] = comps;
    Some(q + Point3::new(median(&mut a), median(&mut b), median(&mut c)))
}

fn positional_variance<const D: usize>(points: &[[f64; D]]) -> f64 {
    let n = points.len() as f64;
    (0..D)
        .map(|d| {
            let mean = points.iter().map(|p| p[d]).sum::<f64>() / n;
            points.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n
        })
        .sum()
}

fn step_len<const D: usize>(a: [f64; D], b: [f64; D]) -> f64 {
    (0..D).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

fn check_lengths(frames: usize, fields: usize, cfg: &TrackerConfig) -> Result<()> {
    cfg.validate()?;
    let required = cfg.trajectory_len + 1;
    if frames < required || fields < cfg.trajectory_len {
        return Err(Error::SequenceTooShort { frames: frames.min(fields + 1), required });
    }
    if fields + 1 < frames {
        return Err(Error::Shape(format!("{frames} frames need {} motion fields, got {fields}", frames - 1)));
    }
    Ok(())
}

/// Tracks a video through its forward optical flow (`flows[t]`: frame `t`
/// to `t + 1`).
pub fn track_2d(frames: &[FrameGray], flows: &[FlowField2D], cfg: &TrackerConfig) -> Result<Vec<Trajectory2D>> {
    check_lengths(frames.len(), flows.len(), cfg)?;
    let n = frames.len();
    let len = cfg.trajectory_len;
    let (w, h) = (frames[0].width, frames[0].height);
    for f in flows.iter().take(n - 1) {
        if (f.width, f.height) != (w, h) {
            return Err(Error::Shape("flow and frame sizes differ".into()));
        }
    }
    let mut active: Vec<Trajectory2D> = Vec::new();
    let mut done = Vec::new();
    for t in 0..n {
        if t + len < n {
            let occupied: Vec<[f64; 2]> = active.iter().map(|a| *a.points.last().unwrap()).collect();
            let fresh = sample_points(&frames[t], cfg, &occupied);
            active.extend(fresh.into_iter().map(|p| Trajectory2D { start_frame: t, points: vec![p] }));
        }
        if t + 1 == n {
            break;
        }
        let flow = &flows[t];
        let stepped: Vec<Option<Trajectory2D>> = std::mem::take(&mut active)
            .into_par_iter()
            .map(|mut tr| {
                let p = *tr.points.last().unwrap();
                let next = advect_2d(p, flow, cfg)?;
                if !inside(next, w, h) || step_len(p, next) > cfg.max_step {
                    return None;
                }
                tr.points.push(next);
                Some(tr)
            })
            .collect();
        for tr in stepped.into_iter().flatten() {
            if tr.points.len() == len + 1 {
                if positional_variance(&tr.points) >= cfg.min_variance {
                    done.push(tr);
                }
            } else {
                active.push(tr);
            }
        }
    }
    Ok(done)
}

/// Tracks a video through its scene flow. Seeds come from the intensity
/// frames and are lifted to 3D with the depth of their pixel.
pub fn track_3d(
    frames: &[FrameGray],
    depths: &[DepthFrame],
    scene_flows: &[SceneFlowField],
    k: &CameraIntrinsics,
    cfg: &TrackerConfig,
) -> Result<Vec<Trajectory3D>> {
    check_lengths(frames.len().min(depths.len()), scene_flows.len(), cfg)?;
    let n = frames.len().min(depths.len());
    let len = cfg.trajectory_len;
    let (w, h) = (frames[0].width, frames[0].height);
    for sf in scene_flows.iter().take(n - 1) {
        if (sf.width, sf.height) != (w, h) {
            return Err(Error::Shape("scene flow and frame sizes differ".into()));
        }
    }
    let mut active: Vec<Trajectory3D> = Vec::new();
    let mut done = Vec::new();
    for t in 0..n {
        if t + len < n {
            let occupied: Vec<[f64; 2]> = active.iter().map(|a| *a.pixel_track.last().unwrap()).collect();
            for p in sample_points(&frames[t], cfg, &occupied) {
                let d = depths[t].at(p[0] as usize, p[1] as usize);
                if !DepthFrame::is_valid(d) {
                    continue;
                }
                let q = back_project(PixelDepth::new(p[0], p[1], d), k)?;
                active.push(Trajectory3D { start_frame: t, points: vec![q.to_array()], pixel_track: vec![p] });
            }
        }
        if t + 1 == n {
            break;
        }
        let sf = &scene_flows[t];
        let stepped: Vec<Option<Trajectory3D>> = std::mem::take(&mut active)
            .into_par_iter()
            .map(|mut tr| {
                let q = Point3::from_array(*tr.points.last().unwrap());
                let next = advect_3d(q, sf, k, cfg)?;
                if !(next.z > 0.0) || step_len(q.to_array(), next.to_array()) > cfg.max_step {
                    return None;
                }
                let px = project(next, k).ok()?;
                if !inside([px.x, px.y], w, h) {
                    return None;
                }
                tr.points.push(next.to_array());
                tr.pixel_track.push([px.x, px.y]);
                Some(tr)
            })
            .collect();
        for tr in stepped.into_iter().flatten() {
            if tr.points.len() == len + 1 {
                if positional_variance(&tr.points) >= cfg.min_variance {
                    done.push(tr);
                }
            } else {
                active.push(tr);
            }
        }
    }
    Ok(done)
}

#[derive(Serialize)]
struct DumpRecord<'a> {
    video: &'a str,
    t0: usize,
    kind: &'a str,
    coords: Vec<f64>,
}

/// Debug dump: one JSON object per line.
pub fn write_trajectory_dump<const D: usize, T: Track<D>>(path: &Path, video: &str, trajectories: &[T]) -> Result<()> {
    let kind = if D == 3 { "3D" } else { "2D" };
    let mut buf = Vec::new();
    for t in trajectories {
        let rec = DumpRecord {
            video,
            t0: t.start_frame(),
            kind,
            coords: t.points().iter().flat_map(|p| p.iter().copied()).collect(),
        };
        serde_json::to_writer(&mut buf, &rec)?;
        buf.write_all(b"\n")?;
    }
    std::fs::write(path, buf).map_err(|e| Error::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(size: usize, square: usize) -> FrameGray {
        FrameGray::from_fn(size, size, |x, y| if (x / square + y / square) % 2 == 0 { 0.0 } else { 1.0 })
    }

    /// Independent evaluation of the 2x2 structure tensor at one pixel.
    fn brute_min_eig(f: &FrameGray, x: usize, y: usize) -> f64 {
        let g = |xx: isize, yy: isize| {
            let gx = 0.5 * (f.clamped(xx + 1, yy) - f.clamped(xx - 1, yy));
            let gy = 0.5 * (f.clamped(xx, yy + 1) - f.clamped(xx, yy - 1));
            (gx, gy)
        };
        let mut m = [[0.0; 2]; 2];
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (xx, yy) = (x as isize + dx, y as isize + dy);
                if xx < 0 || yy < 0 || xx >= f.width as isize || yy >= f.height as isize {
                    continue;
                }
                let (gx, gy) = g(xx, yy);
                m[0][0] += gx * gx;
                m[0][1] += gx * gy;
                m[1][1] += gy * gy;
            }
        }
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[0][1];
        0.5 * tr - (0.25 * tr * tr - det).max(0.0).sqrt()
    }

    #[test]
    fn constant_image_has_no_samples() {
        let f = FrameGray::filled(30, 30, 0.5);
        assert!(sample_points(&f, &TrackerConfig::default_2d(), &[]).is_empty());
    }

    #[test]
    fn checkerboard_sampling_matches_brute_force_count() {
        let f = checkerboard(20, 4);
        let cfg = TrackerConfig::default_2d();
        let brute = (0..4)
            .flat_map(|j| (0..4).map(move |i| (2 + 5 * i, 2 + 5 * j)))
            .filter(|&(x, y)| brute_min_eig(&f, x, y) >= cfg.homogeneity_threshold)
            .count();
        assert_eq!(brute, 16);
        assert_eq!(sample_points(&f, &cfg, &[]).len(), 16);
    }

    #[test]
    fn occupied_cells_are_skipped() {
        let f = checkerboard(20, 4);
        let cfg = TrackerConfig::default_2d();
        let all = sample_points(&f, &cfg, &[]);
        assert!(sample_points(&f, &cfg, &all).is_empty());
        let some = sample_points(&f, &cfg, &[[7.4, 7.0]]);
        assert_eq!(some.len(), 15);
        assert!(!some.contains(&[7.0, 7.0]));
    }

    #[test]
    fn advect_2d_examples() {
        let cfg = TrackerConfig::default_2d();
        let c = FlowField2D::constant(20, 20, 2.0, 1.0);
        assert_eq!(advect_2d([5.0, 5.0], &c, &cfg), Some([7.0, 6.0]));
        let z = FlowField2D::zeros(20, 20);
        assert_eq!(advect_2d([5.5, 4.0], &z, &cfg), Some([5.5, 4.0]));

        let mut o = FlowField2D::constant(20, 20, 1.0, 0.0);
        let i = 5 * 20 + 6; // inside the 3x3 window around the naive target (6, 5)
        o.u[i] = 100.0;
        o.v[i] = 100.0;
        assert_eq!(advect_2d([5.0, 5.0], &o, &cfg), Some([6.0, 5.0]));
    }

    #[test]
    fn advect_2d_terminates_outside() {
        let cfg = TrackerConfig::default_2d();
        let far = FlowField2D::constant(20, 20, 40.0, 0.0);
        assert_eq!(advect_2d([5.0, 5.0], &far, &cfg), None);
        assert_eq!(advect_2d([-1.0, 5.0], &far, &cfg), None);
    }

    #[test]
    fn advect_3d_examples() {
        let k = CameraIntrinsics::new(100.0, 100.0, 10.0, 10.0).unwrap();
        let cfg = TrackerConfig::default_3d();
        let q = Point3::new(0.0, 0.0, 2.0);
        assert_eq!(advect_3d(q, &SceneFlowField::zeros(21, 21), &k, &cfg), Some(q));
        let dz = SceneFlowField::constant(21, 21, [0.0, 0.0, 0.1]);
        assert_eq!(advect_3d(q, &dz, &k, &cfg), Some(Point3::new(0.0, 0.0, 2.1)));

        let mut outlier = dz.clone();
        let i = 10 * 21 + 11;
        outlier.dx[i] = 5.0;
        outlier.dy[i] = 5.0;
        outlier.dz[i] = 5.0;
        assert_eq!(advect_3d(q, &outlier, &k, &cfg), Some(Point3::new(0.0, 0.0, 2.1)));

        let mut holes = SceneFlowField::constant(21, 21, [0.0, 0.0, 0.1]);
        for y in 9..=11 {
            for x in 9..=11 {
                holes.set_invalid(x, y);
            }
        }
        assert_eq!(advect_3d(q, &holes, &k, &cfg), None);
        holes.dz[10 * 21 + 10] = 0.3;
        holes.dx[10 * 21 + 10] = 0.0;
        holes.dy[10 * 21 + 10] = 0.0;
        assert_eq!(advect_3d(q, &holes, &k, &cfg), Some(Point3::new(0.0, 0.0, 2.3)));
    }

    fn textured(w: usize, h: usize) -> FrameGray {
        FrameGray::from_fn(w, h, |x, y| 0.5 + 0.4 * ((0.7 * x as f64).sin() * (0.9 * y as f64).cos()))
    }

    #[test]
    fn static_scene_yields_nothing() {
        let cfg = TrackerConfig::default_2d();
        let frames = vec![textured(40, 40); 17];
        let flows = vec![FlowField2D::zeros(40, 40); 16];
        assert!(track_2d(&frames, &flows, &cfg).unwrap().is_empty());
    }

    #[test]
    fn constant_flow_tracks_exactly() {
        let cfg = TrackerConfig::default_2d();
        let frames = vec![textured(80, 40); 18];
        let flows = vec![FlowField2D::constant(80, 40, 2.0, 0.0); 17];
        let trajs = track_2d(&frames, &flows, &cfg).unwrap();
        assert!(!trajs.is_empty());
        for t in &trajs {
            assert_eq!(t.points.len(), 16);
            for (i, p) in t.points.iter().enumerate() {
                assert_eq!(p[0], t.points[0][0] + 2.0 * i as f64);
                assert_eq!(p[1], t.points[0][1]);
            }
        }
    }

    #[test]
    fn sudden_jump_is_pruned() {
        let cfg = TrackerConfig::default_2d();
        let frames = vec![textured(200, 30); 17];
        let mut flows = vec![FlowField2D::constant(200, 30, 1.0, 0.0); 16];
        flows[7] = FlowField2D::constant(200, 30, 80.0, 0.0);
        let trajs = track_2d(&frames, &flows, &cfg).unwrap();
        assert!(trajs.is_empty());
        let mut relaxed = cfg.clone();
        relaxed.max_step = 100.0;
        assert!(!track_2d(&frames, &flows, &relaxed).unwrap().is_empty());
    }

    #[test]
    fn too_few_frames() {
        let cfg = TrackerConfig::default_2d();
        let frames = vec![textured(20, 20); 15];
        let flows = vec![FlowField2D::zeros(20, 20); 14];
        assert!(matches!(track_2d(&frames, &flows, &cfg), Err(Error::SequenceTooShort { .. })));
    }

    #[test]
    fn constant_scene_flow_tracks_exactly_in_3d() {
        let k = CameraIntrinsics::new(200.0, 200.0, 30.0, 20.0).unwrap();
        let cfg = TrackerConfig::default_3d();
        let frames = vec![textured(60, 40); 17];
        let depths = vec![DepthFrame::filled(60, 40, 2.0); 17];
        let step = [0.005, -0.002, 0.01];
        let sfs = vec![SceneFlowField::constant(60, 40, step); 16];
        let trajs = track_3d(&frames, &depths, &sfs, &k, &cfg).unwrap();
        assert!(!trajs.is_empty());
        for t in &trajs {
            assert_eq!(t.points.len(), 16);
            for (i, p) in t.points.iter().enumerate() {
                for d in 0..3 {
                    assert!((p[d] - (t.points[0][d] + step[d] * i as f64)).abs() <= 1e-9);
                }
                let px = project(Point3::from_array(*p), &k).unwrap();
                assert!((px.x - t.pixel_track[i][0]).abs() < 1e-6);
                assert!(t.points[i][2] > 0.0);
            }
        }
    }

    #[test]
    fn dump_is_line_delimited_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let t = Trajectory2D { start_frame: 3, points: vec![[1.0, 2.0], [3.0, 4.0]] };
        write_trajectory_dump(&path, "v1", &[t.clone(), t]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["kind"], "2D");
        assert_eq!(v["t0"], 3);
        assert_eq!(v["coords"].as_array().unwrap().len(), 4);
    }
}
