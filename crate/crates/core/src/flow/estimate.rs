//! Baseline motion estimation: coarse-to-fine local least-squares optical
//! flow, range flow from aligned depth maps, and their composition into
//! metric scene flow.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FlowField2D, SceneFlowField};
use crate::error::{Error, Result};
use crate::geometry::{back_project, scene_flow_from_motion_field, CameraIntrinsics, PixelDepth};
use crate::image::{central_gradients, DepthFrame, FrameGray};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FlowConfig {
    pub levels: usize,
    /// Side of the square least-squares window.
    pub window: usize,
    pub warp_iterations: usize,
    /// Tikhonov term added to the 2x2 normal equations.
    pub regularization: f64,
    /// Depth jump (meters) between bilinear neighbours treated as an
    /// occlusion boundary when composing scene flow.
    pub depth_discontinuity: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            levels: 3,
            window: 5,
            warp_iterations: 3,
            regularization: 1e-6,
            depth_discontinuity: 0.1,
        }
    }
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    fn bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (ax, ay) = (x - x0, y - y0);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let top = self.clamped(xi, yi) * (1.0 - ax) + self.clamped(xi + 1, yi) * ax;
        let bot = self.clamped(xi, yi + 1) * (1.0 - ax) + self.clamped(xi + 1, yi + 1) * ax;
        top * (1.0 - ay) + bot * ay
    }

    /// 5-tap binomial blur followed by 2x decimation.
    fn downsample(&self) -> Plane {
        const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let mut tmp = vec![0.0; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                tmp[y * self.w + x] = (0..5)
                    .map(|k| K[k] * self.clamped(x as isize + k as isize - 2, y as isize))
                    .sum();
            }
        }
        let tmp = Plane { w: self.w, h: self.h, data: tmp };
        let (w2, h2) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut data = vec![0.0; w2 * h2];
        for y in 0..h2 {
            for x in 0..w2 {
                data[y * w2 + x] = (0..5)
                    .map(|k| K[k] * tmp.clamped(2 * x as isize, 2 * y as isize + k as isize - 2))
                    .sum();
            }
        }
        Plane { w: w2, h: h2, data }
    }
}

/// Dense flow from `prev` to `next`.
///
/// Pyramidal Lucas-Kanade: at each level the current estimate warps `next`
/// toward `prev`, and a per-pixel 2x2 least-squares system over a square
/// window yields the increment. Homogeneous regions produce zero flow.
pub fn estimate_flow_2d(prev: &FrameGray, next: &FrameGray, cfg: &FlowConfig) -> Result<FlowField2D> {
    if prev.width != next.width || prev.height != next.height {
        return Err(Error::Shape(format!(
            "frame sizes differ: {}x{} vs {}x{}",
            prev.width, prev.height, next.width, next.height
        )));
    }
    if prev.width < 16 || prev.height < 16 {
        return Err(Error::Shape(format!("frames must be at least 16x16, got {}x{}", prev.width, prev.height)));
    }
    let levels = cfg.levels.max(1);
    let radius = cfg.window.max(1) / 2;

    let mut pyr_prev = vec![Plane { w: prev.width, h: prev.height, data: prev.data.clone() }];
    let mut pyr_next = vec![Plane { w: next.width, h: next.height, data: next.data.clone() }];
    for _ in 1..levels {
        let p = pyr_prev.last().unwrap().downsample();
        let n = pyr_next.last().unwrap().downsample();
        pyr_prev.push(p);
        pyr_next.push(n);
    }

    let top = &pyr_prev[levels - 1];
    let mut u = vec![0.0; top.w * top.h];
    let mut v = vec![0.0; top.w * top.h];
    let (mut cw, mut ch) = (top.w, top.h);

    for level in (0..levels).rev() {
        let p = &pyr_prev[level];
        let n = &pyr_next[level];
        if (p.w, p.h) != (cw, ch) {
            // upsample the coarser estimate onto this level
            let coarse_u = Plane { w: cw, h: ch, data: u };
            let coarse_v = Plane { w: cw, h: ch, data: v };
            let sx = cw as f64 / p.w as f64;
            let sy = ch as f64 / p.h as f64;
            let mut nu = vec![0.0; p.w * p.h];
            let mut nv = vec![0.0; p.w * p.h];
            for y in 0..p.h {
                for x in 0..p.w {
                    let cxp = (x as f64 + 0.5) * sx - 0.5;
                    let cyp = (y as f64 + 0.5) * sy - 0.5;
                    nu[y * p.w + x] = coarse_u.bilinear(cxp, cyp) / sx;
                    nv[y * p.w + x] = coarse_v.bilinear(cxp, cyp) / sy;
                }
            }
            u = nu;
            v = nv;
            cw = p.w;
            ch = p.h;
        }
        let (pgx, pgy) = central_gradients(&p.data, p.w, p.h);
        let (ngx, ngy) = central_gradients(&n.data, p.w, p.h);
        let ngx = Plane { w: p.w, h: p.h, data: ngx };
        let ngy = Plane { w: p.w, h: p.h, data: ngy };
        let r = radius as isize;
        let (xmax, ymax) = ((p.w - 1) as f64, (p.h - 1) as f64);
        let (mut nu, mut nv): (Vec<f64>, Vec<f64>) = (0..p.w * p.h)
            .into_par_iter()
            .map(|i| {
                let (cx, cy) = ((i % p.w) as isize, (i / p.w) as isize);
                let (mut ui, mut vi) = (u[i], v[i]);
                for _ in 0..cfg.warp_iterations.max(1) {
                    let (mut a, mut b, mut d, mut sxt, mut syt) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for y in (cy - r).max(0)..=(cy + r).min(p.h as isize - 1) {
                        for x in (cx - r).max(0)..=(cx + r).min(p.w as isize - 1) {
                            let (wx, wy) = (x as f64 + ui, y as f64 + vi);
                            if !(0.0..=xmax).contains(&wx) || !(0.0..=ymax).contains(&wy) {
                                continue;
                            }
                            let j = y as usize * p.w + x as usize;
                            let gx = 0.5 * (pgx[j] + ngx.bilinear(wx, wy));
                            let gy = 0.5 * (pgy[j] + ngy.bilinear(wx, wy));
                            let it = n.bilinear(wx, wy) - p.data[j];
                            a += gx * gx;
                            b += gx * gy;
                            d += gy * gy;
                            sxt += gx * it;
                            syt += gy * it;
                        }
                    }
                    a += cfg.regularization;
                    d += cfg.regularization;
                    let det = a * d - b * b;
                    if det <= 0.0 || !det.is_finite() {
                        break;
                    }
                    ui -= (d * sxt - b * syt) / det;
                    vi -= (a * syt - b * sxt) / det;
                }
                (ui, vi)
            })
            .unzip();
        std::mem::swap(&mut u, &mut nu);
        std::mem::swap(&mut v, &mut nv);
    }
    FlowField2D::new(prev.width, prev.height, u, v)
}

/// Per-pixel range flow `w = nextD(x+u, y+v) - prevD(x, y)` in meters/frame;
/// `NaN` wherever either depth sample is invalid.
pub fn range_flow_from_depth(prev: &DepthFrame, next: &DepthFrame, flow: &FlowField2D) -> Result<Vec<f64>> {
    if (prev.width, prev.height) != (next.width, next.height)
        || (prev.width, prev.height) != (flow.width, flow.height)
    {
        return Err(Error::Shape(format!(
            "depth {}x{} / {}x{} and flow {}x{} must agree",
            prev.width, prev.height, next.width, next.height, flow.width, flow.height
        )));
    }
    let w = prev.width;
    Ok((0..w * prev.height)
        .map(|i| {
            let d0 = prev.meters[i];
            if !DepthFrame::is_valid(d0) {
                return f64::NAN;
            }
            let d1 = next.bilinear((i % w) as f64 + flow.u[i], (i / w) as f64 + flow.v[i]);
            if d1.is_nan() {
                f64::NAN
            } else {
                d1 - d0
            }
        })
        .collect())
}

/// Fallback scene flow: maps `(u, v, w)` through the pinhole model at each
/// pixel's back-projected point. Pixels straddling a depth discontinuity in
/// either frame are marked invalid.
pub fn compose_scene_flow(
    prev: &DepthFrame,
    next: &DepthFrame,
    flow: &FlowField2D,
    k: &CameraIntrinsics,
    cfg: &FlowConfig,
) -> Result<SceneFlowField> {
    let range = range_flow_from_depth(prev, next, flow)?;
    let (w, h) = (prev.width, prev.height);
    let mut sf = SceneFlowField::zeros(w, h);
    let jump = |d: &DepthFrame, x: f64, y: f64| -> bool {
        let x0 = (x.floor().max(0.0) as usize).min(w - 1);
        let y0 = (y.floor().max(0.0) as usize).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let vals = [d.at(x0, y0), d.at(x1, y0), d.at(x0, y1), d.at(x1, y1)];
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo > cfg.depth_discontinuity
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let wr = range[i];
            let (u, v) = (flow.u[i], flow.v[i]);
            if wr.is_nan() || jump(prev, x as f64, y as f64) || jump(next, x as f64 + u, y as f64 + v) {
                sf.set_invalid(x, y);
                continue;
            }
            let q = back_project(PixelDepth::new(x as f64, y as f64, prev.meters[i]), k)?;
            let d = scene_flow_from_motion_field([u, v, wr], q, k)?;
            sf.dx[i] = d[0];
            sf.dy[i] = d[1];
            sf.dz[i] = d[2];
        }
    }
    Ok(sf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(x: f64, y: f64) -> f64 {
        0.5 + 0.2 * (0.31 * x + 0.17 * y).sin() + 0.15 * (0.23 * y - 0.11 * x + 1.0).cos()
            + 0.1 * (0.41 * x + 0.37 * y + 2.0).sin()
    }

    fn textured(w: usize, h: usize, shift: (f64, f64)) -> FrameGray {
        FrameGray::from_fn(w, h, |x, y| texture(x as f64 - shift.0, y as f64 - shift.1))
    }

    #[test]
    fn identical_frames_give_near_zero_flow() {
        let f = textured(48, 40, (0.0, 0.0));
        let flow = estimate_flow_2d(&f, &f, &FlowConfig::default()).unwrap();
        let max = flow.u.iter().chain(&flow.v).fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(max <= 0.1, "max |flow| = {max}");
    }

    #[test]
    fn constant_frames_give_zero_flow() {
        let a = FrameGray::filled(32, 32, 0.4);
        let b = FrameGray::filled(32, 32, 0.4);
        let flow = estimate_flow_2d(&a, &b, &FlowConfig::default()).unwrap();
        assert!(flow.u.iter().chain(&flow.v).all(|&x| x == 0.0));
    }

    #[test]
    fn recovers_integer_translation() {
        let (w, h) = (64, 56);
        let prev = textured(w, h, (0.0, 0.0));
        let next = textured(w, h, (3.0, 0.0));
        let flow = estimate_flow_2d(&prev, &next, &FlowConfig::default()).unwrap();
        let mut su = 0.0;
        let mut sv = 0.0;
        let mut n = 0.0;
        let mut worst: f64 = 0.0;
        for y in 8..h - 8 {
            for x in 8..w - 8 {
                let (u, v) = flow.at(x, y);
                su += u;
                sv += v.abs();
                n += 1.0;
                worst = worst.max(((u - 3.0).powi(2) + v * v).sqrt());
            }
        }
        let (mu, mv) = (su / n, sv / n);
        assert!((2.5..=3.5).contains(&mu), "mean u {mu}");
        assert!(mv <= 0.5, "mean |v| {mv}");
        assert!(worst <= 0.5, "interior endpoint error {worst}");
    }

    #[test]
    fn recovers_diagonal_translation() {
        let (w, h) = (64, 64);
        let prev = textured(w, h, (0.0, 0.0));
        let next = textured(w, h, (-2.0, 1.0));
        let flow = estimate_flow_2d(&prev, &next, &FlowConfig::default()).unwrap();
        for y in 8..h - 8 {
            for x in 8..w - 8 {
                let (u, v) = flow.at(x, y);
                assert!(((u + 2.0).powi(2) + (v - 1.0).powi(2)).sqrt() <= 0.5);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let a = FrameGray::filled(32, 32, 0.0);
        let b = FrameGray::filled(32, 31, 0.0);
        assert!(matches!(estimate_flow_2d(&a, &b, &FlowConfig::default()), Err(Error::Shape(_))));
        let c = FrameGray::filled(8, 8, 0.0);
        assert!(estimate_flow_2d(&c, &c, &FlowConfig::default()).is_err());
        let d = DepthFrame::filled(4, 4, 1.0);
        assert!(range_flow_from_depth(&d, &d, &FlowField2D::zeros(4, 3)).is_err());
    }

    #[test]
    fn range_flow_examples() {
        let prev = DepthFrame::filled(6, 5, 2.0);
        let zero = FlowField2D::zeros(6, 5);
        assert!(range_flow_from_depth(&prev, &prev, &zero).unwrap().iter().all(|&w| w == 0.0));

        let closer = DepthFrame::filled(6, 5, 1.95);
        let w = range_flow_from_depth(&prev, &closer, &zero).unwrap();
        assert!(w.iter().all(|&w| (w + 0.05).abs() < 1e-12));

        let mut holes = prev.clone();
        holes.meters[7] = f64::NAN;
        let w = range_flow_from_depth(&holes, &prev, &zero).unwrap();
        assert!(w[7].is_nan());
        assert_eq!(w.iter().filter(|x| x.is_nan()).count(), 1);
    }

    #[test]
    fn range_flow_follows_the_flow_vector() {
        let prev = DepthFrame::filled(8, 8, 2.0);
        let next = DepthFrame::new(8, 8, (0..64).map(|i| 1.0 + 0.1 * (i % 8) as f64).collect()).unwrap();
        let flow = FlowField2D::constant(8, 8, 1.5, 0.0);
        let w = range_flow_from_depth(&prev, &next, &flow).unwrap();
        // next at x + 1.5 = 1 + 0.1 * (x + 1.5)
        assert!((w[3 * 8 + 2] - (1.0 + 0.35 - 2.0)).abs() < 1e-12);
        // sampling past the right border is invalid
        assert!(w[3 * 8 + 7].is_nan());
    }

    #[test]
    fn composed_scene_flow_of_pure_approach() {
        let k = CameraIntrinsics::new(500.0, 500.0, 10.0, 10.0).unwrap();
        let prev = DepthFrame::filled(21, 21, 2.0);
        let next = DepthFrame::filled(21, 21, 1.98);
        let flow = FlowField2D::zeros(21, 21);
        let sf = compose_scene_flow(&prev, &next, &flow, &k, &FlowConfig::default()).unwrap();
        let d = sf.at(10, 10);
        assert!(d[0].abs() < 1e-12 && d[1].abs() < 1e-12 && (d[2] + 0.02).abs() < 1e-12);
    }

    #[test]
    fn composed_scene_flow_masks_depth_edges() {
        let k = CameraIntrinsics::new(500.0, 500.0, 10.0, 10.0).unwrap();
        let mut prev = DepthFrame::filled(21, 21, 2.0);
        for y in 0..21 {
            for x in 11..21 {
                prev.meters[y * 21 + x] = 3.0;
            }
        }
        let flow = FlowField2D::zeros(21, 21);
        let sf = compose_scene_flow(&prev, &prev, &flow, &k, &FlowConfig::default()).unwrap();
        assert!(!sf.is_valid_at(10, 5));
        assert!(sf.is_valid_at(4, 5));
        assert!(sf.is_valid_at(15, 5));
    }
}
