//! Ideal pinhole camera: pixel/depth <-> world conversion and the mapping of
//! a depth motion field `(u, v, w)` to metric scene flow.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Focal lengths and principal point, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    /// Fallback used when a dataset ships no intrinsics file.
    pub fn default_for(width: usize, height: usize) -> Self {
        CameraIntrinsics {
            fx: 525.0,
            fy: 525.0,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fx.is_finite() && self.fy > 0.0 && self.fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidIntrinsics("principal point must be finite".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let k: CameraIntrinsics = serde_json::from_str(&text)?;
        k.validate()?;
        Ok(k)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }
}

/// World coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl std::ops::Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// A continuous pixel position with its depth in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelDepth {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl PixelDepth {
    pub const fn new(x: f64, y: f64, depth: f64) -> Self {
        PixelDepth { x, y, depth }
    }
}

pub fn back_project(p: PixelDepth, k: &CameraIntrinsics) -> Result<Point3> {
    if !(p.depth > 0.0) {
        return Err(Error::InvalidDepth(p.depth));
    }
    Ok(Point3::new(
        (p.x - k.cx) * p.depth / k.fx,
        (p.y - k.cy) * p.depth / k.fy,
        p.depth,
    ))
}

pub fn project(q: Point3, k: &CameraIntrinsics) -> Result<PixelDepth> {
    if !(q.z > 0.0) {
        return Err(Error::BehindCamera(q.z));
    }
    Ok(PixelDepth::new(
        q.x * k.fx / q.z + k.cx,
        q.y * k.fy / q.z + k.cy,
        q.z,
    ))
}

/// Maps a depth motion field sample `s = (u, v, w)` at world point `q` to a
/// metric displacement. `u`, `v` are in pixels/frame, `w` in meters/frame.
///
/// `q` is the point before motion.
pub fn scene_flow_from_motion_field(
    s: [f64; 3],
    q: Point3,
    k: &CameraIntrinsics,
) -> Result<[f64; 3]> {
    if !(q.z > 0.0) {
        return Err(Error::InvalidDepth(q.z));
    }
    let [u, v, w] = s;
    Ok([
        q.z / k.fx * u + q.x / q.z * w,
        q.z / k.fy * v + q.y / q.z * w,
        w,
    ])
}
