//! Dense 2D optical flow and 3D scene flow fields: representation, file
//! formats, a baseline estimator and a synthetic RGB-D sequence generator.

mod estimate;
mod io;
pub mod synth;

pub use estimate::{compose_scene_flow, estimate_flow_2d, range_flow_from_depth, FlowConfig};
pub use io::{read_flo, read_sf3, write_flo, write_sf3, FLO_MAGIC, SF3_MAGIC};

use crate::error::{Error, Result};

/// Per-pixel displacement in pixels/frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField2D {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField2D {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n {
            return Err(Error::Shape(format!(
                "flow {width}x{height} needs {n} samples per component, got {} and {}",
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::Format("flow field contains non-finite values".into()));
        }
        Ok(FlowField2D { width, height, u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField2D { width, height, u: vec![0.0; width * height], v: vec![0.0; width * height] }
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        FlowField2D { width, height, u: vec![u; width * height], v: vec![v; width * height] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }
}

/// Per-pixel metric displacement in meters/frame, row-major. A pixel whose
/// components are `NaN` is invalid and never sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFlowField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub dz: Vec<f64>,
}

impl SceneFlowField {
    pub fn new(width: usize, height: usize, dx: Vec<f64>, dy: Vec<f64>, dz: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if dx.len() != n || dy.len() != n || dz.len() != n {
            return Err(Error::Shape(format!("scene flow {width}x{height} needs {n} samples per component")));
        }
        if dx.iter().chain(&dy).chain(&dz).any(|x| x.is_infinite()) {
            return Err(Error::Format("scene flow contains infinite values".into()));
        }
        Ok(SceneFlowField { width, height, dx, dy, dz })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, [0.0; 3])
    }

    pub fn constant(width: usize, height: usize, d: [f64; 3]) -> Self {
        let n = width * height;
        SceneFlowField { width, height, dx: vec![d[0]; n], dy: vec![d[1]; n], dz: vec![d[2]; n] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [f64; 3] {
        let i = y * self.width + x;
        [self.dx[i], self.dy[i], self.dz[i]]
    }

    #[inline]
    pub fn is_valid_at(&self, x: usize, y: usize) -> bool {
        let i = y * self.width + x;
        !(self.dx[i].is_nan() || self.dy[i].is_nan() || self.dz[i].is_nan())
    }

    pub fn set_invalid(&mut self, x: usize, y: usize) {
        let i = y * self.width + x;
        self.dx[i] = f64::NAN;
        self.dy[i] = f64::NAN;
        self.dz[i] = f64::NAN;
    }
}
