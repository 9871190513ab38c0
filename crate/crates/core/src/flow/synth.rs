//! Synthetic RGB-D sequences with exact ground-truth motion.
//!
//! Every body part is a textured, fronto-parallel square in world space that
//! translates along its motion program and may grow or shrink about its
//! center. Because intensities are
//! point-sampled from a continuous texture in patch coordinates, the rendered
//! frames, the 2D flow, the scene flow and the skeleton agree exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FlowField2D, SceneFlowField};
use crate::error::{Error, Result};
use crate::geometry::{back_project, CameraIntrinsics, PixelDepth, Point3};
use crate::image::{DepthFrame, FrameGray};
use crate::localize::{JointObservation, Skeleton};

/// A scalar offset as a function of the frame index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Waveform {
    #[default]
    Zero,
    Linear { rate: f64 },
    Sine {
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Explicit per-frame offsets; frames past the end hold the last value.
    Samples { values: Vec<f64> },
}

impl Waveform {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            Waveform::Zero => 0.0,
            Waveform::Linear { rate } => rate * t as f64,
            Waveform::Sine { amplitude, period, phase } => {
                amplitude * (std::f64::consts::TAU * t as f64 / period + phase).sin()
            }
            Waveform::Samples { values } => match values.get(t).or(values.last()) {
                Some(v) => *v,
                None => 0.0,
            },
        }
    }

    fn is_static(&self) -> bool {
        match self {
            Waveform::Zero => true,
            Waveform::Linear { rate } => *rate == 0.0,
            Waveform::Sine { amplitude, .. } => *amplitude == 0.0,
            Waveform::Samples { values } => values.windows(2).all(|w| w[0] == w[1]),
        }
    }
}

/// Offsets of a part from its rest pose: `x`, `y` in pixels, `z` in meters.
/// `growth` is the relative change of the physical size (0 = rest size).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct MotionProgram {
    pub x: Waveform,
    pub y: Waveform,
    pub z: Waveform,
    pub growth: Waveform,
}

impl MotionProgram {
    pub fn stationary() -> Self {
        Self::default()
    }

    pub fn is_static(&self) -> bool {
        self.x.is_static() && self.y.is_static() && self.z.is_static() && self.growth.is_static()
    }
}

/// A rigid textured square. `pixel` and `depth` give the rest pose;
/// `half_size` is the half-width in pixels at the rest depth (0 = invisible).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyPart {
    pub pixel: [f64; 2],
    pub depth: f64,
    pub half_size: f64,
    #[serde(default)]
    pub motion: MotionProgram,
}

impl BodyPart {
    /// Pixel position and depth of the part center at frame `t`.
    pub fn pose(&self, t: usize) -> (f64, f64, f64) {
        (
            self.pixel[0] + self.motion.x.at(t),
            self.pixel[1] + self.motion.y.at(t),
            self.depth + self.motion.z.at(t),
        )
    }

    /// Half-width in pixels at frame `t`.
    pub fn pixel_half_size(&self, t: usize) -> f64 {
        let (_, _, z) = self.pose(t);
        self.half_size * self.depth * (1.0 + self.motion.growth.at(t)) / z
    }

    /// World position of the part center at frame `t`.
    pub fn center(&self, t: usize, k: &CameraIntrinsics) -> Result<Point3> {
        let (x, y, z) = self.pose(t);
        back_project(PixelDepth::new(x, y, z), k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub id: u32,
    #[serde(flatten)]
    pub part: BodyPart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Tracker length the sequence must support (`frames > trajectory_len`).
    pub trajectory_len: usize,
    pub intrinsics: CameraIntrinsics,
    pub background_depth: f64,
    pub joints: Vec<JointSpec>,
    /// Moving parts that are not skeleton joints (background motion, clutter).
    #[serde(default)]
    pub movers: Vec<BodyPart>,
    pub label: String,
}

/// Everything rendered for one sequence. `flows[t]` and `scene_flows[t]` map
/// frame `t` to `t + 1`. `owners[t]` holds, per pixel, `-1` for background,
/// `j` for joint `j`'s patch, and `joints.len() + m` for mover `m`.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub frames: Vec<FrameGray>,
    pub depths: Vec<DepthFrame>,
    pub flows: Vec<FlowField2D>,
    pub scene_flows: Vec<SceneFlowField>,
    pub skeletons: Vec<Skeleton>,
    pub owners: Vec<Vec<i32>>,
    pub label: String,
}

#[derive(Debug, Clone)]
struct Texture {
    waves: Vec<(f64, f64, f64, f64)>, // (amplitude, kx, ky, phase)
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, freq: (f64, f64), contrast: f64) -> Self {
        let n = 3;
        let waves = (0..n)
            .map(|_| {
                let f = rng.gen_range(freq.0..freq.1) * std::f64::consts::TAU;
                let theta = rng.gen_range(0.0..std::f64::consts::PI);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                (contrast / n as f64, f * theta.cos(), f * theta.sin(), phase)
            })
            .collect();
        Texture { waves }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        0.5 + self.waves.iter().map(|&(a, kx, ky, ph)| a * (kx * x + ky * y + ph).sin()).sum::<f64>()
    }
}

fn validate(spec: &SynthSpec) -> Result<()> {
    if spec.frames <= spec.trajectory_len {
        return Err(Error::SequenceTooShort { frames: spec.frames, required: spec.trajectory_len + 1 });
    }
    if spec.width < 16 || spec.height < 16 {
        return Err(Error::Config(format!("synthetic frames must be at least 16x16, got {}x{}", spec.width, spec.height)));
    }
    spec.intrinsics.validate()?;
    if !(spec.background_depth > 0.0) {
        return Err(Error::InvalidDepth(spec.background_depth));
    }
    let parts = spec.joints.iter().map(|j| &j.part).chain(&spec.movers);
    for part in parts {
        for t in 0..spec.frames {
            let (_, _, z) = part.pose(t);
            if !(z > 0.0) {
                return Err(Error::InvalidDepth(z));
            }
        }
        if part.half_size < 0.0 {
            return Err(Error::Config("negative patch size".into()));
        }
        if (0..spec.frames).any(|t| !(1.0 + part.motion.growth.at(t) > 0.0)) {
            return Err(Error::Config("growth must keep the patch size positive".into()));
        }
    }
    Ok(())
}

pub fn synth_sequence(spec: &SynthSpec, seed: u64) -> Result<SynthVideo> {
    validate(spec)?;
    let k = &spec.intrinsics;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = Texture::random(&mut rng, (0.04, 0.11), 0.3);
    let parts: Vec<&BodyPart> = spec.joints.iter().map(|j| &j.part).chain(&spec.movers).collect();
    let textures: Vec<Texture> = parts.iter().map(|_| Texture::random(&mut rng, (0.5, 1.4), 0.7)).collect();

    let n = spec.frames;
    let centers: Vec<Vec<Point3>> = parts
        .iter()
        .map(|p| (0..n).map(|t| p.center(t, k)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;

    let mut frames = Vec::with_capacity(n);
    let mut depths = Vec::with_capacity(n);
    let mut owners = Vec::with_capacity(n);
    let mut flows = Vec::with_capacity(n - 1);
    let mut scene_flows = Vec::with_capacity(n - 1);

    for t in 0..n {
        let mut order: Vec<usize> = (0..parts.len()).filter(|&i| parts[i].half_size > 0.0).collect();
        order.sort_by(|&a, &b| centers[a][t].z.total_cmp(&centers[b][t].z).then(a.cmp(&b)));

        let mut intensity = vec![0.0; w * h];
        let mut depth = vec![spec.background_depth; w * h];
        let mut owner = vec![-1i32; w * h];
        let mut flow = FlowField2D::zeros(w, h);
        let mut sf = SceneFlowField::zeros(w, h);

        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let hit = order.iter().find_map(|&pi| {
                    let part = parts[pi];
                    let (px, py, _) = part.pose(t);
                    // patch-normalized coordinates; the patch spans [-1, 1]^2
                    let half = part.pixel_half_size(t);
                    let lx = (x as f64 - px) / half;
                    let ly = (y as f64 - py) / half;
                    (lx.abs() <= 1.0 && ly.abs() <= 1.0).then_some((pi, lx, ly))
                });
                match hit {
                    Some((pi, lx, ly)) => {
                        let part = parts[pi];
                        let z = part.pose(t).2;
                        intensity[i] = textures[pi].eval(lx, ly);
                        depth[i] = z;
                        owner[i] = pi as i32;
                        if t + 1 < n {
                            // the same patch point one frame later
                            let (qx, qy, qz) = part.pose(t + 1);
                            let half = part.pixel_half_size(t + 1);
                            let (nx, ny) = (qx + lx * half, qy + ly * half);
                            let p = back_project(PixelDepth::new(x as f64, y as f64, z), k)?;
                            let q = back_project(PixelDepth::new(nx, ny, qz), k)?;
                            flow.u[i] = nx - x as f64;
                            flow.v[i] = ny - y as f64;
                            sf.dx[i] = q.x - p.x;
                            sf.dy[i] = q.y - p.y;
                            sf.dz[i] = q.z - p.z;
                        }
                    }
                    None => intensity[i] = background.eval(x as f64, y as f64),
                }
            }
        }
        for v in &mut intensity {
            *v = v.clamp(0.0, 1.0);
        }
        frames.push(FrameGray::new(w, h, intensity)?);
        depths.push(DepthFrame::new(w, h, depth)?);
        owners.push(owner);
        if t + 1 < n {
            flows.push(flow);
            scene_flows.push(sf);
        }
    }

    let skeletons = (0..n)
        .map(|t| Skeleton {
            frame: t,
            joints: spec
                .joints
                .iter()
                .enumerate()
                .map(|(j, js)| {
                    let (x, y, _) = js.part.pose(t);
                    let c = centers[j][t];
                    JointObservation { id: js.id, x, y, wx: c.x, wy: c.y, wz: c.z }
                })
                .collect(),
        })
        .collect();

    Ok(SynthVideo { frames, depths, flows, scene_flows, skeletons, owners, label: spec.label.clone() })
}
