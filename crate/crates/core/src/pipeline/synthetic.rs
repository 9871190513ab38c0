//! Synthetic benchmark datasets built on [`crate::flow::synth`].
//!
//! Every preset uses a six-joint stick body (head, torso, hands, feet) whose
//! joints are textured patches. A class is a motion pattern executed by one
//! joint; all other joints stay still. Per-video amplitude, period and phase
//! are drawn at random.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::mix_seed;
use crate::error::{Error, Result};
use crate::flow::synth::{synth_sequence, BodyPart, JointSpec, MotionProgram, SynthSpec, SynthVideo, Waveform};
use crate::flow::{write_flo, write_sf3};
use crate::geometry::CameraIntrinsics;
use crate::io::write_atomic;
use crate::localize::write_skeletons;

use super::dataset::{cache_name, labels_csv, ManifestFile, Splits, VideoEntry, VideoInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Six classes: three motion patterns, each performed by two joints.
    LocalGlobal,
    /// Four classes; `lateral` and `radial` differ only by motion along Z.
    Radial,
    /// The local-global classes on a wider frame with a moving patch far
    /// to the right of the body.
    Background,
    /// [`Preset::Background`] without the moving patch.
    BackgroundClean,
    /// The local-global classes plus a randomly walking clutter blob next
    /// to a random joint.
    Noisy,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::LocalGlobal, Preset::Radial, Preset::Background, Preset::BackgroundClean, Preset::Noisy];

    pub fn name(self) -> &'static str {
        match self {
            Preset::LocalGlobal => "local-global",
            Preset::Radial => "radial",
            Preset::Background => "background",
            Preset::BackgroundClean => "background-clean",
            Preset::Noisy => "noisy",
        }
    }

    pub fn classes(self) -> Vec<&'static str> {
        match self {
            Preset::Radial => RADIAL_CLASSES.iter().map(|c| c.0).collect(),
            _ => LOCAL_CLASSES.iter().map(|c| c.0).collect(),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}; expected one of local-global, radial, background, background-clean, noisy")))
    }
}

pub const FRAMES: usize = 20;
pub const TRAJECTORY_LEN: usize = 15;
const BODY_WIDTH: usize = 160;
const HEIGHT: usize = 120;
const BACKGROUND_WIDTH: usize = 400;

pub const JOINT_NAMES: [&str; 6] = ["head", "torso", "lhand", "rhand", "lfoot", "rfoot"];
const JOINT_PIXELS: [[f64; 2]; 6] = [[80.0, 22.0], [80.0, 62.0], [30.0, 55.0], [130.0, 55.0], [55.0, 100.0], [105.0, 100.0]];
const JOINT_HALF: [f64; 6] = [9.0, 10.0, 8.0, 8.0, 8.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pattern {
    Horizontal,
    Vertical,
    Circle,
    /// Horizontal sine plus a sine along Z.
    HorizontalRadial,
    /// Horizontal sine plus an in-plane size change that matches the image
    /// of `HorizontalRadial` without moving in depth.
    HorizontalGrowing,
}

const LOCAL_CLASSES: [(&str, Pattern, usize); 6] = [
    ("hsine-lhand", Pattern::Horizontal, 2),
    ("hsine-rhand", Pattern::Horizontal, 3),
    ("vsine-lfoot", Pattern::Vertical, 4),
    ("vsine-rfoot", Pattern::Vertical, 5),
    ("circle-head", Pattern::Circle, 0),
    ("circle-torso", Pattern::Circle, 1),
];

const RADIAL_CLASSES: [(&str, Pattern, usize); 4] = [
    ("lateral-rhand", Pattern::HorizontalGrowing, 3),
    ("radial-rhand", Pattern::HorizontalRadial, 3),
    ("vsine-lhand", Pattern::Vertical, 2),
    ("circle-head", Pattern::Circle, 0),
];

/// Ids of the two classes whose images differ only by second-order terms;
/// only the second moves along Z.
pub const RADIAL_PAIR: [&str; 2] = ["lateral-rhand", "radial-rhand"];

pub fn videos_per_class(p: Preset) -> usize {
    match p {
        Preset::Radial => 12,
        _ => 10,
    }
}

#[derive(Debug, Clone)]
pub struct SynthItem {
    pub id: String,
    pub spec: SynthSpec,
    /// Seed of the texture generator.
    pub seed: u64,
    pub train: bool,
}

fn motion(pattern: Pattern, depth: f64, rng: &mut ChaCha8Rng) -> MotionProgram {
    let amplitude = rng.gen_range(4.0..8.0);
    let period = rng.gen_range(7.0..9.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let sine = |a: f64, ph: f64| Waveform::Sine { amplitude: a, period, phase: ph };
    match pattern {
        Pattern::Horizontal => MotionProgram { x: sine(amplitude, phase), ..Default::default() },
        Pattern::Vertical => MotionProgram { y: sine(amplitude, phase), ..Default::default() },
        Pattern::Circle => MotionProgram {
            x: sine(amplitude, phase),
            y: sine(amplitude, phase + std::f64::consts::FRAC_PI_2),
            ..Default::default()
        },
        Pattern::HorizontalRadial => {
            let z_phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let z_amplitude = rng.gen_range(0.04..0.06);
            MotionProgram { x: sine(amplitude, phase), z: sine(z_amplitude, z_phase), ..Default::default() }
        }
        Pattern::HorizontalGrowing => {
            let z_phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let z_amplitude = rng.gen_range(0.04..0.06);
            // approaching by dz scales the image by about 1 - dz / depth
            let growth = sine(z_amplitude / depth, z_phase + std::f64::consts::PI);
            MotionProgram { x: sine(amplitude, phase), growth, ..Default::default() }
        }
    }
}

fn body(mover: usize, program: MotionProgram, depth: f64) -> Vec<JointSpec> {
    (0..JOINT_NAMES.len())
        .map(|j| JointSpec {
            id: j as u32,
            part: BodyPart {
                pixel: JOINT_PIXELS[j],
                depth,
                half_size: JOINT_HALF[j],
                motion: if j == mover { program.clone() } else { MotionProgram::stationary() },
            },
        })
        .collect()
}

/// Random walk with steps drawn uniformly from `[-step, step]`.
fn random_walk(rng: &mut ChaCha8Rng, step: f64) -> Waveform {
    let mut v = 0.0;
    let values = (0..FRAMES)
        .map(|_| {
            let cur = v;
            v += rng.gen_range(-step..step);
            cur
        })
        .collect();
    Waveform::Samples { values }
}

/// All videos of a preset, class-major, with a half/half train/test split.
pub fn preset_items(preset: Preset, seed: u64) -> Vec<SynthItem> {
    preset_items_with(preset, seed, videos_per_class(preset))
}

/// Like [`preset_items`] with `per` videos per class (even numbers keep the
/// split balanced).
pub fn preset_items_with(preset: Preset, seed: u64, per: usize) -> Vec<SynthItem> {
    let classes: &[(&str, Pattern, usize)] = match preset {
        Preset::Radial => &RADIAL_CLASSES,
        _ => &LOCAL_CLASSES,
    };
    let width = match preset {
        Preset::Background | Preset::BackgroundClean => BACKGROUND_WIDTH,
        _ => BODY_WIDTH,
    };
    let depth = if preset == Preset::Radial { 2.5 } else { 2.0 };
    let mut items = Vec::new();
    for (ci, (label, pattern, joint)) in classes.iter().enumerate() {
        // the radial pair shares draws so that video i of one class is the
        // twin of video i of the other
        let stream = match *pattern {
            Pattern::HorizontalRadial => classes.iter().position(|c| c.1 == Pattern::HorizontalGrowing).unwrap_or(ci),
            _ => ci,
        };
        for i in 0..per {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, stream as u64, i as u64));
            let program = motion(*pattern, depth, &mut rng);
            let mut movers = Vec::new();
            // drawn after the body so both background presets share it
            let mut extra = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0x5eed, ci as u64, i as u64));
            match preset {
                Preset::Background => movers.push(BodyPart {
                    pixel: [365.0, extra.gen_range(40.0..80.0)],
                    depth: 2.5,
                    half_size: 10.0,
                    motion: MotionProgram {
                        x: Waveform::Sine { amplitude: extra.gen_range(2.0..4.0), period: extra.gen_range(6.0..10.0), phase: 0.0 },
                        y: Waveform::Sine { amplitude: extra.gen_range(2.0..6.0), period: extra.gen_range(6.0..10.0), phase: 1.0 },
                        ..Default::default()
                    },
                }),
                Preset::Noisy => {
                    let anchor = JOINT_PIXELS[extra.gen_range(0..JOINT_PIXELS.len())];
                    let angle = extra.gen_range(0.0..std::f64::consts::TAU);
                    let offset = 12.0;
                    movers.push(BodyPart {
                        pixel: [anchor[0] + offset * angle.cos(), anchor[1] + offset * angle.sin()],
                        depth: 1.9,
                        half_size: 7.5,
                        motion: MotionProgram { x: random_walk(&mut extra, 1.2), y: random_walk(&mut extra, 1.2), ..Default::default() },
                    });
                }
                _ => {}
            }
            let spec = SynthSpec {
                width,
                height: HEIGHT,
                frames: FRAMES,
                trajectory_len: TRAJECTORY_LEN,
                intrinsics: CameraIntrinsics::default_for(width, HEIGHT),
                background_depth: 3.0,
                joints: body(*joint, program, depth),
                movers,
                label: label.to_string(),
            };
            items.push(SynthItem {
                id: format!("{}-{:02}", label, i),
                spec,
                seed: mix_seed(seed, 0x7e47, (stream * per + i) as u64),
                train: i % 2 == 0,
            });
        }
    }
    items
}

pub fn render(item: &SynthItem) -> Result<SynthVideo> {
    synth_sequence(&item.spec, item.seed)
}

/// In-memory extraction input with the ground-truth fields as caches.
pub fn synth_input(item: &SynthItem, video: &SynthVideo) -> VideoInput {
    VideoInput {
        id: item.id.clone(),
        frames: video.frames.clone(),
        depths: Some(video.depths.clone()),
        flows: video.flows.iter().cloned().map(Some).collect(),
        scene_flows: video.scene_flows.iter().cloned().map(Some).collect(),
        skeletons: Some(video.skeletons.clone()),
        intrinsics: item.spec.intrinsics,
    }
}

/// Writes a complete dataset under `out` and returns the manifest path.
pub fn cmd_synth(preset: Preset, out: &Path, seed: u64, per_class: Option<usize>) -> Result<PathBuf> {
    use rayon::prelude::*;

    if per_class == Some(0) {
        return Err(Error::Config("need at least one video per class".into()));
    }
    let items = preset_items_with(preset, seed, per_class.unwrap_or(videos_per_class(preset)));
    let rel = |id: &str, sub: &str| PathBuf::from("videos").join(id).join(sub);
    items.par_iter().try_for_each(|item| -> Result<()> {
        let v = render(item)?;
        let dir = out.join("videos").join(&item.id);
        for sub in ["rgb", "depth", "flow", "sceneflow"] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::file(&d, e))?;
        }
        for (t, f) in v.frames.iter().enumerate() {
            f.write_pgm(&dir.join("rgb").join(cache_name(t, "pgm")))?;
        }
        for (t, d) in v.depths.iter().enumerate() {
            d.write_pgm(&dir.join("depth").join(cache_name(t, "pgm")))?;
        }
        for (t, f) in v.flows.iter().enumerate() {
            write_flo(&dir.join("flow").join(cache_name(t, "flo")), f)?;
        }
        for (t, f) in v.scene_flows.iter().enumerate() {
            write_sf3(&dir.join("sceneflow").join(cache_name(t, "sf3")), f)?;
        }
        write_skeletons(&dir.join("skeleton.jsonl"), &v.skeletons)
    })?;

    let intrinsics = items.first().map(|i| i.spec.intrinsics).unwrap_or_else(|| CameraIntrinsics::default_for(BODY_WIDTH, HEIGHT));
    intrinsics.save(&out.join("intrinsics.json"))?;
    let rows: Vec<(String, String)> = items.iter().map(|i| (i.id.clone(), i.spec.label.clone())).collect();
    write_atomic(&out.join("labels.csv"), labels_csv(&rows).as_bytes())?;
    let splits = Splits {
        train: items.iter().filter(|i| i.train).map(|i| i.id.clone()).collect(),
        test: items.iter().filter(|i| !i.train).map(|i| i.id.clone()).collect(),
    };
    write_atomic(&out.join("splits.json"), serde_json::to_string_pretty(&splits)?.as_bytes())?;
    let manifest = ManifestFile {
        intrinsics: Some("intrinsics.json".into()),
        labels: Some("labels.csv".into()),
        splits: "splits.json".into(),
        videos: items
            .iter()
            .map(|i| VideoEntry {
                id: i.id.clone(),
                frames: rel(&i.id, "rgb"),
                depth: Some(rel(&i.id, "depth")),
                skeleton: Some(rel(&i.id, "skeleton.jsonl")),
                label: None,
                flow: Some(rel(&i.id, "flow")),
                scene_flow: Some(rel(&i.id, "sceneflow")),
            })
            .collect(),
    };
    let path = out.join("manifest.json");
    write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_balanced_classes_and_splits() {
        for p in Preset::ALL {
            let items = preset_items(p, 1);
            let classes = p.classes();
            assert_eq!(items.len(), classes.len() * videos_per_class(p));
            for c in &classes {
                let of_class: Vec<_> = items.iter().filter(|i| i.spec.label == *c).collect();
                assert_eq!(of_class.iter().filter(|i| i.train).count(), of_class.len() / 2);
            }
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
    }

    #[test]
    fn background_twins_share_the_body() {
        let a = preset_items(Preset::Background, 4);
        let b = preset_items(Preset::BackgroundClean, 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.spec.joints, y.spec.joints);
            assert_eq!(x.seed, y.seed);
            assert_eq!((x.spec.movers.len(), y.spec.movers.len()), (1, 0));
        }
    }

    #[test]
    fn radial_pair_are_twins() {
        let items = preset_items(Preset::Radial, 3);
        let of = |label: &str| items.iter().filter(|i| i.spec.label == label).collect::<Vec<_>>();
        for (a, b) in of(RADIAL_PAIR[0]).into_iter().zip(of(RADIAL_PAIR[1])) {
            assert_eq!(a.seed, b.seed);
            let (ma, mb) = (&a.spec.joints[3].part.motion, &b.spec.joints[3].part.motion);
            assert_eq!(ma.x, mb.x);
            assert!(ma.z.at(5) == 0.0 && mb.growth.at(5) == 0.0);
            for t in 0..FRAMES {
                // growth mirrors the image scale of the depth change
                let scale = 2.5 / (2.5 + mb.z.at(t));
                assert!((1.0 + ma.growth.at(t) - scale).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn background_mover_stays_far_from_every_joint() {
        for item in preset_items(Preset::Background, 9) {
            let m = &item.spec.movers[0];
            for t in 0..FRAMES {
                let (mx, my, _) = m.pose(t);
                for j in &item.spec.joints {
                    let (jx, jy, _) = j.part.pose(t);
                    // nearest mover pixel to the joint center
                    let dx = ((mx - jx).abs() - m.half_size).max(0.0);
                    let dy = ((my - jy).abs() - m.half_size).max(0.0);
                    assert!(dx.hypot(dy) >= 200.0);
                }
            }
        }
    }
}
