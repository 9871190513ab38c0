//! Per-video extraction archives.
//!
//! Layout (little endian): `"TLAR"`, `u32` version, `u8` mode code, the video
//! id, then four sections in fixed order. Each section is a 4-byte tag, a
//! `u64` payload length and the payload:
//!
//! * `JNTS`: `u32` count, `i32` joint ids
//! * `TRAJ`: `u32` count; per trajectory `u32` start frame, `u32` point
//!   count, the points as `f64` (2 or 3 per point) and, in 3D mode, the
//!   pixel track as `f64` pairs
//! * `ASGN`: `u32` count; per trajectory `i32` joint index (`-1` = rejected)
//!   and `f64` distance
//! * `DESC`: `u32` count; per trajectory `u8` block count, then per block
//!   `u8` kind code, `u32` length and `f64` values
//!
//! Readers reject any other version.

use std::path::{Path, PathBuf};

use crate::descriptors::{DescriptorBlock, DescriptorKind};
use crate::error::{Error, Result};
use crate::io::{put_string, write_atomic, ByteReader};
use crate::localize::{ClusterAssignment, Membership};
use crate::tracking::{Trajectory2D, Trajectory3D};

use super::config::Mode;

pub const ARCHIVE_MAGIC: [u8; 4] = *b"TLAR";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Trajectories {
    TwoD(Vec<Trajectory2D>),
    ThreeD(Vec<Trajectory3D>),
}

impl Trajectories {
    pub fn len(&self) -> usize {
        match self {
            Trajectories::TwoD(t) => t.len(),
            Trajectories::ThreeD(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> Mode {
        match self {
            Trajectories::TwoD(_) => Mode::TwoD,
            Trajectories::ThreeD(_) => Mode::ThreeD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoArchive {
    pub id: String,
    /// Ids of the skeleton joints, in the order assignment indices refer to.
    pub joint_ids: Vec<i32>,
    pub trajectories: Trajectories,
    pub assignment: ClusterAssignment,
    pub descriptors: Vec<Vec<DescriptorBlock>>,
}

impl VideoArchive {
    pub fn mode(&self) -> Mode {
        self.trajectories.mode()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = self.trajectories.len();
        if self.assignment.members.len() != n || self.assignment.distances.len() != n || self.descriptors.len() != n {
            return Err(Error::Shape(format!(
                "archive {} has {n} trajectories, {} assignments and {} descriptor sets",
                self.id,
                self.assignment.members.len(),
                self.descriptors.len()
            )));
        }
        let mut out = Vec::new();
        out.extend_from_slice(&ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.push(self.mode().code());
        put_string(&mut out, &self.id);

        let mut sec = Vec::new();
        sec.extend_from_slice(&(self.joint_ids.len() as u32).to_le_bytes());
        for j in &self.joint_ids {
            sec.extend_from_slice(&j.to_le_bytes());
        }
        section(&mut out, b"JNTS", &sec);

        sec.clear();
        sec.extend_from_slice(&(n as u32).to_le_bytes());
        let f = |sec: &mut Vec<u8>, x: f64| sec.extend_from_slice(&x.to_le_bytes());
        match &self.trajectories {
            Trajectories::TwoD(ts) => {
                for t in ts {
                    sec.extend_from_slice(&(t.start_frame as u32).to_le_bytes());
                    sec.extend_from_slice(&(t.points.len() as u32).to_le_bytes());
                    t.points.iter().flatten().for_each(|&x| f(&mut sec, x));
                }
            }
            Trajectories::ThreeD(ts) => {
                for t in ts {
                    if t.pixel_track.len() != t.points.len() {
                        return Err(Error::Shape("pixel track and 3D points differ in length".into()));
                    }
                    sec.extend_from_slice(&(t.start_frame as u32).to_le_bytes());
                    sec.extend_from_slice(&(t.points.len() as u32).to_le_bytes());
                    t.points.iter().flatten().for_each(|&x| f(&mut sec, x));
                    t.pixel_track.iter().flatten().for_each(|&x| f(&mut sec, x));
                }
            }
        }
        section(&mut out, b"TRAJ", &sec);

        sec.clear();
        sec.extend_from_slice(&(n as u32).to_le_bytes());
        for (m, d) in self.assignment.members.iter().zip(&self.assignment.distances) {
            let j = match m {
                Membership::Assigned(j) => *j as i32,
                Membership::Rejected => -1,
            };
            sec.extend_from_slice(&j.to_le_bytes());
            f(&mut sec, *d);
        }
        section(&mut out, b"ASGN", &sec);

        sec.clear();
        sec.extend_from_slice(&(n as u32).to_le_bytes());
        for blocks in &self.descriptors {
            sec.push(blocks.len() as u8);
            for b in blocks {
                sec.push(b.kind.code());
                sec.extend_from_slice(&(b.values.len() as u32).to_le_bytes());
                b.values.iter().for_each(|&x| f(&mut sec, x));
            }
        }
        section(&mut out, b"DESC", &sec);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
        let mut r = ByteReader::new(bytes, path);
        if r.take(4)? != ARCHIVE_MAGIC {
            return Err(bad("not a trajectory archive".into()));
        }
        let version = r.u32()?;
        if version != ARCHIVE_VERSION {
            return Err(bad(format!("archive version {version}, expected {ARCHIVE_VERSION}")));
        }
        let mode = Mode::from_code(r.u8()?)?;
        let id = r.string()?;

        let mut s = open_section(&mut r, b"JNTS", path)?;
        let nj = s.u32()? as usize;
        let joint_ids = (0..nj).map(|_| s.i32()).collect::<Result<Vec<_>>>()?;
        s.finish()?;

        let mut s = open_section(&mut r, b"TRAJ", path)?;
        let n = s.u32()? as usize;
        let trajectories = match mode {
            Mode::TwoD => Trajectories::TwoD(
                (0..n)
                    .map(|_| {
                        let start_frame = s.u32()? as usize;
                        let len = s.u32()? as usize;
                        let points = (0..len).map(|_| Ok([s.f64()?, s.f64()?])).collect::<Result<_>>()?;
                        Ok(Trajectory2D { start_frame, points })
                    })
                    .collect::<Result<_>>()?,
            ),
            Mode::ThreeD => Trajectories::ThreeD(
                (0..n)
                    .map(|_| {
                        let start_frame = s.u32()? as usize;
                        let len = s.u32()? as usize;
                        let points = (0..len).map(|_| Ok([s.f64()?, s.f64()?, s.f64()?])).collect::<Result<_>>()?;
                        let pixel_track = (0..len).map(|_| Ok([s.f64()?, s.f64()?])).collect::<Result<_>>()?;
                        Ok(Trajectory3D { start_frame, points, pixel_track })
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        s.finish()?;

        let mut s = open_section(&mut r, b"ASGN", path)?;
        if s.u32()? as usize != n {
            return Err(bad("assignment count differs from trajectory count".into()));
        }
        let mut members = Vec::with_capacity(n);
        let mut distances = Vec::with_capacity(n);
        for _ in 0..n {
            let j = s.i32()?;
            members.push(match j {
                -1 => Membership::Rejected,
                j if j >= 0 && (j as usize) < nj => Membership::Assigned(j as usize),
                j => return Err(bad(format!("joint index {j} out of range"))),
            });
            distances.push(s.f64()?);
        }
        s.finish()?;

        let mut s = open_section(&mut r, b"DESC", path)?;
        if s.u32()? as usize != n {
            return Err(bad("descriptor count differs from trajectory count".into()));
        }
        let descriptors = (0..n)
            .map(|_| {
                let nb = s.u8()?;
                (0..nb)
                    .map(|_| {
                        let kind = DescriptorKind::from_code(s.u8()?)?;
                        let len = s.u32()? as usize;
                        let values = (0..len).map(|_| s.f64()).collect::<Result<_>>()?;
                        Ok(DescriptorBlock { kind, values })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        s.finish()?;
        r.finish()?;

        Ok(VideoArchive { id, joint_ids, trajectories, assignment: ClusterAssignment { members, distances }, descriptors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn open_section<'a>(r: &mut ByteReader<'a>, tag: &[u8; 4], path: &'a Path) -> Result<ByteReader<'a>> {
    let got = r.take(4)?;
    if got != tag {
        return Err(Error::Format(format!(
            "{}: expected section {}, found {:?}",
            path.display(),
            String::from_utf8_lossy(tag),
            String::from_utf8_lossy(got)
        )));
    }
    let len = usize::try_from(r.u64()?).map_err(|_| Error::Format(format!("{}: section too large", path.display())))?;
    Ok(ByteReader::new(r.take(len)?, path))
}

/// Where the training and evaluation stages get archives from.
pub trait ArchiveSource: Sync {
    fn load(&self, id: &str) -> Result<VideoArchive>;
}

/// Archives stored as `<dir>/<id>.tlar`.
#[derive(Debug, Clone)]
pub struct DirArchiveSource {
    pub dir: PathBuf,
}

impl DirArchiveSource {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DirArchiveSource { dir: dir.into() }
    }

    pub fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.tlar"))
    }
}

impl ArchiveSource for DirArchiveSource {
    fn load(&self, id: &str) -> Result<VideoArchive> {
        VideoArchive::load(&self.path(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_3d() -> VideoArchive {
        VideoArchive {
            id: "clip".into(),
            joint_ids: vec![4, 7],
            trajectories: Trajectories::ThreeD(vec![
                Trajectory3D { start_frame: 2, points: vec![[0.1, 0.2, 2.0], [0.2, 0.2, 2.1]], pixel_track: vec![[5.0, 6.0], [7.0, 6.5]] },
                Trajectory3D { start_frame: 0, points: vec![[1.0, -1.0, 3.0]], pixel_track: vec![[1.0, 2.0]] },
            ]),
            assignment: ClusterAssignment { members: vec![Membership::Assigned(1), Membership::Rejected], distances: vec![0.01, 0.7] },
            descriptors: vec![
                vec![DescriptorBlock { kind: DescriptorKind::Hsf, values: vec![0.5, 0.5] }],
                vec![],
            ],
        }
    }

    #[test]
    fn round_trip_2d_and_3d() {
        let dir = tempfile::tempdir().unwrap();
        let a = sample_3d();
        let p = dir.path().join("a.tlar");
        a.save(&p).unwrap();
        assert_eq!(VideoArchive::load(&p).unwrap(), a);

        let b = VideoArchive {
            id: "empty".into(),
            joint_ids: vec![],
            trajectories: Trajectories::TwoD(vec![]),
            assignment: ClusterAssignment { members: vec![], distances: vec![] },
            descriptors: vec![],
        };
        let p = dir.path().join("b.tlar");
        b.save(&p).unwrap();
        let back = VideoArchive::load(&p).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.mode(), Mode::TwoD);
    }

    #[test]
    fn rejects_wrong_version_and_truncation() {
        let bytes = sample_3d().to_bytes().unwrap();
        let p = Path::new("x.tlar");
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(VideoArchive::from_bytes(&v2, p), Err(Error::Format(_))));
        assert!(VideoArchive::from_bytes(&bytes[..bytes.len() - 3], p).is_err());
        assert!(VideoArchive::from_bytes(b"TLCB\x01\0\0\0", p).is_err());
    }

    #[test]
    fn inconsistent_archive_is_not_written() {
        let mut a = sample_3d();
        a.descriptors.pop();
        assert!(matches!(a.to_bytes(), Err(Error::Shape(_))));
    }
}
