use std::io::Read;
use std::path::Path;

use super::{FlowField2D, SceneFlowField};
use crate::error::{Error, Result};

/// Middlebury `.flo` tag, stored as a little-endian `f32` ("PIEH").
pub const FLO_MAGIC: f32 = 202021.25;
pub const SF3_MAGIC: [u8; 4] = *b"SF3\0";

fn read_exact_or_io(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::file(path, e))
}

pub fn write_flo(path: &Path, flow: &FlowField2D) -> Result<()> {
    let mut out = Vec::with_capacity(12 + 8 * flow.u.len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for (u, v) in flow.u.iter().zip(&flow.v) {
        out.extend_from_slice(&(*u as f32).to_le_bytes());
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::file(path, e))
}

pub fn read_flo(path: &Path) -> Result<FlowField2D> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut head = [0u8; 12];
    read_exact_or_io(&mut f, &mut head, path)?;
    let magic = f32::from_le_bytes(head[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(Error::Format(format!("{}: bad .flo magic {magic}", path.display())));
    }
    let w = i32::from_le_bytes(head[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(head[8..12].try_into().unwrap());
    if w <= 0 || h <= 0 {
        return Err(Error::Format(format!("{}: bad .flo size {w}x{h}", path.display())));
    }
    let (w, h) = (w as usize, h as usize);
    let mut body = vec![0u8; w * h * 8];
    read_exact_or_io(&mut f, &mut body, path)?;
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for px in body.chunks_exact(8) {
        u.push(f32::from_le_bytes(px[0..4].try_into().unwrap()) as f64);
        v.push(f32::from_le_bytes(px[4..8].try_into().unwrap()) as f64);
    }
    FlowField2D::new(w, h, u, v)
}

pub fn write_sf3(path: &Path, sf: &SceneFlowField) -> Result<()> {
    let n = sf.width * sf.height;
    let mut out = Vec::with_capacity(12 + 12 * n);
    out.extend_from_slice(&SF3_MAGIC);
    out.extend_from_slice(&(sf.width as u32).to_le_bytes());
    out.extend_from_slice(&(sf.height as u32).to_le_bytes());
    for i in 0..n {
        let invalid = sf.dx[i].is_nan() || sf.dy[i].is_nan() || sf.dz[i].is_nan();
        for c in [sf.dx[i], sf.dy[i], sf.dz[i]] {
            let c = if invalid { f32::NAN } else { c as f32 };
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::file(path, e))
}

pub fn read_sf3(path: &Path) -> Result<SceneFlowField> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut head = [0u8; 12];
    read_exact_or_io(&mut f, &mut head, path)?;
    if head[0..4] != SF3_MAGIC {
        return Err(Error::Format(format!("{}: bad .sf3 magic", path.display())));
    }
    let w = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    if w == 0 || h == 0 {
        return Err(Error::Format(format!("{}: bad .sf3 size {w}x{h}", path.display())));
    }
    let mut body = vec![0u8; w * h * 12];
    read_exact_or_io(&mut f, &mut body, path)?;
    let mut comps = [Vec::with_capacity(w * h), Vec::with_capacity(w * h), Vec::with_capacity(w * h)];
    for px in body.chunks_exact(12) {
        for (c, out) in comps.iter_mut().enumerate() {
            out.push(f32::from_le_bytes(px[4 * c..4 * c + 4].try_into().unwrap()) as f64);
        }
    }
    let [dx, dy, dz] = comps;
    SceneFlowField::new(w, h, dx, dy, dz)
}
