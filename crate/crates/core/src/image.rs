//! Grayscale and depth frames plus binary PGM (P5) input/output.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major grayscale frame with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGray {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FrameGray {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "frame {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(FrameGray { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        FrameGray { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        FrameGray { width, height, data }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Edge-replicating access.
    #[inline]
    pub fn clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Bilinear sample with edge replication.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let ax = x - x0;
        let ay = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.clamped(xi, yi);
        let b = self.clamped(xi + 1, yi);
        let c = self.clamped(xi, yi + 1);
        let d = self.clamped(xi + 1, yi + 1);
        (a * (1.0 - ax) + b * ax) * (1.0 - ay) + (c * (1.0 - ax) + d * ax) * ay
    }

    /// Central-difference gradients with edge replication.
    pub fn gradients(&self) -> (Vec<f64>, Vec<f64>) {
        central_gradients(&self.data, self.width, self.height)
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        let (w, h, maxval, raw) = read_pgm_raw(BufReader::new(file))?;
        if maxval > 255 {
            return Err(Error::Format(format!(
                "{}: expected 8-bit PGM, maxval {maxval}",
                path.display()
            )));
        }
        let data = raw.iter().map(|&v| v as f64 / maxval as f64).collect();
        FrameGray::new(w, h, data)
    }

    /// Writes an 8-bit P5 file; intensities are clamped to `[0, 1]` and rounded.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(self.data.len() + 32);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.extend(self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        std::fs::write(path, out).map_err(|e| Error::file(path, e))
    }
}

/// Row-major depth map in meters; `NaN` marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    pub meters: Vec<f64>,
}

impl DepthFrame {
    pub fn new(width: usize, height: usize, meters: Vec<f64>) -> Result<Self> {
        if meters.len() != width * height {
            return Err(Error::Shape(format!(
                "depth {width}x{height} needs {} samples, got {}",
                width * height,
                meters.len()
            )));
        }
        Ok(DepthFrame { width, height, meters })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        DepthFrame { width, height, meters: vec![value; width * height] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.meters[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(d: f64) -> bool {
        d.is_finite() && d > 0.0
    }

    /// Bilinear sample; `NaN` if the sample falls outside the frame or any
    /// contributing neighbour is invalid.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64) {
            return f64::NAN;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = x - x0 as f64;
        let ay = y - y0 as f64;
        let mut acc = 0.0;
        for (xx, yy, w) in [
            (x0, y0, (1.0 - ax) * (1.0 - ay)),
            (x1, y0, ax * (1.0 - ay)),
            (x0, y1, (1.0 - ax) * ay),
            (x1, y1, ax * ay),
        ] {
            if w == 0.0 {
                continue;
            }
            let d = self.at(xx, yy);
            if !Self::is_valid(d) {
                return f64::NAN;
            }
            acc += w * d;
        }
        acc
    }

    /// Reads a 16-bit P5 file in millimeters; 0 becomes invalid.
    pub fn read_pgm(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        let (w, h, maxval, raw) = read_pgm_raw(BufReader::new(file))?;
        if maxval < 256 {
            return Err(Error::Format(format!(
                "{}: expected 16-bit depth PGM, maxval {maxval}",
                path.display()
            )));
        }
        let meters = raw
            .iter()
            .map(|&mm| if mm == 0 { f64::NAN } else { mm as f64 / 1000.0 })
            .collect();
        DepthFrame::new(w, h, meters)
    }

    /// Writes a 16-bit big-endian P5 file in millimeters; invalid pixels are 0.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(2 * self.meters.len() + 32);
        write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
        for &m in &self.meters {
            let mm = if Self::is_valid(m) { (m * 1000.0).round().clamp(1.0, 65535.0) as u16 } else { 0 };
            out.extend_from_slice(&mm.to_be_bytes());
        }
        std::fs::write(path, out).map_err(|e| Error::file(path, e))
    }
}

pub(crate) fn central_gradients(data: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; width * height];
    let mut gy = vec![0.0; width * height];
    for y in 0..height {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(height - 1);
        for x in 0..width {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(width - 1);
            gx[y * width + x] = 0.5 * (data[y * width + xp] - data[y * width + xm]);
            gy[y * width + x] = 0.5 * (data[yp * width + x] - data[ym * width + x]);
        }
    }
    (gx, gy)
}

fn pgm_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::Format("truncated PGM header".into()));
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c as char);
    }
}

fn read_pgm_raw<R: BufRead>(mut r: R) -> Result<(usize, usize, u32, Vec<u16>)> {
    if pgm_token(&mut r)? != "P5" {
        return Err(Error::Format("not a binary PGM (P5)".into()));
    }
    let parse = |s: String| s.parse::<u32>().map_err(|_| Error::Format(format!("bad PGM header field {s:?}")));
    let w = parse(pgm_token(&mut r)?)? as usize;
    let h = parse(pgm_token(&mut r)?)? as usize;
    let maxval = parse(pgm_token(&mut r)?)?;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("bad PGM geometry {w}x{h} maxval {maxval}")));
    }
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let mut buf = vec![0u8; w * h * bytes_per];
    r.read_exact(&mut buf)?;
    let raw = if bytes_per == 1 {
        buf.into_iter().map(u16::from).collect()
    } else {
        buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    Ok((w, h, maxval, raw))
}
