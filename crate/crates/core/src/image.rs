//! Single-channel raster with values in `[0, 1]` (0 = ink, 1 = paper) and
//! binary PGM (P5) encoding.

use std::io::{self, Read, Write};

use thiserror::Error;

/// Height every rendered line and network patch is normalized to.
pub const LINE_HEIGHT: usize = 105;

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed PGM: {0}")]
    Format(String),
}

impl GrayImage {
    /// Values are clamped into `[0, 1]`.
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), height * width, "pixel buffer size");
        assert!(height > 0 && width > 0, "empty image");
        let mut img = Self {
            height,
            width,
            pixels,
        };
        img.clamp();
        img
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn clamp(&mut self) {
        for p in &mut self.pixels {
            // NaN maps to paper
            *p = if p.is_nan() { 1.0 } else { p.clamp(0.0, 1.0) };
        }
    }

    pub fn in_range(&self) -> bool {
        self.pixels.iter().all(|p| (0.0..=1.0).contains(p))
    }

    /// Total ink, `Σ (1 − p)`.
    pub fn ink_mass(&self) -> f64 {
        self.pixels.iter().map(|p| 1.0 - p).sum()
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Columns `[x0, x0 + w)`; `x0 + w` must not exceed the width.
    pub fn crop_columns(&self, x0: usize, w: usize) -> GrayImage {
        assert!(x0 + w <= self.width);
        let mut out = Vec::with_capacity(self.height * w);
        for y in 0..self.height {
            out.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + w]);
        }
        GrayImage {
            height: self.height,
            width: w,
            pixels: out,
        }
    }

    /// 8-bit quantized bytes, `round(v·255)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v * 255.0).round() as u8)
            .collect()
    }

    pub fn write_pgm<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.to_bytes())
    }

    pub fn read_pgm<R: Read>(mut input: R) -> Result<Self, PgmError> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        let mut pos = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < buf.len() && (buf[pos].is_ascii_whitespace() || buf[pos] == b'#') {
                if buf[pos] == b'#' {
                    while pos < buf.len() && buf[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(PgmError::Format("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(PgmError::Format(format!(
                "magic {:?}, expected P5",
                fields[0]
            )));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| PgmError::Format(format!("bad header field {s:?}")))
        };
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(PgmError::Format(format!("maxval {maxval}, expected 255")));
        }
        if width == 0 || height == 0 {
            return Err(PgmError::Format("zero extent".into()));
        }
        pos += 1; // single whitespace after maxval
        let data = buf
            .get(pos..pos + width * height)
            .ok_or_else(|| PgmError::Format("truncated pixel data".into()))?;
        Ok(Self::new(
            height,
            width,
            data.iter().map(|&b| f64::from(b) / 255.0).collect(),
        ))
    }

    /// Pixel values after the 8-bit round trip of [`write_pgm`](Self::write_pgm).
    pub fn quantized(&self) -> GrayImage {
        GrayImage {
            height: self.height,
            width: self.width,
            pixels: self
                .to_bytes()
                .into_iter()
                .map(|b| f64::from(b) / 255.0)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip_quantizes() {
        let img = GrayImage::new(2, 3, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1]);
        let mut bytes = Vec::new();
        img.write_pgm(&mut bytes).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let back = GrayImage::read_pgm(&bytes[..]).unwrap();
        assert_eq!(back, img.quantized());
        assert_eq!(back.to_bytes(), img.to_bytes());
    }

    #[test]
    fn pgm_rejects_garbage() {
        assert!(GrayImage::read_pgm(&b"P2\n1 1\n255\n0"[..]).is_err());
        assert!(GrayImage::read_pgm(&b"P5\n4 4\n255\n\x00"[..]).is_err());
    }

    #[test]
    fn clamps_on_construction() {
        let img = GrayImage::new(1, 3, vec![-0.5, 2.0, f64::NAN]);
        assert_eq!(img.pixels(), &[0.0, 1.0, 1.0]);
    }
}
