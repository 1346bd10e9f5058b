//! Binary 8-bit PGM (`P5`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A decoded grayscale image with its raw samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Samples scaled into `[0,1]`.
    pub fn unit_values(&self) -> Vec<f64> {
        let m = f64::from(self.maxval);
        self.pixels.iter().map(|&p| f64::from(p) / m).collect()
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("PGM header: missing {what}")))
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::Format("not a binary PGM (expected `P5`)".into()));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("PGM has empty extent {width}×{height}")));
    }
    if !(1..=255).contains(&maxval) {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("PGM header not terminated by whitespace".into()));
    }
    let start = h.pos + 1;
    let expected = width * height;
    let raw = &bytes[start..];
    if raw.len() < expected {
        return Err(Error::Format(format!(
            "truncated PGM raster: expected {expected} bytes, got {}",
            raw.len()
        )));
    }
    let pixels = raw[..expected].to_vec();
    if let Some(&bad) = pixels.iter().find(|&&p| usize::from(p) > maxval) {
        return Err(Error::Format(format!("PGM sample {bad} exceeds maxval {maxval}")));
    }
    Ok(GrayImage {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if width * height != pixels.len() || pixels.is_empty() {
        return Err(Error::Dimension(format!(
            "{} pixels for a {width}×{height} PGM",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(width, height, pixels)?).map_err(|e| Error::io(path, e))
}
