//! The IDX container used by MNIST: a big-endian magic and dimension header
//! followed by raw unsigned bytes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::LabeledDataset;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::Format(format!(
                "truncated header: expected at least {} bytes, got {}",
                offset + 4,
                bytes.len()
            ))
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format(format!(
            "bad IDX magic 0x{magic:08x}, expected 0x{expected:08x}"
        )));
    }
    Ok(())
}

fn payload(bytes: &[u8], header: usize, count: usize) -> Result<&[u8]> {
    let expected = header + count;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "IDX payload size mismatch: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    Ok(&bytes[header..])
}

/// Parses an IDX image file into `N×1×rows×cols` with pixels scaled to `[0,1]`.
pub fn parse_idx_images<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format(format!("empty IDX image file ({n}×{rows}×{cols})")));
    }
    let raw = payload(bytes, 16, n * rows * cols)?;
    let data = raw.iter().map(|&b| T::of(f64::from(b) / 255.0)).collect();
    Ok(Tensor::from_parts(vec![n, 1, rows, cols], data))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, n)?.iter().map(|&b| b as usize).collect())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn in_file<V>(path: &Path, r: Result<V>) -> Result<V> {
    r.map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn load_idx_images<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    in_file(path, parse_idx_images(&read_file(path)?))
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    in_file(path, parse_idx_labels(&read_file(path)?))
}

/// Quantizes `[0,1]` pixels to bytes, rounding half up.
pub fn quantize<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encodes `N×1×rows×cols` (or `N×rows×cols`) images as IDX bytes.
pub fn encode_idx_images<T: Scalar>(images: &Tensor<T>) -> Result<Vec<u8>> {
    let s = images.shape();
    let (n, rows, cols) = match *s {
        [n, 1, r, c] | [n, r, c] => (n, r, c),
        _ => return Err(Error::Dimension(format!("cannot store {s:?} as IDX images"))),
    };
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l)
            .map_err(|_| Error::Format(format!("label {l} does not fit in an IDX byte")))?;
        out.push(b);
    }
    Ok(out)
}

pub fn write_idx_images<T: Scalar>(path: impl AsRef<Path>, images: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_idx_images(images)?).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_idx_labels(labels)?).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

impl MnistSplit {
    pub fn file_names(self) -> (&'static str, &'static str) {
        match self {
            Self::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Self::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }

    pub fn paths(self, dir: &Path) -> (PathBuf, PathBuf) {
        let (i, l) = self.file_names();
        (dir.join(i), dir.join(l))
    }
}

/// Loads one MNIST split from a directory holding the four standard
/// uncompressed IDX files, keeping at most `limit` leading samples.
pub fn load_mnist<T: Scalar>(
    dir: impl AsRef<Path>,
    split: MnistSplit,
    limit: Option<usize>,
) -> Result<LabeledDataset<T>> {
    let (ip, lp) = split.paths(dir.as_ref());
    let images = load_idx_images::<T>(&ip)?;
    let labels = load_idx_labels(&lp)?;
    let ds = LabeledDataset::new(images, labels, 10)?;
    let names = (0..10).map(|d| d.to_string()).collect();
    let ds = ds.with_class_names(names)?;
    Ok(match limit {
        Some(n) => ds.take(n),
        None => ds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, 2, 2, 2] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(&[0, 255, 255, 0, 0, 0, 255, 255]);
        b
    }

    #[test]
    fn hand_crafted_images_scale_to_unit_range() {
        let t = parse_idx_images::<f64>(&fixture()).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn wrong_magic_names_the_observed_value() {
        let mut bytes = encode_idx_labels(&[1, 2]).unwrap();
        bytes[3] = 0x03;
        let err = parse_idx_labels(&bytes).unwrap_err().to_string();
        assert!(err.contains("0x00000803"), "{err}");
    }

    #[test]
    fn truncation_reports_byte_counts() {
        let mut bytes = fixture();
        bytes.pop();
        let err = parse_idx_images::<f32>(&bytes).unwrap_err().to_string();
        assert!(err.contains("expected 24") && err.contains("got 23"), "{err}");
        assert!(parse_idx_labels(&[0, 0, 8]).is_err());
    }

    #[test]
    fn encode_parse_round_trip() {
        let t = parse_idx_images::<f32>(&fixture()).unwrap();
        assert_eq!(encode_idx_images(&t).unwrap(), fixture());
        let labels = vec![5, 0, 4, 1, 9];
        assert_eq!(parse_idx_labels(&encode_idx_labels(&labels).unwrap()).unwrap(), labels);
        assert!(encode_idx_labels(&[256]).is_err());
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.0f64), 0);
        assert_eq!(quantize(1.0f64), 255);
        assert_eq!(quantize(0.5f64), 128);
        assert_eq!(quantize(1.5 / 255.0f64), 2);
    }
}
