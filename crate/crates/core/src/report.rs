//! Run artifacts: the per-epoch metrics table and PGM sample grids.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::idx::quantize;
use crate::data::pgm::encode_pgm;
use crate::data::SIDE;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str = "stage,epoch,split,metric,value";
pub const GRID_SEPARATOR: usize = 2;

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub stage: String,
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(stage: &str, epoch: usize, split: &str, metric: &str, value: f64) -> Self {
        Self {
            stage: stage.into(),
            epoch,
            split: split.into(),
            metric: metric.into(),
            value,
        }
    }
}

fn check_field(field: &str) -> Result<()> {
    if field.is_empty() || field.contains([',', '\n', '\r', '"']) {
        return Err(Error::Format(format!("metric field `{field}` is empty or needs quoting")));
    }
    Ok(())
}

/// Renders records as CSV, ordered by `(stage, epoch)`. The sort is stable,
/// so rows of one stage and epoch keep their recorded order. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn format_metrics(records: &[MetricRecord]) -> Result<String> {
    let mut sorted: Vec<&MetricRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (a.stage.as_str(), a.epoch).cmp(&(b.stage.as_str(), b.epoch)));
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in sorted {
        for f in [&r.stage, &r.split, &r.metric] {
            check_field(f)?;
        }
        if !r.value.is_finite() {
            return Err(Error::NonFinite(format!("metric {}/{}", r.stage, r.metric)));
        }
        writeln!(out, "{},{},{},{},{}", r.stage, r.epoch, r.split, r.metric, r.value).expect("string write");
    }
    Ok(out)
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format(format!("metrics header must be `{METRICS_HEADER}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = || Error::Format(format!("metrics line {}: `{line}`", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            let [stage, epoch, split, metric, value] = f[..] else {
                return Err(bad());
            };
            Ok(MetricRecord {
                stage: stage.into(),
                epoch: epoch.parse().map_err(|_| bad())?,
                split: split.into(),
                metric: metric.into(),
                value: value.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn write_metrics(path: impl AsRef<Path>, records: &[MetricRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_metrics(records)?).map_err(|e| Error::io(path, e))
}

/// Tiles `N×1×28×28` images row-major into one 8-bit canvas with 2-pixel
/// black separators. Returns `(width, height, pixels)`.
pub fn image_grid<T: Scalar>(images: &Tensor<T>, columns: usize) -> Result<(usize, usize, Vec<u8>)> {
    let s = images.shape();
    if s.len() != 4 || s[1..] != [1, SIDE, SIDE] {
        return Err(Error::Dimension(format!("image grid needs [N,1,28,28], got {s:?}")));
    }
    if columns == 0 {
        return Err(Error::Contract("image grid needs at least one column".into()));
    }
    let n = s[0];
    let cols = columns.min(n);
    let rows = n.div_ceil(cols);
    let width = cols * SIDE + (cols - 1) * GRID_SEPARATOR;
    let height = rows * SIDE + (rows - 1) * GRID_SEPARATOR;
    let mut canvas = vec![0u8; width * height];
    for i in 0..n {
        let (top, left) = ((i / cols) * (SIDE + GRID_SEPARATOR), (i % cols) * (SIDE + GRID_SEPARATOR));
        for (r, row) in images.item(i).chunks(SIDE).enumerate() {
            let start = (top + r) * width + left;
            for (dst, &v) in canvas[start..start + SIDE].iter_mut().zip(row) {
                *dst = quantize(v);
            }
        }
    }
    Ok((width, height, canvas))
}

/// Writes [`image_grid`] as a binary PGM.
pub fn dump_image_grid<T: Scalar>(images: &Tensor<T>, columns: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h, px) = image_grid(images, columns)?;
    fs::write(path, encode_pgm(w, h, &px)?).map_err(|e| Error::io(path, e))
}
