//! Synthetic handwritten-like glyphs with a tunable complexity.
//!
//! For a given seed and complexity `c`, every class is drawn from the same
//! skeleton of `2 + c` random cubic strokes. The first `c` strokes are shared
//! verbatim by all classes. The last two are the distinguishing strokes: each
//! class displaces their control points by its own `N(0, CLASS_SPREAD²)`
//! offsets. Raising the complexity adds shared structure while the
//! class-specific detail stays the same size.
//!
//! Rasterization of one sample:
//! 1. add `N(0, 0.03²)` noise to every control-point coordinate;
//! 2. rotate all points about the centre by `U(−10°, 10°)`;
//! 3. map the unit square onto pixels `[2, 26]` (pixel `(r, c)` has centre
//!    `(c + 0.5, r + 0.5)`);
//! 4. sample each curve at 64 uniform parameter steps and draw the polyline
//!    with thickness `U(1, 2)` px, pixel coverage `clamp(t/2 + 0.5 − d, 0, 1)`
//!    where `d` is the distance from the pixel centre to the polyline;
//! 5. overlapping strokes combine by maximum.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{name_tag, substream, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{LabeledDataset, PIXELS, SIDE};

pub const STROKE_STEPS: usize = 64;
/// Strokes per glyph that differ between classes.
pub const DISTINGUISHING_STROKES: usize = 2;
/// Standard deviation of a class's control-point offsets on its
/// distinguishing strokes, in unit-square coordinates.
pub const CLASS_SPREAD: f64 = 0.05;

const JITTER_SIGMA: f64 = 0.03;
const MAX_ROTATION_DEG: f64 = 10.0;
const MARGIN: f64 = 2.0;
const CONTROL_LO: f64 = 0.1;
const CONTROL_HI: f64 = 0.9;

pub type Point = [f64; 2];
pub type Stroke = [Point; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct GlyphSpec {
    pub class_id: usize,
    pub complexity: usize,
    pub seed: u64,
    /// Shared strokes first, then the class's distinguishing strokes.
    pub strokes: Vec<Stroke>,
}

fn skeleton(complexity: usize, seed: u64) -> Vec<Stroke> {
    (0..complexity + DISTINGUISHING_STROKES)
        .map(|j| {
            let mut rng = substream(seed, &[name_tag("glyph-skeleton"), complexity as u64, j as u64]);
            let mut point = || {
                [
                    rng.random_range(CONTROL_LO..CONTROL_HI),
                    rng.random_range(CONTROL_LO..CONTROL_HI),
                ]
            };
            [point(), point(), point(), point()]
        })
        .collect()
}

impl GlyphSpec {
    pub fn derive(class_id: usize, complexity: usize, seed: u64) -> Result<Self> {
        if complexity == 0 {
            return Err(Error::Contract("glyph complexity must be at least 1".into()));
        }
        Ok(Self::from_skeleton(class_id, complexity, seed, &skeleton(complexity, seed)))
    }

    fn from_skeleton(class_id: usize, complexity: usize, seed: u64, skeleton: &[Stroke]) -> Self {
        let offset = Normal::new(0.0, CLASS_SPREAD).expect("valid spread");
        let mut rng = substream(seed, &[name_tag("glyph-class"), complexity as u64, class_id as u64]);
        let mut strokes = skeleton.to_vec();
        for stroke in &mut strokes[complexity..] {
            for c in stroke.iter_mut().flat_map(|p| p.iter_mut()) {
                *c += offset.sample(&mut rng);
            }
        }
        Self {
            class_id,
            complexity,
            seed,
            strokes,
        }
    }

    pub fn stroke_count(&self) -> usize {
        self.strokes.len()
    }

    /// Renders sample number `index` of this glyph into 784 values in `[0,1]`.
    pub fn rasterize(&self, index: usize) -> Vec<f64> {
        let mut rng = substream(
            self.seed,
            &[
                name_tag("glyph-sample"),
                self.complexity as u64,
                self.class_id as u64,
                index as u64,
            ],
        );
        render(&self.strokes, &mut rng)
    }
}

fn bezier(s: &Stroke, t: f64) -> Point {
    let u = 1.0 - t;
    let w = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
    let mut p = [0.0; 2];
    for (c, wi) in s.iter().zip(w) {
        p[0] += wi * c[0];
        p[1] += wi * c[1];
    }
    p
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    (qx * qx + qy * qy).sqrt()
}

fn render(strokes: &[Stroke], rng: &mut Rng) -> Vec<f64> {
    let jitter = Normal::new(0.0, JITTER_SIGMA).expect("valid sigma");
    let angle = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG).to_radians();
    let thickness = rng.random_range(1.0..=2.0);
    let (sin, cos) = angle.sin_cos();
    let span = SIDE as f64 - 2.0 * MARGIN;
    let to_pixels = |p: Point| {
        let (x, y) = (p[0] - 0.5, p[1] - 0.5);
        let (rx, ry) = (x * cos - y * sin + 0.5, x * sin + y * cos + 0.5);
        [MARGIN + rx * span, MARGIN + ry * span]
    };
    let reach = thickness / 2.0 + 0.5;
    let mut canvas = vec![0.0f64; PIXELS];
    for stroke in strokes {
        let mut noisy = *stroke;
        for c in noisy.iter_mut().flat_map(|p| p.iter_mut()) {
            *c += jitter.sample(rng);
        }
        let points: Vec<Point> = (0..=STROKE_STEPS)
            .map(|s| to_pixels(bezier(&noisy, s as f64 / STROKE_STEPS as f64)))
            .collect();
        for seg in points.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let lo = |i: usize| (a[i].min(b[i]) - reach - 0.5).floor().max(0.0) as usize;
            let hi = |i: usize| ((a[i].max(b[i]) + reach - 0.5).ceil().max(0.0) as usize).min(SIDE - 1);
            for r in lo(1)..=hi(1) {
                for c in lo(0)..=hi(0) {
                    let d = segment_distance([c as f64 + 0.5, r as f64 + 0.5], a, b);
                    let cover = (reach - d).clamp(0.0, 1.0);
                    let px = &mut canvas[r * SIDE + c];
                    *px = px.max(cover);
                }
            }
        }
    }
    canvas
}

/// `class_count × per_class` glyph samples, grouped by class.
pub fn synth_glyph_dataset<T: Scalar>(
    class_count: usize,
    per_class: usize,
    complexity: usize,
    seed: u64,
) -> Result<LabeledDataset<T>> {
    if class_count < 2 {
        return Err(Error::Contract(format!(
            "glyph datasets need at least 2 classes, got {class_count}"
        )));
    }
    if per_class == 0 || complexity == 0 {
        return Err(Error::Contract(
            "glyph datasets need per_class ≥ 1 and complexity ≥ 1".into(),
        ));
    }
    let skeleton = skeleton(complexity, seed);
    let mut pixels = Vec::with_capacity(class_count * per_class * PIXELS);
    let mut labels = Vec::with_capacity(class_count * per_class);
    for class in 0..class_count {
        let spec = GlyphSpec::from_skeleton(class, complexity, seed, &skeleton);
        for i in 0..per_class {
            pixels.extend(spec.rasterize(i).into_iter().map(T::of));
            labels.push(class);
        }
    }
    let images = Tensor::new(&[labels.len(), 1, SIDE, SIDE], pixels)?;
    let names = (0..class_count).map(|c| format!("glyph{c:02}")).collect();
    LabeledDataset::new(images, labels, class_count)?.with_class_names(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stroke_count_is_two_plus_complexity() {
        assert_eq!(GlyphSpec::derive(0, 1, 9).unwrap().stroke_count(), 3);
        assert_eq!(GlyphSpec::derive(3, 5, 9).unwrap().stroke_count(), 7);
        assert_eq!(GlyphSpec::derive(0, 11, 9).unwrap().stroke_count(), 13);
        assert!(GlyphSpec::derive(0, 0, 9).is_err());
    }

    #[test]
    fn spec_is_a_function_of_its_arguments() {
        assert_eq!(GlyphSpec::derive(4, 2, 77).unwrap(), GlyphSpec::derive(4, 2, 77).unwrap());
        assert_ne!(GlyphSpec::derive(4, 2, 77).unwrap().strokes, GlyphSpec::derive(4, 2, 78).unwrap().strokes);
    }

    #[test]
    fn classes_share_all_but_the_distinguishing_strokes() {
        let a = GlyphSpec::derive(0, 3, 3).unwrap();
        let b = GlyphSpec::derive(1, 3, 3).unwrap();
        assert_eq!(a.strokes[..3], b.strokes[..3]);
        for j in 3..5 {
            assert_ne!(a.strokes[j], b.strokes[j]);
        }
    }

    #[test]
    fn dataset_is_deterministic_and_in_range() {
        let a = synth_glyph_dataset::<f32>(3, 4, 2, 5).unwrap();
        let b = synth_glyph_dataset::<f32>(3, 4, 2, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels(), &[0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
        let (lo, hi) = a.images().min_max();
        assert!(lo >= 0.0 && hi <= 1.0 && hi > 0.9);
        assert!(synth_glyph_dataset::<f32>(1, 4, 2, 5).is_err());
    }

    #[test]
    fn samples_of_a_class_differ() {
        let spec = GlyphSpec::derive(0, 1, 1).unwrap();
        assert_ne!(spec.rasterize(0), spec.rasterize(1));
        assert_eq!(spec.rasterize(3), spec.rasterize(3));
    }
}
