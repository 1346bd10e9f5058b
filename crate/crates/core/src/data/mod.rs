//! Datasets: IDX and PGM containers, per-class image directories, the
//! synthetic glyph generator and stratified splitting.

mod directory;
mod glyph;
pub mod idx;
pub mod pgm;
mod rescale;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use directory::{load_directory_dataset, read_class_map, ClassMap, LoadRecord, LoadReport};
pub use glyph::{synth_glyph_dataset, GlyphSpec, CLASS_SPREAD, DISTINGUISHING_STROKES, STROKE_STEPS};
pub use idx::{load_mnist, MnistSplit};
pub use rescale::{resize_bilinear, rescale_to_28};
pub use split::{split_indices, train_test_split};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;

/// Character group of a class, after the usual split of a Bengali alphabet
/// into vowels, consonants, numerals and compound characters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupTag {
    V,
    C,
    N,
    X,
    All,
}

impl FromStr for GroupTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "V" => Ok(Self::V),
            "C" => Ok(Self::C),
            "N" => Ok(Self::N),
            "X" => Ok(Self::X),
            "All" => Ok(Self::All),
            other => Err(Error::Format(format!("unknown group tag `{other}`"))),
        }
    }
}

impl fmt::Display for GroupTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Images `N×1×28×28` in `[0,1]` with labels in `[0, K)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset<T> {
    images: Tensor<T>,
    labels: Vec<usize>,
    class_count: usize,
    class_names: Option<Vec<String>>,
    group_tag: Option<GroupTag>,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 || s[1..] != [1, SIDE, SIDE] {
            return Err(Error::Input(format!(
                "dataset images must be [N,1,28,28], got {s:?}"
            )));
        }
        if s[0] != labels.len() {
            return Err(Error::Input(format!(
                "{} images but {} labels",
                s[0],
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::Input("class count must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        let (lo, hi) = images.min_max();
        if lo < T::zero() || hi > T::one() {
            return Err(Error::Input(format!(
                "pixel values must lie in [0,1], found range [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            images,
            labels,
            class_count,
            class_names: None,
            group_tag: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.class_count {
            return Err(Error::Input(format!(
                "{} class names for {} classes",
                names.len(),
                self.class_count
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn with_group_tag(mut self, tag: GroupTag) -> Self {
        self.group_tag = Some(tag);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn group_tag(&self) -> Option<GroupTag> {
        self.group_tag
    }

    pub fn image(&self, i: usize) -> &[T] {
        self.images.item(i)
    }

    /// Samples at `indices`, in that order, keeping class metadata.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            class_names: self.class_names.clone(),
            group_tag: self.group_tag,
        }
    }

    /// The first `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Restricts to the classes a class map assigns to `tag` and renumbers
    /// them in their existing order. `GroupTag::All` keeps every class.
    pub fn restrict_to_group(&self, map: &ClassMap, tag: GroupTag) -> Result<Self> {
        if tag == GroupTag::All {
            return Ok(self.clone().with_group_tag(GroupTag::All));
        }
        let names = self
            .class_names
            .as_ref()
            .ok_or_else(|| Error::Input("group selection needs class names".into()))?;
        let keep: Vec<usize> = (0..self.class_count)
            .filter(|&c| map.get(&names[c]) == Some(&tag))
            .collect();
        if keep.is_empty() {
            return Err(Error::Input(format!("no classes belong to group {tag}")));
        }
        let mut remap = vec![usize::MAX; self.class_count];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| remap[self.labels[i]] != usize::MAX)
            .collect();
        let labels = idx.iter().map(|&i| remap[self.labels[i]]).collect();
        let subset = Self::new(self.images.select(&idx), labels, keep.len())?;
        let names = keep.iter().map(|&c| names[c].clone()).collect();
        Ok(subset.with_class_names(names)?.with_group_tag(tag))
    }

    /// Concatenation of two datasets over the same classes.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.class_count != other.class_count {
            return Err(Error::Contract(format!(
                "cannot merge datasets with {} and {} classes",
                self.class_count, other.class_count
            )));
        }
        let images = Tensor::concat(&[&self.images, &other.images])?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self {
            images,
            labels,
            class_count: self.class_count,
            class_names: self.class_names.clone(),
            group_tag: self.group_tag,
        })
    }

    pub fn cast<U: Scalar>(&self) -> LabeledDataset<U> {
        LabeledDataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            class_count: self.class_count,
            class_names: self.class_names.clone(),
            group_tag: self.group_tag,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(labels: Vec<usize>, k: usize) -> LabeledDataset<f32> {
        let n = labels.len();
        LabeledDataset::new(Tensor::filled(&[n, 1, 28, 28], 0.25), labels, k).unwrap()
    }

    #[test]
    fn invariants_are_checked() {
        let img = Tensor::<f32>::filled(&[2, 1, 28, 28], 0.5);
        assert!(LabeledDataset::new(img.clone(), vec![0], 2).is_err());
        assert!(LabeledDataset::new(img.clone(), vec![0, 2], 2).is_err());
        let bright = Tensor::<f32>::filled(&[2, 1, 28, 28], 1.5);
        assert!(LabeledDataset::new(bright, vec![0, 1], 2).is_err());
        let small = Tensor::<f32>::filled(&[2, 1, 14, 14], 0.5);
        assert!(LabeledDataset::new(small, vec![0, 1], 2).is_err());
        assert!(LabeledDataset::new(img, vec![0, 1], 2).is_ok());
    }

    #[test]
    fn group_restriction_renumbers_classes() {
        let ds = tiny(vec![0, 1, 2, 1, 0], 3)
            .with_class_names(vec!["a".into(), "b".into(), "c".into()])
            .unwrap();
        let map: ClassMap = [("a", GroupTag::V), ("b", GroupTag::X), ("c", GroupTag::V)]
            .into_iter()
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        let v = ds.restrict_to_group(&map, GroupTag::V).unwrap();
        assert_eq!(v.labels(), &[0, 1, 0]);
        assert_eq!(v.class_count(), 2);
        assert_eq!(v.group_tag(), Some(GroupTag::V));
        assert_eq!(v.class_names().unwrap(), &["a".to_string(), "c".to_string()]);
        assert!(ds.restrict_to_group(&map, GroupTag::N).is_err());
    }

    #[test]
    fn concat_requires_matching_class_count() {
        let a = tiny(vec![0, 1], 2);
        let b = tiny(vec![1], 2);
        assert_eq!(a.concat(&b).unwrap().labels(), &[0, 1, 1]);
        assert!(a.concat(&tiny(vec![0], 3)).is_err());
    }
}
