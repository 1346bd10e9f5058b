//! Pixel-space perturbations of generated images: the fast gradient sign
//! step against a classifier, or bounded uniform noise.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Network, ParamMode};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

pub const MAX_EPSILON: f64 = 0.5;
pub const DEFAULT_EPSILON: f64 = 0.05;

/// Images per gradient evaluation; the sign of each pixel's gradient does
/// not depend on how the batch is split.
const FGSM_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    #[default]
    Fgsm,
    UniformRandom,
}

/// Perturbation mode and magnitude. The classifier used by `fgsm` is passed
/// separately at application time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSpec {
    pub mode: PerturbMode,
    pub epsilon: f64,
}

impl PerturbSpec {
    pub fn new(mode: PerturbMode, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self { mode, epsilon })
    }

    /// Applies the perturbation to a batch whose intended classes are `labels`.
    pub fn apply<T: Scalar>(
        &self,
        images: &Tensor<T>,
        labels: &[usize],
        classifier: &Network<T>,
        rng: &mut Rng,
    ) -> Result<Tensor<T>> {
        match self.mode {
            PerturbMode::Fgsm => fgsm_perturb(images, labels, classifier, self.epsilon),
            PerturbMode::UniformRandom => random_perturb(images, self.epsilon, rng),
        }
    }
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self {
            mode: PerturbMode::Fgsm,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

pub fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(0.0..=MAX_EPSILON).contains(&epsilon) {
        return Err(Error::Contract(format!(
            "epsilon must lie in [0, {MAX_EPSILON}], got {epsilon}"
        )));
    }
    Ok(())
}

fn sign<T: Scalar>(g: T) -> T {
    if g > T::zero() {
        T::one()
    } else if g < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn clip_unit<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// `clip(x + ε·sign(∇ₓ CE(C(x), labels)), 0, 1)` with `sign(0) = 0`.
pub fn fgsm_perturb<T: Scalar>(
    images: &Tensor<T>,
    labels: &[usize],
    classifier: &Network<T>,
    epsilon: f64,
) -> Result<Tensor<T>> {
    check_epsilon(epsilon)?;
    if let Some(k) = classifier.class_count() {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Contract(format!(
                "label {bad} out of range for a {k}-class classifier"
            )));
        }
    } else {
        return Err(Error::Contract("fgsm needs a classifier network".into()));
    }
    if epsilon == 0.0 {
        return Ok(images.clone());
    }
    if labels.len() != images.shape()[0] {
        return Err(Error::Contract(format!(
            "{} labels for {} images",
            labels.len(),
            images.shape()[0]
        )));
    }
    let eps = T::of(epsilon);
    let mut data = Vec::with_capacity(images.len());
    for start in (0..labels.len()).step_by(FGSM_CHUNK) {
        let idx: Vec<usize> = (start..(start + FGSM_CHUNK).min(labels.len())).collect();
        let mut g = Graph::new();
        let x = g.leaf_owned(images.select(&idx), true);
        let fwd = classifier.forward(&mut g, x, ParamMode::Frozen)?;
        let loss = g.softmax_cross_entropy(fwd.logits, &labels[idx[0]..=idx[idx.len() - 1]])?;
        g.backward(loss)?;
        let grad = g.grad(x).expect("input requires grad");
        data.extend(
            g.value(x)
                .data()
                .iter()
                .zip(grad)
                .map(|(&v, &d)| clip_unit(v + eps * sign(d))),
        );
    }
    Tensor::new(images.shape(), data)
}

/// `clip(x + u, 0, 1)` with `u` uniform on `[−ε, ε]` per pixel.
pub fn random_perturb<T: Scalar>(images: &Tensor<T>, epsilon: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    check_epsilon(epsilon)?;
    if epsilon == 0.0 {
        return Ok(images.clone());
    }
    let data = images
        .data()
        .iter()
        .map(|&v| clip_unit(v + T::of(rng.random_range(-epsilon..=epsilon))))
        .collect();
    Tensor::new(images.shape(), data)
}
