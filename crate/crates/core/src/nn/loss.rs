//! The three training objectives: discriminator, generator and the two-term
//! external-classifier cross entropy.
//!
//! Probability-space functions take network outputs directly and clamp every
//! probability to `[1e-7, 1 − 1e-7]` before the logarithm. The `*_graph`
//! variants record the same values from pre-head logits on a [`Graph`] for
//! training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId, Tensor};

pub use crate::tensor::PROB_CLAMP;

fn clamp<T: Scalar>(p: T) -> T {
    p.max(T::of(PROB_CLAMP)).min(T::of(1.0 - PROB_CLAMP))
}

fn mean_ln<T: Scalar>(values: impl ExactSizeIterator<Item = T>) -> T {
    let n = T::of(values.len() as f64);
    values.map(|v| v.ln()).sum::<T>() / n
}

/// Generator objective variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLossMode {
    /// Minimize `mean(ln(1 − D(G(z))))`.
    #[serde(alias = "paper_exact")]
    Minimax,
    /// Minimize `−mean(ln D(G(z)))`.
    #[default]
    NonSaturating,
}

/// Mean over the batch of `−ln probs[i, labels[i]]`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let mut g = Graph::new();
    let p = g.input(probs.clone());
    let loss = g.cross_entropy(p, labels)?;
    Ok(g.scalar(loss))
}

/// `−mean(ln D(x)) − mean(ln(1 − D(G(z))))`: the minimization form of the
/// discriminator's objective.
pub fn discriminator_loss<T: Scalar>(d_real: &[T], d_fake: &[T]) -> Result<T> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::Contract("discriminator loss needs non-empty batches".into()));
    }
    let real = mean_ln(d_real.iter().map(|&p| clamp(p)));
    let fake = mean_ln(d_fake.iter().map(|&p| T::one() - clamp(p)));
    Ok(-real - fake)
}

pub fn generator_loss<T: Scalar>(d_fake: &[T], mode: GeneratorLossMode) -> Result<T> {
    if d_fake.is_empty() {
        return Err(Error::Contract("generator loss needs a non-empty batch".into()));
    }
    Ok(match mode {
        GeneratorLossMode::Minimax => mean_ln(d_fake.iter().map(|&p| T::one() - clamp(p))),
        GeneratorLossMode::NonSaturating => -mean_ln(d_fake.iter().map(|&p| clamp(p))),
    })
}

/// `CE(C(d), Y) + CE(C(G(z)), Y_gen)`, unweighted. An absent or empty
/// generated batch contributes zero.
pub fn external_classifier_loss<T: Scalar>(
    c_real: &Tensor<T>,
    y_real: &[usize],
    generated: Option<(&Tensor<T>, &[usize])>,
) -> Result<T> {
    let real = cross_entropy(c_real, y_real)?;
    match generated {
        Some((c_gen, y_gen)) if !y_gen.is_empty() => Ok(real + cross_entropy(c_gen, y_gen)?),
        _ => Ok(real),
    }
}

/// Discriminator loss from logits of real and generated batches.
pub fn discriminator_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    real_logits: NodeId,
    fake_logits: NodeId,
) -> Result<NodeId> {
    let real = g.neg_log_sigmoid(real_logits)?;
    let flipped = g.scale(fake_logits, -T::one())?;
    let fake = g.neg_log_sigmoid(flipped)?;
    g.add(real, fake)
}

/// Generator loss from logits of a generated batch.
pub fn generator_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    fake_logits: NodeId,
    mode: GeneratorLossMode,
) -> Result<NodeId> {
    match mode {
        GeneratorLossMode::NonSaturating => g.neg_log_sigmoid(fake_logits),
        GeneratorLossMode::Minimax => {
            let flipped = g.scale(fake_logits, -T::one())?;
            let nls = g.neg_log_sigmoid(flipped)?;
            g.scale(nls, -T::one())
        }
    }
}

/// Two-term external classifier loss from classifier logits. Either term may
/// be absent (zero); at least one must be present.
pub fn external_classifier_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    real: Option<(NodeId, &[usize])>,
    generated: Option<(NodeId, &[usize])>,
) -> Result<NodeId> {
    let real = real.map(|(l, y)| g.softmax_cross_entropy(l, y)).transpose()?;
    let generated = generated.map(|(l, y)| g.softmax_cross_entropy(l, y)).transpose()?;
    match (real, generated) {
        (Some(a), Some(b)) => g.add(a, b),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => Err(Error::Contract("external loss on an empty batch".into())),
    }
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;

    fn probs(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn cross_entropy_examples() {
        let one_hot = probs(&[&[0.0, 1.0, 0.0]]);
        assert!(cross_entropy(&one_hot, &[1]).unwrap().abs() < 1e-6);
        let uniform = Tensor::filled(&[4, 10], 0.1);
        let ce = cross_entropy(&uniform, &[0, 3, 9, 5]).unwrap();
        assert!((ce - 10f64.ln()).abs() < 1e-9);
        let ce = cross_entropy(&probs(&[&[0.7, 0.2, 0.1]]), &[1]).unwrap();
        assert!((ce - 1.609438).abs() < 1e-6);
        assert!(matches!(cross_entropy(&one_hot, &[3]), Err(Error::Contract(_))));
    }

    #[test]
    fn discriminator_loss_examples() {
        assert!(discriminator_loss(&[1.0f64], &[0.0]).unwrap().abs() < 1e-6);
        let l = discriminator_loss(&[0.5f64], &[0.5]).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-9);
        let l = discriminator_loss(&[0.9f64, 0.8], &[0.1, 0.3]).unwrap();
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0 - (0.9f64.ln() + 0.7f64.ln()) / 2.0;
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.395270).abs() < 1e-6);
    }

    #[test]
    fn generator_loss_examples() {
        let exact = generator_loss(&[0.5f64], GeneratorLossMode::Minimax).unwrap();
        assert!((exact + 0.693147).abs() < 1e-6);
        let ns = generator_loss(&[0.5f64], GeneratorLossMode::NonSaturating).unwrap();
        assert!((ns - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn losses_finite_at_probability_extremes() {
        for d in [0.0f64, 1.0] {
            assert!(discriminator_loss(&[d], &[d]).unwrap().is_finite());
            assert!(generator_loss(&[d], GeneratorLossMode::Minimax).unwrap().is_finite());
            assert!(generator_loss(&[d], GeneratorLossMode::NonSaturating).unwrap().is_finite());
        }
        let hard = probs(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(cross_entropy(&hard, &[0, 1]).unwrap().is_finite());
    }

    #[test]
    fn external_loss_examples() {
        let perfect = probs(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let l = external_classifier_loss(&perfect, &[0, 1], Some((&perfect, &[0, 1]))).unwrap();
        assert!(l.abs() < 1e-6);

        let real = probs(&[&[0.7, 0.2, 0.1]]);
        let plain = cross_entropy(&real, &[1]).unwrap();
        let empty: &[usize] = &[];
        assert_eq!(external_classifier_loss(&real, &[1], None).unwrap(), plain);
        assert_eq!(external_classifier_loss(&real, &[1], Some((&real, empty))).unwrap(), plain);

        let gen = Tensor::filled(&[1, 10], 0.1);
        let l = external_classifier_loss(&real, &[1], Some((&gen, &[4]))).unwrap();
        assert!((l - (1.609438 + 2.302585)).abs() < 1e-5);
        assert!((l - 3.912023).abs() < 1e-5);
    }

    #[test]
    fn graph_losses_match_probability_forms() {
        let logits_real = [1.3f64, -0.4, 2.2];
        let logits_fake = [-0.7f64, 0.1, -3.0];
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let d_real: Vec<f64> = logits_real.iter().map(|&z| sig(z)).collect();
        let d_fake: Vec<f64> = logits_fake.iter().map(|&z| sig(z)).collect();

        let mut g = Graph::<f64>::new();
        let r = g.input(Tensor::from_f64(&[3, 1], &logits_real).unwrap());
        let f = g.input(Tensor::from_f64(&[3, 1], &logits_fake).unwrap());
        let d = discriminator_loss_graph(&mut g, r, f).unwrap();
        assert!((g.scalar(d) - discriminator_loss(&d_real, &d_fake).unwrap()).abs() < 1e-12);
        for mode in [GeneratorLossMode::Minimax, GeneratorLossMode::NonSaturating] {
            let gl = generator_loss_graph(&mut g, f, mode).unwrap();
            assert!((g.scalar(gl) - generator_loss(&d_fake, mode).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn losses_are_permutation_invariant() {
        let a = [0.2f64, 0.9, 0.55, 0.01];
        let b = [0.7f64, 0.3, 0.05, 0.99];
        let (ra, rb): (Vec<f64>, Vec<f64>) = (a.iter().rev().copied().collect(), b.iter().rev().copied().collect());
        let d1 = discriminator_loss(&a, &b).unwrap();
        let d2 = discriminator_loss(&ra, &rb).unwrap();
        assert!((d1 - d2).abs() < 1e-14);
        for mode in [GeneratorLossMode::Minimax, GeneratorLossMode::NonSaturating] {
            let g1 = generator_loss(&b, mode).unwrap();
            let g2 = generator_loss(&rb, mode).unwrap();
            assert!((g1 - g2).abs() < 1e-14);
        }
    }
}
