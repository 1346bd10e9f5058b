use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

use super::LabeledDataset;

/// Stratified split. Each class contributes `round(n·test_fraction)` samples
/// to the test side, clamped so both sides keep at least one. Samples keep
/// their original relative order on both sides.
pub fn train_test_split<T: Scalar>(
    data: &LabeledDataset<T>,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset<T>, LabeledDataset<T>)> {
    let (train, test) = split_indices(data.labels(), data.class_count(), test_fraction, seed)?;
    Ok((data.subset(&train), data.subset(&test)))
}

/// Index form of [`train_test_split`]: ascending `(train, test)` indices.
pub fn split_indices(
    labels: &[usize],
    class_count: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Contract(format!(
            "test fraction must lie in (0,1), got {test_fraction}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..class_count {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let n = idx.len();
        if n == 0 {
            continue;
        }
        if n < 2 {
            return Err(Error::Input(format!(
                "class {class} has {n} sample; a split needs at least 2"
            )));
        }
        idx.shuffle(&mut rng);
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn dataset(per_class: usize, k: usize) -> LabeledDataset<f32> {
        let n = per_class * k;
        let pixels = (0..n * 784).map(|i| ((i / 784) % 256) as f32 / 255.0).collect();
        let labels = (0..n).map(|i| i % k).collect();
        LabeledDataset::new(Tensor::new(&[n, 1, 28, 28], pixels).unwrap(), labels, k).unwrap()
    }

    #[test]
    fn eighty_twenty_per_class() {
        let (train, test) = train_test_split(&dataset(100, 3), 0.2, 1).unwrap();
        assert_eq!(train.class_counts(), vec![80; 3]);
        assert_eq!(test.class_counts(), vec![20; 3]);
    }

    #[test]
    fn same_seed_same_split() {
        let ds = dataset(10, 2);
        let a = train_test_split(&ds, 0.3, 7).unwrap();
        let b = train_test_split(&ds, 0.3, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn singleton_class_is_rejected() {
        let img = Tensor::<f32>::zeros(&[3, 1, 28, 28]);
        let ds = LabeledDataset::new(img, vec![0, 0, 1], 2).unwrap();
        assert!(matches!(train_test_split(&ds, 0.5, 0), Err(Error::Input(_))));
        assert!(train_test_split(&dataset(2, 2), 1.0, 0).is_err());
    }
}
