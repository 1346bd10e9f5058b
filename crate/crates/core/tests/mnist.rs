//! Tests on the canonical MNIST files in `data/mnist` at the workspace root
//! (`scripts/fetch_mnist.sh`), or in `ADA_GAN_MNIST_DIR`.

use std::path::PathBuf;

use adagan::config::{DatasetConfig, ExperimentConfig, MnistSource};
use adagan::data::{load_mnist, MnistSplit};
use adagan::nn::{NetworkSpec, CLASSIFIER_PRESETS};
use adagan::pipeline::{run_ada_gan, train_candidates, ClassifierOptions};
use adagan::Dataset32;

fn dir() -> PathBuf {
    std::env::var_os("ADA_GAN_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn load(split: MnistSplit, n: usize) -> Dataset32 {
    load_mnist(dir(), split, Some(n))
        .unwrap_or_else(|e| panic!("{e}; fetch the files with scripts/fetch_mnist.sh"))
}

#[test]
fn first_training_label_is_five() {
    let (_, labels) = MnistSplit::Train.paths(&dir());
    let raw = std::fs::read(&labels).expect("MNIST label file");
    assert_eq!(raw[8], 5);
    let data = load(MnistSplit::Train, 100);
    assert_eq!(data.labels()[0], 5);
    assert_eq!(data.images().shape(), &[100, 1, 28, 28]);
    let (lo, hi) = data.images().min_max();
    assert!(lo >= 0.0 && hi <= 1.0 && hi > 0.99);
}

#[test]
fn every_preset_learns_a_small_subset() {
    let train = load(MnistSplit::Train, 2_000);
    let test = load(MnistSplit::Test, 1_000);
    let specs: Vec<NetworkSpec> = CLASSIFIER_PRESETS.iter().map(|p| NetworkSpec::preset(p, 10).unwrap()).collect();
    let opts = ClassifierOptions {
        epochs: 5,
        learning_rate: 1e-3,
        batch_size: 32,
    };
    let trained = train_candidates(&train, &test, &specs, &opts, 42).unwrap();
    for c in &trained {
        println!("{:<12} {:.4}", c.name, c.test_accuracy);
    }
    for c in &trained {
        assert!(c.test_accuracy > 0.8, "{} reached only {:.4}", c.name, c.test_accuracy);
    }
}

#[test]
fn smoke_pipeline_reaches_ninety_percent() {
    let mut cfg = ExperimentConfig {
        dataset: DatasetConfig::Mnist(MnistSource {
            dir: dir(),
            train_limit: Some(2_000),
            test_limit: Some(1_000),
        }),
        augment_per_class: Some(50),
        ..ExperimentConfig::default()
    };
    cfg.candidates.epochs = 5;
    cfg.gan.epochs = 50;
    cfg.external.epochs = 5;
    let run = run_ada_gan::<f32>(&cfg).map_err(|a| a.error).unwrap();
    let ext = run.report.external.as_ref().unwrap();
    let acc = ext.final_test_accuracy.unwrap();
    let aug = run.report.augmentation.as_ref().unwrap();
    println!(
        "selected {:?}, accepted {} of {} attempts, external accuracy {acc:.4}",
        run.report.selected, aug.accepted, aug.attempts
    );
    assert_eq!(ext.augmented_size, aug.accepted);
    assert!(acc >= 0.90, "external accuracy {acc:.4}");
}
