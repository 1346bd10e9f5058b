//! The end-to-end augmentation pipeline: train candidate classifiers, keep
//! the most accurate, train one GAN per class, generate and perturb samples,
//! keep those the classifier confidently assigns to their source class, merge
//! them with the real data and train a fresh external classifier.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adversarial::{PerturbMode, PerturbSpec};
use crate::config::{ExperimentConfig, NoiseOrder};
use crate::data::{LabeledDataset, SIDE};
use crate::error::{Error, Result};
use crate::gan::{generate, train_gan_per_class, GanPair, GanTrainReport};
use crate::nn::{
    evaluate_accuracy, external_classifier_loss_graph, Network, NetworkSpec, Optimizer, ParamMode,
};
use crate::report::MetricRecord;
use crate::rng::{derive_seed, name_tag, rng_from_seed, substream};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

/// One generated image together with its gate decision.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSample<T> {
    /// `1×28×28`.
    pub image: Tensor<T>,
    /// Class of the generator that produced the image.
    pub label: usize,
    /// Classifier softmax probability at `label`.
    pub confidence: f64,
    pub epsilon_used: f64,
    pub perturb_mode: PerturbMode,
    pub accepted: bool,
    /// Position of this attempt within its class.
    pub attempt: usize,
}

/// Whether a merged sample is real or generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Augmented,
}

/// Hyper-parameters for classifier training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedCandidate<T> {
    pub name: String,
    pub network: Network<T>,
    pub history: Vec<ClassifierEpoch>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAugmentation {
    pub class: usize,
    pub target: usize,
    pub attempts: usize,
    pub accepted: usize,
}

/// Output of [`generate_augmented_set`].
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationResult<T> {
    /// Accepted samples in class order, as they enter the merged dataset.
    pub accepted: Vec<AugmentedSample<T>>,
    /// Every attempt with the image that was actually gated.
    pub log: Vec<AugmentedSample<T>>,
    pub per_class: Vec<ClassAugmentation>,
    pub warnings: Vec<String>,
}

impl<T> AugmentationResult<T> {
    pub fn acceptance_rate(&self) -> f64 {
        if self.log.is_empty() {
            0.0
        } else {
            self.accepted.len() as f64 / self.log.len() as f64
        }
    }
}

pub fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::Contract(format!("threshold must lie in (0,1), got {threshold}")))
    }
}

fn classifier_classes<T: Scalar>(classifier: &Network<T>) -> Result<usize> {
    classifier
        .class_count()
        .ok_or_else(|| Error::Contract(format!("network `{}` is not a classifier", classifier.name())))
}

fn one_image_shape<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>> {
    if image.len() != SIDE * SIDE {
        return Err(Error::Dimension(format!("gate expects one 28×28 image, got {:?}", image.shape())));
    }
    image.reshape(&[1, SIDE, SIDE])
}

/// Gates one image: confidence is the softmax probability at `source_class`
/// and the sample is accepted iff `confidence ≥ threshold`.
pub fn confidence_gate<T: Scalar>(
    image: &Tensor<T>,
    source_class: usize,
    classifier: &Network<T>,
    threshold: f64,
) -> Result<AugmentedSample<T>> {
    let mut batch = gate_batch(&one_image_shape(image)?.reshape(&[1, 1, SIDE, SIDE])?, source_class, classifier, threshold)?;
    Ok(batch.remove(0))
}

/// Gates every image of an `N×1×28×28` batch against `source_class`.
pub fn gate_batch<T: Scalar>(
    images: &Tensor<T>,
    source_class: usize,
    classifier: &Network<T>,
    threshold: f64,
) -> Result<Vec<AugmentedSample<T>>> {
    check_threshold(threshold)?;
    let k = classifier_classes(classifier)?;
    if source_class >= k {
        return Err(Error::Contract(format!(
            "source class {source_class} out of range for a {k}-class classifier"
        )));
    }
    let probs = classifier.predict(images)?;
    (0..images.shape()[0])
        .map(|i| {
            let confidence = probs.item(i)[source_class].as_f64();
            Ok(AugmentedSample {
                image: Tensor::new(&[1, SIDE, SIDE], images.item(i).to_vec())?,
                label: source_class,
                confidence,
                epsilon_used: 0.0,
                perturb_mode: PerturbMode::default(),
                accepted: confidence >= threshold,
                attempt: i,
            })
        })
        .collect()
}

/// Index of the highest accuracy; the earliest index wins ties.
pub fn select_best(accuracies: &[f64]) -> Result<usize> {
    if accuracies.is_empty() {
        return Err(Error::Contract("select_best needs at least one candidate".into()));
    }
    let mut best = 0;
    for (i, &a) in accuracies.iter().enumerate() {
        if a > accuracies[best] {
            best = i;
        }
    }
    Ok(best)
}

fn images_of<T: Scalar>(samples: &[&AugmentedSample<T>]) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(samples.len() * SIDE * SIDE);
    for s in samples {
        data.extend_from_slice(s.image.data());
    }
    Tensor::new(&[samples.len(), 1, SIDE, SIDE], data)
}

/// Per class: generate, perturb and gate (in the order given by
/// `noise_order`) until `targets[class]` samples are accepted or
/// `max_attempts_factor × target` attempts are spent. A class that accepts
/// nothing produces a warning, not an error.
#[allow(clippy::too_many_arguments)]
pub fn generate_augmented_set<T: Scalar>(
    gans: &BTreeMap<usize, GanPair<T>>,
    classifier: &Network<T>,
    targets: &BTreeMap<usize, usize>,
    perturb: &PerturbSpec,
    threshold: f64,
    max_attempts_factor: usize,
    noise_order: NoiseOrder,
    seed: u64,
) -> Result<AugmentationResult<T>> {
    check_threshold(threshold)?;
    if max_attempts_factor == 0 {
        return Err(Error::Contract("max_attempts_factor must be ≥ 1".into()));
    }
    let k = classifier_classes(classifier)?;
    let mut out = AugmentationResult {
        accepted: Vec::new(),
        log: Vec::new(),
        per_class: Vec::new(),
        warnings: Vec::new(),
    };
    for (&class, &target) in targets {
        if target == 0 {
            return Err(Error::Contract(format!("class {class}: augmentation target must be ≥ 1")));
        }
        if class >= k {
            return Err(Error::Contract(format!("class {class} out of range for a {k}-class classifier")));
        }
        let pair = gans
            .get(&class)
            .ok_or_else(|| Error::Contract(format!("no generator for class {class}")))?;
        if pair.class_id != class {
            return Err(Error::Contract(format!(
                "generator for class {} registered under class {class}",
                pair.class_id
            )));
        }
        let max_attempts = target * max_attempts_factor;
        let mut latent_rng = substream(seed, &[name_tag("augment-latent"), class as u64]);
        let mut noise_rng = substream(seed, &[name_tag("augment-noise"), class as u64]);
        let mut accepted: Vec<AugmentedSample<T>> = Vec::new();
        let mut attempts = 0;
        while accepted.len() < target && attempts < max_attempts {
            let n = (target - accepted.len()).min(max_attempts - attempts);
            let clean = generate(pair, n, &mut latent_rng)?;
            let labels = vec![class; n];
            let (gated, eps, mode) = match noise_order {
                NoiseOrder::PerturbThenGate => (
                    perturb.apply(&clean, &labels, classifier, &mut noise_rng)?,
                    perturb.epsilon,
                    perturb.mode,
                ),
                _ => (clean, 0.0, PerturbMode::default()),
            };
            for mut s in gate_batch(&gated, class, classifier, threshold)? {
                s.attempt += attempts;
                s.epsilon_used = eps;
                s.perturb_mode = mode;
                if s.accepted {
                    accepted.push(s.clone());
                }
                out.log.push(s);
            }
            attempts += n;
        }
        if noise_order == NoiseOrder::GateThenPerturb && !accepted.is_empty() {
            let refs: Vec<&AugmentedSample<T>> = accepted.iter().collect();
            let noisy = perturb.apply(&images_of(&refs)?, &vec![class; accepted.len()], classifier, &mut noise_rng)?;
            for (i, s) in accepted.iter_mut().enumerate() {
                s.image = Tensor::new(&[1, SIDE, SIDE], noisy.item(i).to_vec())?;
                s.epsilon_used = perturb.epsilon;
                s.perturb_mode = perturb.mode;
            }
        }
        if accepted.is_empty() {
            out.warnings.push(format!(
                "class {class}: no sample passed the gate in {attempts} attempts"
            ));
        }
        out.per_class.push(ClassAugmentation {
            class,
            target,
            attempts,
            accepted: accepted.len(),
        });
        out.accepted.extend(accepted);
    }
    Ok(out)
}

/// Re-evaluates every logged attempt and counts decisions that differ from
/// the recorded ones.
pub fn audit_attempt_log<T: Scalar>(
    log: &[AugmentedSample<T>],
    classifier: &Network<T>,
    threshold: f64,
) -> Result<usize> {
    let mut mismatches = 0;
    for chunk in log.chunks(256) {
        let refs: Vec<&AugmentedSample<T>> = chunk.iter().collect();
        let probs = classifier.predict(&images_of(&refs)?)?;
        for (i, s) in chunk.iter().enumerate() {
            let confidence = probs.item(i)[s.label].as_f64();
            let decision = confidence >= threshold;
            if decision != s.accepted || (s.confidence >= threshold) != s.accepted {
                mismatches += 1;
            }
        }
    }
    Ok(mismatches)
}

/// Real samples first, then the accepted augmented ones. The returned
/// provenance vector is parallel to the merged samples.
pub fn merge_datasets<T: Scalar>(
    real: &LabeledDataset<T>,
    augmented: &[AugmentedSample<T>],
) -> Result<(LabeledDataset<T>, Vec<Provenance>)> {
    let mut provenance = vec![Provenance::Real; real.len()];
    if augmented.is_empty() {
        return Ok((real.clone(), provenance));
    }
    let refs: Vec<&AugmentedSample<T>> = augmented.iter().collect();
    let labels = augmented.iter().map(|s| s.label).collect();
    let extra = LabeledDataset::new(images_of(&refs)?, labels, real.class_count())
        .map_err(|e| Error::Contract(format!("augmented samples do not fit the real dataset: {e}")))?;
    let extra = match real.class_names() {
        Some(names) => extra.with_class_names(names.to_vec())?,
        None => extra,
    };
    provenance.extend(std::iter::repeat_n(Provenance::Augmented, augmented.len()));
    Ok((real.concat(&extra)?, provenance))
}

/// Perturbs every image of a dataset against its own label.
pub fn perturb_dataset<T: Scalar>(
    data: &LabeledDataset<T>,
    perturb: &PerturbSpec,
    classifier: &Network<T>,
    seed: u64,
) -> Result<LabeledDataset<T>> {
    let mut rng = substream(seed, &[name_tag("perturb-merged")]);
    let images = perturb.apply(data.images(), data.labels(), classifier, &mut rng)?;
    let out = LabeledDataset::new(images, data.labels().to_vec(), data.class_count())?;
    Ok(match data.class_names() {
        Some(n) => out.with_class_names(n.to_vec())?,
        None => out,
    })
}

/// One update on a mini-batch split into its real and augmented parts; the
/// loss is the sum of the two parts' mean cross entropies.
fn external_step<T: Scalar>(
    net: &mut Network<T>,
    opt: &mut Optimizer<T>,
    data: &LabeledDataset<T>,
    real: &[usize],
    augmented: &[usize],
) -> Result<f64> {
    let mut g = Graph::new();
    let mut params = Vec::new();
    let mut part = |g: &mut Graph<T>, idx: &[usize]| -> Result<Option<(crate::NodeId, Vec<usize>)>> {
        if idx.is_empty() {
            return Ok(None);
        }
        let x = g.input(data.images().select(idx));
        let fwd = net.forward(g, x, ParamMode::Train)?;
        params.push(fwd.params);
        Ok(Some((fwd.logits, idx.iter().map(|&i| data.labels()[i]).collect())))
    };
    let r = part(&mut g, real)?;
    let a = part(&mut g, augmented)?;
    let loss = external_classifier_loss_graph(
        &mut g,
        r.as_ref().map(|(l, y)| (*l, y.as_slice())),
        a.as_ref().map(|(l, y)| (*l, y.as_slice())),
    )?;
    g.backward(loss)?;
    for p in &params {
        net.accumulate_grads(&g, p)?;
    }
    opt.step(net)?;
    Ok(g.scalar(loss).as_f64())
}

/// Trains a freshly initialized network of `spec` on `merged`. Each shuffled
/// mini-batch is split by provenance into a real and an augmented
/// sub-batch. With no augmented samples this is plain cross-entropy
/// training. Initialization and shuffling draw from `seed`.
pub fn train_external<T: Scalar>(
    spec: &NetworkSpec,
    merged: &LabeledDataset<T>,
    provenance: &[Provenance],
    test: &LabeledDataset<T>,
    opts: &ClassifierOptions,
    seed: u64,
) -> Result<(Network<T>, Vec<ClassifierEpoch>)> {
    if provenance.len() != merged.len() {
        return Err(Error::Contract(format!(
            "provenance has {} entries for {} samples",
            provenance.len(),
            merged.len()
        )));
    }
    if !provenance.contains(&Provenance::Real) {
        return Err(Error::Input("external training needs at least one real sample".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Contract("batch size must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut net = Network::build(spec, &mut rng)?;
    if net.class_count() != Some(merged.class_count()) {
        return Err(Error::Contract(format!(
            "network `{}` does not predict the dataset's {} classes",
            spec.name,
            merged.class_count()
        )));
    }
    let mut opt = Optimizer::adam(opts.learning_rate);
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        let mut order: Vec<usize> = (0..merged.len()).collect();
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0);
        for chunk in order.chunks(opts.batch_size) {
            let (real, aug): (Vec<usize>, Vec<usize>) =
                chunk.iter().partition(|&&i| provenance[i] == Provenance::Real);
            total += external_step(&mut net, &mut opt, merged, &real, &aug)?;
            batches += 1;
        }
        history.push(ClassifierEpoch {
            epoch,
            loss: total / batches as f64,
            train_accuracy: evaluate_accuracy(&net, merged)?,
            test_accuracy: evaluate_accuracy(&net, test)?,
        });
    }
    Ok((net, history))
}

/// Trains every candidate on the same data. Each candidate's stream is
/// derived from `seed` and its name, so identical specs train identically.
pub fn train_candidates<T: Scalar>(
    train: &LabeledDataset<T>,
    test: &LabeledDataset<T>,
    specs: &[NetworkSpec],
    opts: &ClassifierOptions,
    seed: u64,
) -> Result<Vec<TrainedCandidate<T>>> {
    if specs.is_empty() {
        return Err(Error::Contract("at least one candidate spec is required".into()));
    }
    let provenance = vec![Provenance::Real; train.len()];
    specs
        .iter()
        .map(|spec| {
            let s = derive_seed(seed, &[name_tag("candidate"), name_tag(&spec.name)]);
            let (network, history) = train_external(spec, train, &provenance, test, opts, s)
                .map_err(|e| e.in_stage(format!("candidate `{}`", spec.name)))?;
            let (train_accuracy, test_accuracy) = match history.last() {
                Some(h) => (h.train_accuracy, h.test_accuracy),
                None => (
                    evaluate_accuracy(&network, train).map_err(|e| e.in_stage(format!("candidate `{}`", spec.name)))?,
                    evaluate_accuracy(&network, test).map_err(|e| e.in_stage(format!("candidate `{}`", spec.name)))?,
                ),
            };
            Ok(TrainedCandidate {
                name: spec.name.clone(),
                network,
                history,
                train_accuracy,
                test_accuracy,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub train_class_counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub name: String,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub epochs: Vec<ClassifierEpoch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanSummary {
    pub class: usize,
    pub epochs: usize,
    pub first_probe_d_fake: Option<f64>,
    pub final_probe_d_fake: Option<f64>,
    pub final_d_loss: Option<f64>,
    pub final_g_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSummary {
    pub per_class: Vec<ClassAugmentation>,
    pub attempts: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub architecture: String,
    pub train_size: usize,
    pub augmented_size: usize,
    pub epochs: Vec<ClassifierEpoch>,
    pub final_test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
}

/// Structured record of one pipeline run. Contains no timings, so equal
/// inputs give byte-identical serializations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub status: RunStatus,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub config: ExperimentConfig,
    pub dataset: Option<DatasetSummary>,
    pub candidates: Vec<CandidateSummary>,
    pub selected: Option<String>,
    pub gans: Vec<GanSummary>,
    pub augmentation: Option<AugmentationSummary>,
    pub external: Option<ClassifierSummary>,
    pub baseline: Option<ClassifierSummary>,
}

impl PipelineReport {
    /// The echoed config omits the output directory, so a report depends
    /// only on the experiment.
    fn new(config: &ExperimentConfig) -> Self {
        Self {
            status: RunStatus::Complete,
            failed_stage: None,
            error: None,
            config: ExperimentConfig {
                out: None,
                ..config.clone()
            },
            dataset: None,
            candidates: Vec::new(),
            selected: None,
            gans: Vec::new(),
            augmentation: None,
            external: None,
            baseline: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| Error::Format(format!("cannot serialize report: {e}")))
    }
}

/// Everything a run produced, for the caller to persist.
#[derive(Debug)]
pub struct PipelineRun<T> {
    pub report: PipelineReport,
    pub metrics: Vec<MetricRecord>,
    pub gans: BTreeMap<usize, GanPair<T>>,
    pub augmentation: Option<AugmentationResult<T>>,
    pub selected: Option<Network<T>>,
    pub external: Option<Network<T>>,
    pub baseline: Option<Network<T>>,
}

/// A stage failure together with everything completed before it.
#[derive(Debug)]
pub struct PipelineAbort<T> {
    pub run: PipelineRun<T>,
    pub error: Error,
}

fn classifier_metrics(stage: &str, history: &[ClassifierEpoch], out: &mut Vec<MetricRecord>) {
    for h in history {
        out.push(MetricRecord::new(stage, h.epoch, "train", "loss", h.loss));
        out.push(MetricRecord::new(stage, h.epoch, "train", "accuracy", h.train_accuracy));
        out.push(MetricRecord::new(stage, h.epoch, "test", "accuracy", h.test_accuracy));
    }
}

fn gan_metrics(report: &GanTrainReport, out: &mut Vec<MetricRecord>) {
    let stage = format!("gan_c{:02}", report.class_id);
    for r in &report.records {
        out.push(MetricRecord::new(&stage, r.epoch, "train", "d_loss", r.d_loss));
        out.push(MetricRecord::new(&stage, r.epoch, "train", "g_loss", r.g_loss));
        out.push(MetricRecord::new(&stage, r.epoch, "probe", "d_fake", r.probe_d_fake));
    }
}

fn summary(
    architecture: &str,
    data: &LabeledDataset<impl Scalar>,
    provenance: &[Provenance],
    epochs: Vec<ClassifierEpoch>,
) -> ClassifierSummary {
    let augmented_size = provenance.iter().filter(|&&p| p == Provenance::Augmented).count();
    ClassifierSummary {
        architecture: architecture.into(),
        train_size: data.len(),
        augmented_size,
        final_test_accuracy: epochs.last().map(|e| e.test_accuracy),
        epochs,
    }
}

/// Per-class augmentation targets from the config and real class counts.
/// Classes whose target rounds to zero are omitted.
pub fn augmentation_targets(config: &ExperimentConfig, class_counts: &[usize]) -> BTreeMap<usize, usize> {
    class_counts
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let t = config
                .augment_per_class
                .unwrap_or_else(|| (n as f64 * config.augment_fraction + 0.5).floor() as usize);
            (c, t)
        })
        .filter(|&(_, t)| t > 0)
        .collect()
}

/// Loads the configured dataset and runs the pipeline on it.
pub fn run_ada_gan<T: Scalar>(config: &ExperimentConfig) -> std::result::Result<PipelineRun<T>, Box<PipelineAbort<T>>> {
    let abort = |error: Error| {
        let mut report = PipelineReport::new(config);
        report.status = RunStatus::Failed;
        report.failed_stage = Some("data".into());
        report.error = Some(error.to_string());
        Box::new(PipelineAbort {
            run: PipelineRun {
                report,
                metrics: Vec::new(),
                gans: BTreeMap::new(),
                augmentation: None,
                selected: None,
                external: None,
                baseline: None,
            },
            error: error.in_stage("data"),
        })
    };
    let (train, test) = config
        .validate()
        .and_then(|_| config.dataset.load::<T>(config.seed))
        .map_err(abort)?;
    run_ada_gan_on(config, &train, &test)
}

/// Runs every stage in order on already loaded data. Deterministic in
/// `config.seed`.
pub fn run_ada_gan_on<T: Scalar>(
    config: &ExperimentConfig,
    train: &LabeledDataset<T>,
    test: &LabeledDataset<T>,
) -> std::result::Result<PipelineRun<T>, Box<PipelineAbort<T>>> {
    let mut run = PipelineRun {
        report: PipelineReport::new(config),
        metrics: Vec::new(),
        gans: BTreeMap::new(),
        augmentation: None,
        selected: None,
        external: None,
        baseline: None,
    };
    match run_stages(config, train, test, &mut run) {
        Ok(()) => Ok(run),
        Err((stage, error)) => {
            run.report.status = RunStatus::Failed;
            run.report.failed_stage = Some(stage.into());
            run.report.error = Some(error.to_string());
            Err(Box::new(PipelineAbort {
                run,
                error: error.in_stage(stage),
            }))
        }
    }
}

fn run_stages<T: Scalar>(
    config: &ExperimentConfig,
    train: &LabeledDataset<T>,
    test: &LabeledDataset<T>,
    run: &mut PipelineRun<T>,
) -> std::result::Result<(), (&'static str, Error)> {
    let seed = config.seed;
    let stage = |name: &'static str| move |e: Error| (name, e);
    config.validate().map_err(stage("config"))?;
    if train.class_count() != test.class_count() {
        return Err((
            "data",
            Error::Input(format!(
                "train has {} classes but test has {}",
                train.class_count(),
                test.class_count()
            )),
        ));
    }
    let classes = train.class_count();
    run.report.dataset = Some(DatasetSummary {
        classes,
        train_size: train.len(),
        test_size: test.len(),
        train_class_counts: train.class_counts(),
    });
    let opts = ClassifierOptions {
        epochs: config.candidates.epochs,
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
    };

    let specs = config.candidate_specs(classes).map_err(stage("candidates"))?;
    let candidates = train_candidates(train, test, &specs, &opts, seed).map_err(stage("candidates"))?;
    for c in &candidates {
        classifier_metrics(&format!("candidate_{}", c.name), &c.history, &mut run.metrics);
        run.report.candidates.push(CandidateSummary {
            name: c.name.clone(),
            train_accuracy: c.train_accuracy,
            test_accuracy: c.test_accuracy,
            epochs: c.history.clone(),
        });
    }
    let accuracies: Vec<f64> = candidates.iter().map(|c| c.test_accuracy).collect();
    let best = select_best(&accuracies).map_err(stage("select"))?;
    let voted = candidates.into_iter().nth(best).expect("index from select_best").network;
    run.report.selected = Some(voted.name().to_string());

    let targets = augmentation_targets(config, &train.class_counts());
    let gan_seed = derive_seed(seed, &[name_tag("gan")]);
    for &class in targets.keys() {
        let (pair, report) = train_gan_per_class(train, class, &config.gan, gan_seed).map_err(stage("gan"))?;
        gan_metrics(&report, &mut run.metrics);
        let (first, last) = (report.records.first(), report.records.last());
        run.report.gans.push(GanSummary {
            class,
            epochs: report.records.len(),
            first_probe_d_fake: first.map(|r| r.probe_d_fake),
            final_probe_d_fake: last.map(|r| r.probe_d_fake),
            final_d_loss: last.map(|r| r.d_loss),
            final_g_loss: last.map(|r| r.g_loss),
        });
        run.gans.insert(class, pair);
    }

    let augmented = if targets.is_empty() {
        None
    } else {
        let result = generate_augmented_set(
            &run.gans,
            &voted,
            &targets,
            &config.perturb,
            config.threshold,
            config.max_attempts_factor,
            config.noise_order,
            derive_seed(seed, &[name_tag("augment")]),
        )
        .map_err(stage("augment"))?;
        for c in &result.per_class {
            let s = format!("augment_c{:02}", c.class);
            run.metrics.push(MetricRecord::new(&s, 0, "generated", "target", c.target as f64));
            run.metrics.push(MetricRecord::new(&s, 0, "generated", "attempts", c.attempts as f64));
            run.metrics.push(MetricRecord::new(&s, 0, "generated", "accepted", c.accepted as f64));
        }
        run.report.augmentation = Some(AugmentationSummary {
            per_class: result.per_class.clone(),
            attempts: result.log.len(),
            accepted: result.accepted.len(),
            acceptance_rate: result.acceptance_rate(),
            warnings: result.warnings.clone(),
        });
        Some(result)
    };

    let accepted: &[AugmentedSample<T>] = augmented.as_ref().map_or(&[], |a| &a.accepted);
    let (mut merged, provenance) = merge_datasets(train, accepted).map_err(stage("merge"))?;
    if config.noise_order == NoiseOrder::PerturbMerged && augmented.is_some() {
        merged = perturb_dataset(&merged, &config.perturb, &voted, derive_seed(seed, &[name_tag("merge")]))
            .map_err(stage("merge"))?;
    }
    run.augmentation = augmented;

    let ext_opts = ClassifierOptions {
        epochs: config.external.epochs,
        ..opts
    };
    let ext_seed = derive_seed(seed, &[name_tag("external")]);
    let (external, history) =
        train_external(voted.spec(), &merged, &provenance, test, &ext_opts, ext_seed).map_err(stage("external"))?;
    classifier_metrics("external", &history, &mut run.metrics);
    run.report.external = Some(summary(voted.name(), &merged, &provenance, history));
    run.external = Some(external);

    if config.compare_baseline {
        let real = vec![Provenance::Real; train.len()];
        let (baseline, history) =
            train_external(voted.spec(), train, &real, test, &ext_opts, ext_seed).map_err(stage("baseline"))?;
        classifier_metrics("baseline", &history, &mut run.metrics);
        run.report.baseline = Some(summary(voted.name(), train, &real, history));
        run.baseline = Some(baseline);
    }
    run.selected = Some(voted);
    Ok(())
}

const NETWORK_MAGIC: &[u8; 8] = b"ADAGANNW";

/// Writes a network as magic, `u32` spec length, spec JSON, parameters.
pub fn save_network<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = serde_json::to_vec(net.spec()).map_err(|e| Error::Format(e.to_string()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(NETWORK_MAGIC)
        .and_then(|_| out.write_all(&(spec.len() as u32).to_le_bytes()))
        .and_then(|_| out.write_all(&spec))
        .and_then(|_| net.write_params(&mut out))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_network<T: Scalar>(path: impl AsRef<Path>) -> Result<Network<T>> {
    let path = path.as_ref();
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let mut head = [0u8; 12];
    input.read_exact(&mut head).map_err(|_| bad("truncated network file"))?;
    if &head[..8] != NETWORK_MAGIC {
        return Err(bad("not a network file (bad magic)"));
    }
    let len = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
    let mut spec = vec![0u8; len];
    input.read_exact(&mut spec).map_err(|_| bad("truncated network spec"))?;
    let spec: NetworkSpec = serde_json::from_slice(&spec).map_err(|e| bad(&e.to_string()))?;
    let mut net = Network::build(&spec, &mut rng_from_seed(0))?;
    net.read_params(&mut input).map_err(|e| bad(&e.to_string()))?;
    Ok(net)
}
