//! Experiment configuration, read from TOML.
//!
//! Every table rejects unknown keys. Missing keys take the defaults below.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::{check_epsilon, PerturbSpec};
use crate::data::{
    load_directory_dataset, load_mnist, read_class_map, synth_glyph_dataset, train_test_split,
    GroupTag, LabeledDataset, MnistSplit,
};
use crate::data::idx::{load_idx_images, load_idx_labels};
use crate::error::{Error, Result};
use crate::gan::GanConfig;
use crate::nn::{NetworkSpec, CLASSIFIER_PRESETS, DEFAULT_BATCH_SIZE, DEFAULT_CLASSIFIER_LR};
use crate::scalar::Scalar;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_AUGMENT_FRACTION: f64 = 0.25;
pub const DEFAULT_MAX_ATTEMPTS_FACTOR: usize = 20;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const SEED_ENV: &str = "ADA_GAN_SEED";

/// Where in the augmentation flow the perturbation is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseOrder {
    /// Generate, perturb, then gate the perturbed image.
    #[default]
    PerturbThenGate,
    /// Gate the clean image, then perturb the accepted ones.
    GateThenPerturb,
    /// Gate clean images, merge, then perturb every merged image, real ones included.
    PerturbMerged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistSource {
    /// Directory holding the four uncompressed IDX files under their standard names.
    pub dir: PathBuf,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

impl Default for MnistSource {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data/mnist"),
            train_limit: None,
            test_limit: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdxSource {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Class count; defaults to one more than the largest label seen.
    pub classes: Option<usize>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectorySource {
    pub path: PathBuf,
    /// Optional `name tag` file used with `group` to keep one class group.
    pub class_map: Option<PathBuf>,
    pub group: Option<String>,
    pub test_fraction: f64,
    /// Defaults to the master seed.
    pub split_seed: Option<u64>,
}

impl Default for DirectorySource {
    fn default() -> Self {
        Self {
            path: PathBuf::new(),
            class_map: None,
            group: None,
            test_fraction: DEFAULT_TEST_FRACTION,
            split_seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlyphSource {
    pub classes: usize,
    pub per_class: usize,
    pub complexity: usize,
    pub test_fraction: f64,
    /// Seed for both glyph synthesis and the split; defaults to the master seed.
    pub seed: Option<u64>,
}

impl Default for GlyphSource {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 250,
            complexity: 1,
            test_fraction: DEFAULT_TEST_FRACTION,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Mnist(MnistSource),
    Idx(IdxSource),
    Directory(DirectorySource),
    Glyph(GlyphSource),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Glyph(GlyphSource::default())
    }
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0,1), got {f}")))
    }
}

impl DatasetConfig {
    fn validate(&self) -> Result<()> {
        match self {
            DatasetConfig::Mnist(_) => Ok(()),
            DatasetConfig::Idx(s) => {
                for (name, p) in [
                    ("train_images", &s.train_images),
                    ("train_labels", &s.train_labels),
                    ("test_images", &s.test_images),
                    ("test_labels", &s.test_labels),
                ] {
                    if p.as_os_str().is_empty() {
                        return Err(Error::Config(format!("dataset.{name} is required for source = \"idx\"")));
                    }
                }
                Ok(())
            }
            DatasetConfig::Directory(s) => {
                if s.path.as_os_str().is_empty() {
                    return Err(Error::Config("dataset.path is required for source = \"directory\"".into()));
                }
                if let Some(g) = &s.group {
                    g.parse::<GroupTag>().map_err(|e| Error::Config(format!("dataset.group: {e}")))?;
                    if s.class_map.is_none() {
                        return Err(Error::Config("dataset.group needs dataset.class_map".into()));
                    }
                }
                check_fraction("dataset.test_fraction", s.test_fraction)
            }
            DatasetConfig::Glyph(s) => {
                if s.classes < 2 || s.per_class < 2 || s.complexity == 0 {
                    return Err(Error::Config(format!(
                        "glyph dataset needs classes ≥ 2, per_class ≥ 2, complexity ≥ 1; got {}, {}, {}",
                        s.classes, s.per_class, s.complexity
                    )));
                }
                check_fraction("dataset.test_fraction", s.test_fraction)
            }
        }
    }

    /// Loads `(train, test)`. Relative paths resolve against the working directory.
    pub fn load<T: Scalar>(&self, master_seed: u64) -> Result<(LabeledDataset<T>, LabeledDataset<T>)> {
        match self {
            DatasetConfig::Mnist(s) => Ok((
                load_mnist(&s.dir, MnistSplit::Train, s.train_limit)?,
                load_mnist(&s.dir, MnistSplit::Test, s.test_limit)?,
            )),
            DatasetConfig::Idx(s) => {
                let load = |ip: &Path, lp: &Path, limit: Option<usize>| -> Result<(crate::Tensor<T>, Vec<usize>)> {
                    let images = load_idx_images::<T>(ip)?;
                    let labels = load_idx_labels(lp)?;
                    if labels.len() != images.shape()[0] {
                        return Err(Error::Format(format!(
                            "{} holds {} images but {} holds {} labels",
                            ip.display(),
                            images.shape()[0],
                            lp.display(),
                            labels.len()
                        )));
                    }
                    let n = limit.unwrap_or(usize::MAX).min(labels.len());
                    let idx: Vec<usize> = (0..n).collect();
                    Ok((images.select(&idx), labels[..n].to_vec()))
                };
                let (tri, trl) = load(&s.train_images, &s.train_labels, s.train_limit)?;
                let (tei, tel) = load(&s.test_images, &s.test_labels, s.test_limit)?;
                let k = s
                    .classes
                    .unwrap_or_else(|| trl.iter().chain(&tel).max().map_or(1, |m| m + 1));
                Ok((LabeledDataset::new(tri, trl, k)?, LabeledDataset::new(tei, tel, k)?))
            }
            DatasetConfig::Directory(s) => {
                let (mut data, _) = load_directory_dataset::<T>(&s.path)?;
                if let (Some(map), Some(group)) = (&s.class_map, &s.group) {
                    let tag: GroupTag = group.parse().map_err(|e| Error::Config(format!("dataset.group: {e}")))?;
                    data = data.restrict_to_group(&read_class_map(map)?, tag)?;
                }
                train_test_split(&data, s.test_fraction, s.split_seed.unwrap_or(master_seed))
            }
            DatasetConfig::Glyph(s) => {
                let seed = s.seed.unwrap_or(master_seed);
                let data = synth_glyph_dataset::<T>(s.classes, s.per_class, s.complexity, seed)?;
                train_test_split(&data, s.test_fraction, seed)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateConfig {
    /// Classifier presets trained in this order; earlier entries win accuracy ties.
    pub presets: Vec<String>,
    pub epochs: usize,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self {
            presets: CLASSIFIER_PRESETS.iter().map(|s| s.to_string()).collect(),
            epochs: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExternalConfig {
    pub epochs: usize,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self { epochs: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Classifier mini-batch size.
    pub batch_size: usize,
    /// Classifier learning rate (candidates and external classifier).
    pub learning_rate: f64,
    pub threshold: f64,
    pub noise_order: NoiseOrder,
    /// Per-class augmentation target as a fraction of that class's real training count.
    pub augment_fraction: f64,
    /// Fixed per-class target; overrides `augment_fraction` when set.
    pub augment_per_class: Option<usize>,
    /// Attempt budget per class as a multiple of its target.
    pub max_attempts_factor: usize,
    /// Also train the selected architecture on real data only, with the same seed.
    pub compare_baseline: bool,
    pub dataset: DatasetConfig,
    pub candidates: CandidateConfig,
    pub gan: GanConfig,
    pub perturb: PerturbSpec,
    pub external: ExternalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            out: None,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_CLASSIFIER_LR,
            threshold: DEFAULT_THRESHOLD,
            noise_order: NoiseOrder::default(),
            augment_fraction: DEFAULT_AUGMENT_FRACTION,
            augment_per_class: None,
            max_attempts_factor: DEFAULT_MAX_ATTEMPTS_FACTOR,
            compare_baseline: true,
            dataset: DatasetConfig::default(),
            candidates: CandidateConfig::default(),
            gan: GanConfig::default(),
            perturb: PerturbSpec::default(),
            external: ExternalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0,1), got {}", self.threshold));
        }
        if check_epsilon(self.perturb.epsilon).is_err() {
            return bad(format!("perturb.epsilon must lie in [0, 0.5], got {}", self.perturb.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be ≥ 0, got {}", self.learning_rate));
        }
        if !(self.augment_fraction >= 0.0 && self.augment_fraction.is_finite()) {
            return bad(format!("augment_fraction must be ≥ 0, got {}", self.augment_fraction));
        }
        if self.max_attempts_factor == 0 {
            return bad("max_attempts_factor must be ≥ 1".into());
        }
        if self.candidates.presets.is_empty() {
            return bad("candidates.presets must name at least one preset".into());
        }
        for p in &self.candidates.presets {
            if !CLASSIFIER_PRESETS.contains(&p.as_str()) {
                return bad(format!(
                    "candidates.presets: unknown preset `{p}`, expected one of {CLASSIFIER_PRESETS:?}"
                ));
            }
        }
        self.gan.validate()?;
        self.dataset.validate()
    }

    /// Candidate network specs for a `classes`-way problem.
    pub fn candidate_specs(&self, classes: usize) -> Result<Vec<NetworkSpec>> {
        self.candidates
            .presets
            .iter()
            .map(|p| NetworkSpec::preset(p, classes))
            .collect()
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Master seed by precedence: explicit flag, then the `ADA_GAN_SEED`
/// environment value, then the config value.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        None => Ok(config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversarial::PerturbMode;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml_str("[dataset]\nsource = \"mnist\"\n").unwrap();
        assert_eq!(cfg.threshold, 0.8);
        assert_eq!(cfg.perturb.epsilon, 0.05);
        assert_eq!(cfg.perturb.mode, PerturbMode::Fgsm);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.dataset, DatasetConfig::Mnist(MnistSource::default()));
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn threshold_bound_is_named() {
        let err = ExperimentConfig::from_toml_str("threshold = 1.5").unwrap_err();
        assert!(err.to_string().contains("threshold"), "{err}");
        assert!(ExperimentConfig::from_toml_str("threshold = 0.0").is_err());
        let err = ExperimentConfig::from_toml_str("[perturb]\nepsilon = 0.6").unwrap_err();
        assert!(err.to_string().contains("epsilon"), "{err}");
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::from_toml_str("treshold = 0.7").unwrap_err();
        assert!(err.to_string().contains("treshold"), "{err}");
        let err = ExperimentConfig::from_toml_str("[gan]\nepoch = 3").unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
        let err = ExperimentConfig::from_toml_str("[dataset]\nsource = \"glyph\"\nclases = 3").unwrap_err();
        assert!(err.to_string().contains("clases"), "{err}");
    }

    #[test]
    fn negative_epochs_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[external]\nepochs = -1").is_err());
        assert!(ExperimentConfig::from_toml_str("[candidates]\nepochs = 0").is_ok());
    }

    #[test]
    fn echo_round_trips() {
        let text = "seed = 7\nnoise_order = \"perturb_merged\"\naugment_per_class = 12\n\
                    [dataset]\nsource = \"glyph\"\ncomplexity = 4\n[perturb]\nmode = \"uniform_random\"\nepsilon = 0.1\n";
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let echoed = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&echoed).unwrap(), cfg);
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some("2"), 3).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some("2"), 3).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, 3).unwrap(), 3);
        assert!(resolve_seed(None, Some("x"), 3).is_err());
    }

    #[test]
    fn unknown_preset_is_rejected() {
        let err = ExperimentConfig::from_toml_str("[candidates]\npresets = [\"resnet\"]").unwrap_err();
        assert!(err.to_string().contains("resnet"));
    }
}
