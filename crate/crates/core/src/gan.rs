//! One unconditional GAN per class: a dense generator from a standard-normal
//! latent space to 28×28 images and a mirrored dense discriminator.
//!
//! Checkpoint layout (all integers little-endian `u32`):
//!
//! ```text
//! b"ADAGANCK"  version=1  class_id  latent_dim  epochs_trained
//! hidden_count  hidden[0..hidden_count]
//! generator parameters  discriminator parameters
//! ```
//!
//! Each parameter block is `tensor_count` followed, per tensor, by its rank,
//! its extents and its values as little-endian `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{
    discriminator_loss_graph, generator_loss_graph, GeneratorLossMode, Network, NetworkSpec,
    Optimizer, ParamMode,
};
use crate::rng::{name_tag, substream, Rng};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

pub const DEFAULT_LATENT_DIM: usize = 64;
pub const DEFAULT_GAN_HIDDEN: [usize; 2] = [256, 512];
pub const DEFAULT_GAN_EPOCHS: usize = 300;
pub const DEFAULT_GAN_LR: f64 = 2e-4;
pub const DEFAULT_GAN_BATCH: usize = 32;
pub const DEFAULT_PROBE_SIZE: usize = 64;

const CHECKPOINT_MAGIC: &[u8; 8] = b"ADAGANCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub latent_dim: usize,
    /// Generator hidden widths; the discriminator uses them reversed.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub generator_loss: GeneratorLossMode,
    /// Size of the fixed latent batch on which mean `D(G(z))` is tracked.
    pub probe_size: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            latent_dim: DEFAULT_LATENT_DIM,
            hidden: DEFAULT_GAN_HIDDEN.to_vec(),
            epochs: DEFAULT_GAN_EPOCHS,
            learning_rate: DEFAULT_GAN_LR,
            batch_size: DEFAULT_GAN_BATCH,
            generator_loss: GeneratorLossMode::default(),
            probe_size: DEFAULT_PROBE_SIZE,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.latent_dim == 0 {
            return bad("gan.latent_dim must be ≥ 1".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("gan.hidden must be non-empty positive widths, got {:?}", self.hidden));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("gan.learning_rate must be ≥ 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.probe_size == 0 {
            return bad("gan.batch_size and gan.probe_size must be ≥ 1".into());
        }
        Ok(())
    }
}

/// Generator, discriminator and their optimizer states for one class.
#[derive(Clone, Debug)]
pub struct GanPair<T> {
    pub class_id: usize,
    pub generator: Network<T>,
    pub discriminator: Network<T>,
    pub latent_dim: usize,
    pub epochs_trained: usize,
    hidden: Vec<usize>,
    generator_opt: Optimizer<T>,
    discriminator_opt: Optimizer<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanEpochRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Mean discriminator output on the fixed probe batch after the epoch.
    pub probe_d_fake: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanTrainReport {
    pub class_id: usize,
    pub records: Vec<GanEpochRecord>,
}

/// Standard-normal latent batch `[batch, latent_dim]`.
pub fn sample_latent<T: Scalar>(batch: usize, latent_dim: usize, rng: &mut Rng) -> Tensor<T> {
    assert!(batch > 0 && latent_dim > 0, "latent batch extents must be positive");
    let data = (0..batch * latent_dim)
        .map(|_| T::of(StandardNormal.sample(rng)))
        .collect();
    Tensor::new(&[batch, latent_dim], data).expect("normal draws are finite")
}

impl<T: Scalar> GanPair<T> {
    pub fn new(class_id: usize, config: &GanConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let generator = Network::build(&NetworkSpec::generator(config.latent_dim, &config.hidden), rng)?;
        let discriminator = Network::build(&NetworkSpec::discriminator(&config.hidden), rng)?;
        Ok(Self {
            class_id,
            generator,
            discriminator,
            latent_dim: config.latent_dim,
            epochs_trained: 0,
            hidden: config.hidden.clone(),
            generator_opt: Optimizer::adam(config.learning_rate),
            discriminator_opt: Optimizer::adam(config.learning_rate),
        })
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    /// Replaces both optimizers, e.g. to freeze training with a zero rate.
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.generator_opt = Optimizer::adam(lr);
        self.discriminator_opt = Optimizer::adam(lr);
    }

    /// One discriminator update on `real` and an equally sized generated
    /// batch. Generator parameters are constants here.
    pub fn discriminator_step(&mut self, real: &Tensor<T>, rng: &mut Rng) -> Result<f64> {
        let n = real.shape()[0];
        let fake = self.generator.predict(&sample_latent(n, self.latent_dim, rng))?;
        let mut g = Graph::new();
        let xr = g.input(real.clone());
        let xf = g.input(fake);
        let real_fwd = self.discriminator.forward(&mut g, xr, ParamMode::Train)?;
        let fake_fwd = self.discriminator.forward(&mut g, xf, ParamMode::Train)?;
        let loss = discriminator_loss_graph(&mut g, real_fwd.logits, fake_fwd.logits)?;
        g.backward(loss)?;
        self.discriminator.accumulate_grads(&g, &real_fwd.params)?;
        self.discriminator.accumulate_grads(&g, &fake_fwd.params)?;
        self.discriminator_opt.step(&mut self.discriminator)?;
        Ok(g.scalar(loss).as_f64())
    }

    /// One generator update through the frozen discriminator.
    pub fn generator_step(&mut self, batch: usize, mode: GeneratorLossMode, rng: &mut Rng) -> Result<f64> {
        let mut g = Graph::new();
        let z = g.input(sample_latent(batch, self.latent_dim, rng));
        let gen = self.generator.forward(&mut g, z, ParamMode::Train)?;
        let judged = self.discriminator.forward(&mut g, gen.output, ParamMode::Frozen)?;
        let loss = generator_loss_graph(&mut g, judged.logits, mode)?;
        g.backward(loss)?;
        self.generator.accumulate_grads(&g, &gen.params)?;
        self.generator_opt.step(&mut self.generator)?;
        Ok(g.scalar(loss).as_f64())
    }

    /// Mean `D(G(z))` over a latent batch.
    pub fn mean_d_fake(&self, z: &Tensor<T>) -> Result<f64> {
        let d = self.discriminator.predict(&self.generator.predict(z)?)?;
        Ok(d.mean().as_f64())
    }
}

/// A discriminator update followed by a generator update of the same batch
/// size. Returns `(d_loss, g_loss)`.
pub fn gan_train_step<T: Scalar>(
    pair: &mut GanPair<T>,
    real_batch: &Tensor<T>,
    mode: GeneratorLossMode,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    let d_loss = pair.discriminator_step(real_batch, rng)?;
    let g_loss = pair.generator_step(real_batch.shape()[0], mode, rng)?;
    Ok((d_loss, g_loss))
}

/// Trains a fresh GAN on the images of `class_id` for `config.epochs`
/// shuffled passes. All randomness derives from `seed` and the class id.
pub fn train_gan_per_class<T: Scalar>(
    data: &LabeledDataset<T>,
    class_id: usize,
    config: &GanConfig,
    seed: u64,
) -> Result<(GanPair<T>, GanTrainReport)> {
    config.validate()?;
    let class = class_id as u64;
    let mut init_rng = substream(seed, &[name_tag("gan-init"), class]);
    let pair = GanPair::new(class_id, config, &mut init_rng)?;
    continue_training(pair, data, config, seed)
}

/// Trains an existing pair for `config.epochs` more epochs.
pub fn continue_training<T: Scalar>(
    mut pair: GanPair<T>,
    data: &LabeledDataset<T>,
    config: &GanConfig,
    seed: u64,
) -> Result<(GanPair<T>, GanTrainReport)> {
    let class_id = pair.class_id;
    let mut idx = data.class_indices(class_id);
    if idx.len() < config.batch_size {
        return Err(Error::Input(format!(
            "class {class_id} has {} samples; GAN training needs at least {}",
            idx.len(),
            config.batch_size
        )));
    }
    let class = class_id as u64;
    let probe = sample_latent::<T>(
        config.probe_size,
        pair.latent_dim,
        &mut substream(seed, &[name_tag("gan-probe"), class]),
    );
    let mut report = GanTrainReport {
        class_id,
        records: Vec::with_capacity(config.epochs),
    };
    for _ in 0..config.epochs {
        let epoch = pair.epochs_trained + 1;
        let mut rng = substream(seed, &[name_tag("gan-epoch"), class, epoch as u64]);
        idx.shuffle(&mut rng);
        let (mut d_sum, mut g_sum, mut batches) = (0.0, 0.0, 0);
        for chunk in idx.chunks(config.batch_size) {
            let real = data.images().select(chunk);
            let (d, g) = gan_train_step(&mut pair, &real, config.generator_loss, &mut rng)?;
            d_sum += d;
            g_sum += g;
            batches += 1;
        }
        pair.epochs_trained = epoch;
        report.records.push(GanEpochRecord {
            epoch,
            d_loss: d_sum / batches as f64,
            g_loss: g_sum / batches as f64,
            probe_d_fake: pair.mean_d_fake(&probe)?,
        });
    }
    Ok((pair, report))
}

/// `count` generated images `[count, 1, 28, 28]`.
pub fn generate<T: Scalar>(pair: &GanPair<T>, count: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    if count == 0 {
        return Err(Error::Contract("generate needs count ≥ 1".into()));
    }
    pair.generator.predict(&sample_latent(count, pair.latent_dim, rng))
}

fn put_u32<W: Write>(out: &mut W, v: usize) -> std::io::Result<()> {
    out.write_all(&(v as u32).to_le_bytes())
}

fn get_u32<R: Read>(input: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    input
        .read_exact(&mut b)
        .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_checkpoint<T: Scalar, W: Write>(pair: &GanPair<T>, out: &mut W) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    put_u32(out, CHECKPOINT_VERSION as usize)?;
    for v in [pair.class_id, pair.latent_dim, pair.epochs_trained, pair.hidden.len()] {
        put_u32(out, v)?;
    }
    for &h in &pair.hidden {
        put_u32(out, h)?;
    }
    pair.generator.write_params(out)?;
    pair.discriminator.write_params(out)
}

/// Reads a checkpoint. The restored pair has fresh optimizer state with
/// learning rate `learning_rate`.
pub fn read_checkpoint<T: Scalar, R: Read>(input: &mut R, learning_rate: f64) -> Result<GanPair<T>> {
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a GAN checkpoint (bad magic)".into()));
    }
    let version = get_u32(input)?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let class_id = get_u32(input)?;
    let latent_dim = get_u32(input)?;
    let epochs_trained = get_u32(input)?;
    let hidden_count = get_u32(input)?;
    if hidden_count == 0 || hidden_count > 64 {
        return Err(Error::Format(format!("implausible hidden layer count {hidden_count}")));
    }
    let hidden = (0..hidden_count).map(|_| get_u32(input)).collect::<Result<Vec<_>>>()?;
    let config = GanConfig {
        latent_dim,
        hidden,
        learning_rate,
        ..GanConfig::default()
    };
    let mut pair = GanPair::new(class_id, &config, &mut crate::rng::rng_from_seed(0))?;
    pair.generator.read_params(input)?;
    pair.discriminator.read_params(input)?;
    pair.epochs_trained = epochs_trained;
    Ok(pair)
}

pub fn save_checkpoint<T: Scalar>(pair: &GanPair<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_checkpoint(pair, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>, learning_rate: f64) -> Result<GanPair<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file), learning_rate)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn small() -> GanConfig {
        GanConfig {
            latent_dim: 4,
            hidden: vec![8, 16],
            epochs: 2,
            batch_size: 4,
            probe_size: 8,
            ..GanConfig::default()
        }
    }

    fn snapshot(net: &Network<f32>) -> Vec<Vec<f32>> {
        net.params().iter().map(|p| p.data().to_vec()).collect()
    }

    fn class_data(n: usize) -> LabeledDataset<f32> {
        let img = Tensor::filled(&[n, 1, 28, 28], 0.5);
        LabeledDataset::new(img, vec![1; n], 2).unwrap()
    }

    #[test]
    fn latent_shape_and_determinism() {
        let a = sample_latent::<f32>(32, 64, &mut rng_from_seed(1));
        assert_eq!(a.shape(), &[32, 64]);
        assert_eq!(a, sample_latent(32, 64, &mut rng_from_seed(1)));
    }

    #[test]
    fn half_steps_touch_only_their_own_network() {
        let mut pair = GanPair::<f32>::new(0, &small(), &mut rng_from_seed(2)).unwrap();
        let real = Tensor::filled(&[4, 1, 28, 28], 0.7);
        let mut rng = rng_from_seed(3);
        let (g0, d0) = (snapshot(&pair.generator), snapshot(&pair.discriminator));
        pair.discriminator_step(&real, &mut rng).unwrap();
        assert_eq!(snapshot(&pair.generator), g0);
        assert_ne!(snapshot(&pair.discriminator), d0);
        let d1 = snapshot(&pair.discriminator);
        pair.generator_step(4, GeneratorLossMode::NonSaturating, &mut rng).unwrap();
        assert_eq!(snapshot(&pair.discriminator), d1);
        assert_ne!(snapshot(&pair.generator), g0);
    }

    #[test]
    fn zero_learning_rate_freezes_both_networks() {
        let mut pair = GanPair::<f32>::new(0, &small(), &mut rng_from_seed(2)).unwrap();
        pair.set_learning_rate(0.0);
        let (g0, d0) = (snapshot(&pair.generator), snapshot(&pair.discriminator));
        let real = Tensor::filled(&[4, 1, 28, 28], 0.7);
        let (d, g) = gan_train_step(&mut pair, &real, GeneratorLossMode::Minimax, &mut rng_from_seed(4)).unwrap();
        assert!(d.is_finite() && g.is_finite());
        assert_eq!(snapshot(&pair.generator), g0);
        assert_eq!(snapshot(&pair.discriminator), d0);
    }

    #[test]
    fn report_length_matches_epochs() {
        let data = class_data(9);
        let (pair, report) = train_gan_per_class(&data, 1, &small(), 5).unwrap();
        assert_eq!(report.records.len(), 2);
        assert_eq!(pair.epochs_trained, 2);
        let zero = GanConfig { epochs: 0, ..small() };
        let (_, empty) = train_gan_per_class(&data, 1, &zero, 5).unwrap();
        assert!(empty.records.is_empty());
        let again = train_gan_per_class(&data, 1, &small(), 5).unwrap().1;
        assert_eq!(again, report);
    }

    #[test]
    fn too_few_samples_is_an_input_error() {
        let err = train_gan_per_class(&class_data(3), 1, &small(), 0).unwrap_err();
        assert!(matches!(err, Error::Input(ref m) if m.contains("class 1") && m.contains('3')), "{err}");
    }

    #[test]
    fn generated_pixels_stay_in_unit_range() {
        let pair = GanPair::<f32>::new(0, &small(), &mut rng_from_seed(7)).unwrap();
        let img = generate(&pair, 5, &mut rng_from_seed(8)).unwrap();
        assert_eq!(img.shape(), &[5, 1, 28, 28]);
        let (lo, hi) = img.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
        assert_eq!(img, generate(&pair, 5, &mut rng_from_seed(8)).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let pair = GanPair::<f32>::new(3, &small(), &mut rng_from_seed(9)).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&pair, &mut bytes).unwrap();
        let back: GanPair<f32> = read_checkpoint(&mut bytes.as_slice(), 1e-3).unwrap();
        assert_eq!(back.class_id, 3);
        assert_eq!(back.hidden(), &[8, 16]);
        assert_eq!(snapshot(&back.generator), snapshot(&pair.generator));
        assert_eq!(snapshot(&back.discriminator), snapshot(&pair.discriminator));
        bytes[0] = b'X';
        assert!(read_checkpoint::<f32, _>(&mut bytes.as_slice(), 1e-3).is_err());
        assert!(read_checkpoint::<f32, _>(&mut &bytes[..20], 1e-3).is_err());
    }
}
