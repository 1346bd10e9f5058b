//! Adversarial, confidence-gated GAN data augmentation for handwritten
//! character classification.
//!
//! The numeric core is generic over [`Scalar`] (`f32` / `f64`); the aliases
//! below fix the precision for the two usual modes: `f32` for training runs,
//! `f64` for gradient checking.

pub mod adversarial;
pub mod config;
pub mod data;
pub mod error;
pub mod gan;
pub mod rng;
pub mod scalar;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod tensor;

pub use error::{Error, Result};
pub use data::LabeledDataset;
pub use nn::Network;
pub use scalar::Scalar;
pub use tensor::{Graph, NodeId, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
pub type Dataset32 = LabeledDataset<f32>;
pub type Dataset64 = LabeledDataset<f64>;
