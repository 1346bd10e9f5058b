use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::conv_output_dims;

/// One layer of a [`NetworkSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    MaxPool {
        #[serde(default = "two")]
        size: usize,
    },
    Flatten,
    /// Fully connected layer. `inputs`, when given, must equal the incoming
    /// feature count.
    Dense {
        units: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inputs: Option<usize>,
    },
    Relu,
    LeakyRelu {
        alpha: f64,
    },
    Sigmoid,
    Tanh,
    Softmax,
    /// Parallel stride-1 "same" convolutions of different widths whose
    /// outputs are stacked along the channel axis.
    Inception {
        branches: Vec<InceptionBranch>,
    },
    Reshape {
        shape: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InceptionBranch {
    pub filters: usize,
    /// Odd kernel size.
    pub kernel: usize,
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

/// What a network's head produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Softmax over K classes.
    Probabilities,
    /// Sigmoid image.
    Image,
    /// Single sigmoid probability per sample.
    ScalarProb,
}

/// Declarative network description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    /// Per-sample input shape, e.g. `[1, 28, 28]` or `[64]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// Names of the built-in classifier presets, in increasing capacity.
pub const CLASSIFIER_PRESETS: [&str; 4] = ["mlp", "cnn_small", "cnn_medium", "cnn_wide"];

/// Classifier input: one 28×28 grayscale channel.
pub const IMAGE_SHAPE: [usize; 3] = [1, 28, 28];

impl NetworkSpec {
    /// One of [`CLASSIFIER_PRESETS`] ending in a `classes`-way softmax.
    pub fn preset(name: &str, classes: usize) -> Result<Self> {
        use LayerSpec::*;
        let conv = |filters, kernel, padding| Conv2d {
            filters,
            kernel,
            stride: 1,
            padding,
        };
        let dense = |units| Dense {
            units,
            inputs: None,
        };
        let pool = MaxPool { size: 2 };
        let layers = match name {
            "mlp" => vec![Flatten, dense(128), Relu, dense(classes), Softmax],
            "cnn_small" => vec![
                conv(8, 3, 0),
                Relu,
                pool.clone(),
                conv(16, 3, 0),
                Relu,
                pool,
                Flatten,
                dense(classes),
                Softmax,
            ],
            "cnn_medium" => vec![
                conv(16, 3, 1),
                Relu,
                pool.clone(),
                conv(32, 3, 1),
                Relu,
                pool,
                Flatten,
                dense(64),
                Relu,
                dense(classes),
                Softmax,
            ],
            "cnn_wide" => vec![
                conv(16, 3, 0),
                Relu,
                pool.clone(),
                Inception {
                    branches: vec![
                        InceptionBranch { filters: 8, kernel: 1 },
                        InceptionBranch { filters: 16, kernel: 3 },
                        InceptionBranch { filters: 8, kernel: 5 },
                    ],
                },
                Relu,
                pool,
                Flatten,
                dense(classes),
                Softmax,
            ],
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (expected one of {CLASSIFIER_PRESETS:?})"
                )))
            }
        };
        Ok(Self {
            name: name.to_string(),
            input_shape: IMAGE_SHAPE.to_vec(),
            layers,
        })
    }

    /// MLP generator: latent → hidden layers with leaky ReLU(0.2) → sigmoid 1×28×28.
    pub fn generator(latent_dim: usize, hidden: &[usize]) -> Self {
        let mut layers = Vec::new();
        for &units in hidden {
            layers.push(LayerSpec::Dense { units, inputs: None });
            layers.push(LayerSpec::LeakyRelu { alpha: 0.2 });
        }
        layers.push(LayerSpec::Dense {
            units: IMAGE_SHAPE.iter().product(),
            inputs: None,
        });
        layers.push(LayerSpec::Sigmoid);
        layers.push(LayerSpec::Reshape {
            shape: IMAGE_SHAPE.to_vec(),
        });
        Self {
            name: "generator".into(),
            input_shape: vec![latent_dim],
            layers,
        }
    }

    /// Mirror of [`Self::generator`]: 1×28×28 → hidden layers (reversed) →
    /// one sigmoid probability.
    pub fn discriminator(hidden: &[usize]) -> Self {
        let mut layers = vec![LayerSpec::Flatten];
        for &units in hidden.iter().rev() {
            layers.push(LayerSpec::Dense { units, inputs: None });
            layers.push(LayerSpec::LeakyRelu { alpha: 0.2 });
        }
        layers.push(LayerSpec::Dense {
            units: 1,
            inputs: None,
        });
        layers.push(LayerSpec::Sigmoid);
        Self {
            name: "discriminator".into(),
            input_shape: IMAGE_SHAPE.to_vec(),
            layers,
        }
    }

    /// Dry-run shape pass. Returns the per-sample shape after every layer and
    /// the output kind.
    pub fn infer_shapes(&self) -> Result<(Vec<Vec<usize>>, OutputKind)> {
        let build = |index, message: String| Error::Build { index, message };
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(build(0, format!("invalid input shape {:?}", self.input_shape)));
        }
        if self.layers.is_empty() {
            return Err(build(0, "network has no layers".into()));
        }
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    if shape.len() != 3 {
                        return Err(build(i, format!("conv2d needs [C,H,W] input, got {shape:?}")));
                    }
                    if *filters == 0 {
                        return Err(build(i, "conv2d needs at least one filter".into()));
                    }
                    let (ho, wo) =
                        conv_output_dims(shape[1], shape[2], *kernel, *kernel, *stride, *padding)
                            .map_err(|e| build(i, e.to_string()))?;
                    vec![*filters, ho, wo]
                }
                LayerSpec::Inception { branches } => {
                    if shape.len() != 3 {
                        return Err(build(i, format!("inception needs [C,H,W] input, got {shape:?}")));
                    }
                    if branches.is_empty() {
                        return Err(build(i, "inception needs at least one branch".into()));
                    }
                    for b in branches {
                        if b.kernel % 2 == 0 || b.filters == 0 {
                            return Err(build(
                                i,
                                format!("inception branch {b:?} needs an odd kernel and filters > 0"),
                            ));
                        }
                        conv_output_dims(shape[1], shape[2], b.kernel, b.kernel, 1, b.kernel / 2)
                            .map_err(|e| build(i, e.to_string()))?;
                    }
                    vec![branches.iter().map(|b| b.filters).sum(), shape[1], shape[2]]
                }
                LayerSpec::MaxPool { size } => {
                    if shape.len() != 3 {
                        return Err(build(i, format!("max_pool needs [C,H,W] input, got {shape:?}")));
                    }
                    let (ho, wo) = conv_output_dims(shape[1], shape[2], *size, *size, *size, 0)
                        .map_err(|e| build(i, e.to_string()))?;
                    vec![shape[0], ho, wo]
                }
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Dense { units, inputs } => {
                    if shape.len() != 1 {
                        return Err(build(i, format!("dense needs flat input, got {shape:?}")));
                    }
                    if let Some(declared) = inputs {
                        if *declared != shape[0] {
                            return Err(build(
                                i,
                                format!("dense declared with {declared} inputs but fed {}", shape[0]),
                            ));
                        }
                    }
                    if *units == 0 {
                        return Err(build(i, "dense needs at least one unit".into()));
                    }
                    vec![*units]
                }
                LayerSpec::Softmax => {
                    if shape.len() != 1 || shape[0] < 2 {
                        return Err(build(i, format!("softmax needs [K>=2] input, got {shape:?}")));
                    }
                    shape
                }
                LayerSpec::LeakyRelu { alpha } if !alpha.is_finite() => {
                    return Err(build(i, "leaky_relu alpha must be finite".into()));
                }
                LayerSpec::Relu | LayerSpec::LeakyRelu { .. } | LayerSpec::Sigmoid | LayerSpec::Tanh => {
                    shape
                }
                LayerSpec::Reshape { shape: to } => {
                    let n: usize = to.iter().product();
                    if to.contains(&0) || n != shape.iter().product::<usize>() {
                        return Err(build(i, format!("cannot reshape {shape:?} into {to:?}")));
                    }
                    to.clone()
                }
            };
            shapes.push(shape.clone());
        }
        let head = self
            .layers
            .iter()
            .rposition(|l| !matches!(l, LayerSpec::Reshape { .. }))
            .expect("non-empty layer list");
        let last = self.layers.len() - 1;
        let kind = match &self.layers[head] {
            LayerSpec::Softmax if head == last => OutputKind::Probabilities,
            LayerSpec::Sigmoid if shapes[last] == [1] => OutputKind::ScalarProb,
            LayerSpec::Sigmoid => OutputKind::Image,
            _ => {
                return Err(build(
                    head,
                    "network must end in a softmax or sigmoid head".into(),
                ))
            }
        };
        Ok((shapes, kind))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cnn_small_layout() {
        let spec = NetworkSpec::preset("cnn_small", 10).unwrap();
        let (shapes, kind) = spec.infer_shapes().unwrap();
        assert_eq!(kind, OutputKind::Probabilities);
        assert_eq!(shapes[0], vec![8, 26, 26]);
        assert_eq!(shapes[2], vec![8, 13, 13]);
        assert_eq!(shapes[5], vec![16, 5, 5]);
        assert_eq!(shapes.last().unwrap(), &vec![10]);
    }

    #[test]
    fn every_preset_builds_for_ten_classes() {
        for name in CLASSIFIER_PRESETS {
            let (shapes, kind) = NetworkSpec::preset(name, 10).unwrap().infer_shapes().unwrap();
            assert_eq!(kind, OutputKind::Probabilities, "{name}");
            assert_eq!(shapes.last().unwrap(), &vec![10], "{name}");
        }
        assert!(NetworkSpec::preset("resnet50", 10).is_err());
    }

    #[test]
    fn declared_dense_inputs_must_match() {
        let spec = NetworkSpec {
            name: "bad".into(),
            input_shape: vec![1, 28, 28],
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 10,
                    inputs: Some(100),
                },
                LayerSpec::Softmax,
            ],
        };
        match spec.infer_shapes() {
            Err(Error::Build { index, message }) => {
                assert_eq!(index, 1);
                assert!(message.contains("784"), "{message}");
            }
            other => panic!("expected build error, got {other:?}"),
        }
    }

    #[test]
    fn gan_networks_have_matching_heads() {
        let (shapes, kind) = NetworkSpec::generator(64, &[256, 512]).infer_shapes().unwrap();
        assert_eq!(kind, OutputKind::Image);
        assert_eq!(shapes.last().unwrap(), &vec![1, 28, 28]);
        let (shapes, kind) = NetworkSpec::discriminator(&[256, 512]).infer_shapes().unwrap();
        assert_eq!(kind, OutputKind::ScalarProb);
        assert_eq!(shapes[1], vec![512]);
    }

    #[test]
    fn headless_network_is_rejected() {
        let spec = NetworkSpec {
            name: "no_head".into(),
            input_shape: vec![4],
            layers: vec![LayerSpec::Dense { units: 3, inputs: None }],
        };
        assert!(matches!(spec.infer_shapes(), Err(Error::Build { index: 0, .. })));
    }

    #[test]
    fn spec_parses_from_toml() {
        let text = r#"
            name = "tiny"
            input_shape = [1, 28, 28]
            layers = [
              { kind = "conv2d", filters = 4, kernel = 5 },
              { kind = "relu" },
              { kind = "max_pool" },
              { kind = "flatten" },
              { kind = "dense", units = 10 },
              { kind = "softmax" },
            ]
        "#;
        let spec: NetworkSpec = toml::from_str(text).unwrap();
        assert_eq!(
            spec.layers[0],
            LayerSpec::Conv2d {
                filters: 4,
                kernel: 5,
                stride: 1,
                padding: 0
            }
        );
        assert!(spec.infer_shapes().is_ok());
        let typo = text.replace("filters = 4", "filter = 4");
        assert!(toml::from_str::<NetworkSpec>(&typo).is_err());
    }
}
