//! Finite-difference check of every graph operation, loss and network
//! preset, run in `f64`.
//!
//! Each case draws random inputs from a per-case seed, reduces any
//! non-scalar output to `Σ out ⊙ W` with a fixed random `W`, and compares
//! backward gradients against central differences. Inputs to `relu` and
//! `maxpool2d` are kept well away from their kinks. Whole networks have too
//! many units for that, so a coordinate whose ±h evaluations switch any
//! `relu` sign or pooling argmax is skipped and counted instead.

use rand::seq::index::sample;
use rand::Rng as _;
use serde::Serialize;

use crate::error::Result;
use crate::rng::{derive_seed, name_tag, rng_from_seed, Rng};
use crate::tensor::{relative_error, Graph, NodeId, Tensor, Unary};

use super::loss::{
    discriminator_loss_graph, external_classifier_loss_graph, generator_loss_graph,
    GeneratorLossMode,
};
use super::network::{Network, ParamMode};
use super::spec::NetworkSpec;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_SEEDS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckRecord {
    pub name: String,
    pub seeds: usize,
    pub coordinates: usize,
    /// Coordinates whose ±h step crossed a kink.
    pub skipped_at_kinks: usize,
    pub max_relative_error: f64,
}

impl GradCheckRecord {
    pub fn passed(&self) -> bool {
        self.max_relative_error < GRADCHECK_TOLERANCE
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub seeds: usize,
    pub step: f64,
    pub seed: u64,
    /// Coordinates checked per network parameter tensor.
    pub network_coordinates: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            seeds: GRADCHECK_SEEDS,
            step: GRADCHECK_STEP,
            seed: 42,
            network_coordinates: 12,
        }
    }
}

/// Value, piecewise signature and (optionally) gradients of a scalar
/// function of several tensors.
type Eval<'a> = Box<dyn FnMut(&[Tensor<f64>], bool) -> Result<Evaluated> + 'a>;

struct Evaluated {
    value: f64,
    signature: u64,
    grads: Vec<Vec<f64>>,
}

#[derive(Default)]
struct Comparison {
    worst: f64,
    checked: usize,
    skipped: usize,
}

/// Compares analytic and central-difference gradients at up to `per_tensor`
/// random coordinates of every state tensor (all coordinates when `None`).
fn compare(
    state: &mut [Tensor<f64>],
    eval: &mut Eval<'_>,
    h: f64,
    per_tensor: Option<usize>,
    rng: &mut Rng,
) -> Result<Comparison> {
    let base = eval(state, true)?;
    let mut out = Comparison::default();
    for t in 0..state.len() {
        let len = state[t].len();
        let coords: Vec<usize> = match per_tensor {
            Some(k) if k < len => sample(rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        for j in coords {
            let orig = state[t].data()[j];
            state[t].data_mut()[j] = orig + h;
            let plus = eval(state, false)?;
            state[t].data_mut()[j] = orig - h;
            let minus = eval(state, false)?;
            state[t].data_mut()[j] = orig;
            if plus.signature != base.signature || minus.signature != base.signature {
                out.skipped += 1;
                continue;
            }
            let numeric = (plus.value - minus.value) / (2.0 * h);
            out.worst = out.worst.max(relative_error(base.grads[t][j], numeric));
            out.checked += 1;
        }
    }
    Ok(out)
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("finite")
}

/// Values bounded away from zero: magnitude in `[0.1, 1)`, random sign.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("finite")
}

/// A random permutation of evenly spaced values, so every pooling window
/// has a unique maximum separated from the rest by a wide margin.
fn distinct(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let order = sample(rng, n, n).into_vec();
    let data = order.iter().map(|&k| k as f64 / n as f64 - 0.5).collect();
    Tensor::new(shape, data).expect("finite")
}

/// Builds an [`Eval`] from a graph-building closure over the state tensors.
fn graph_eval<'a, F>(weights_seed: u64, mut build: F) -> Eval<'a>
where
    F: FnMut(&mut Graph<f64>, &[NodeId]) -> Result<NodeId> + 'a,
{
    Box::new(move |state: &[Tensor<f64>], want_grad: bool| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = state.iter().map(|t| g.leaf(t, want_grad)).collect();
        let out = build(&mut g, &ids)?;
        let root = reduce(&mut g, out, weights_seed)?;
        let value = g.scalar(root);
        let signature = g.piecewise_signature();
        if !want_grad {
            return Ok(Evaluated { value, signature, grads: Vec::new() });
        }
        g.backward(root)?;
        let grads = ids
            .iter()
            .zip(state)
            .map(|(&id, t)| g.grad(id).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
            .collect();
        Ok(Evaluated { value, signature, grads })
    })
}

/// `Σ out ⊙ W` for a fixed random `W`; scalars pass through.
fn reduce(g: &mut Graph<f64>, out: NodeId, seed: u64) -> Result<NodeId> {
    if g.value(out).len() == 1 {
        return Ok(out);
    }
    let shape = g.shape(out).to_vec();
    let w = uniform(&mut rng_from_seed(seed), &shape, -1.0, 1.0);
    let w = g.input(w);
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

fn network_eval<'a>(mut net: Network<f64>, labels: Vec<usize>, loss: NetLoss, weights_seed: u64) -> Eval<'a> {
    Box::new(move |state: &[Tensor<f64>], want_grad: bool| {
        for (p, s) in net.params_mut().into_iter().zip(&state[1..]) {
            p.data_mut().copy_from_slice(s.data());
        }
        let mut g = Graph::new();
        let x = g.leaf(&state[0], want_grad);
        let mode = if want_grad { ParamMode::Train } else { ParamMode::Frozen };
        let fwd = net.forward(&mut g, x, mode)?;
        let root = match loss {
            NetLoss::SoftmaxCrossEntropy => g.softmax_cross_entropy(fwd.logits, &labels)?,
            NetLoss::WeightedOutput => reduce(&mut g, fwd.output, weights_seed)?,
        };
        let value = g.scalar(root);
        let signature = g.piecewise_signature();
        if !want_grad {
            return Ok(Evaluated { value, signature, grads: Vec::new() });
        }
        g.backward(root)?;
        let mut grads = vec![g.grad(x).map_or_else(|| vec![0.0; state[0].len()], <[f64]>::to_vec)];
        for (&id, t) in fwd.params.iter().zip(&state[1..]) {
            grads.push(g.grad(id).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec));
        }
        Ok(Evaluated { value, signature, grads })
    })
}

#[derive(Clone, Copy, Debug)]
enum NetLoss {
    SoftmaxCrossEntropy,
    WeightedOutput,
}

/// One prepared instance of a case: state tensors, evaluator and the
/// number of coordinates to check per tensor.
struct Instance<'a> {
    state: Vec<Tensor<f64>>,
    eval: Eval<'a>,
    per_tensor: Option<usize>,
}

type CaseFn = fn(&mut Rng, u64, &GradCheckOptions) -> Result<Instance<'static>>;

fn op<F>(state: Vec<Tensor<f64>>, seed: u64, build: F) -> Result<Instance<'static>>
where
    F: FnMut(&mut Graph<f64>, &[NodeId]) -> Result<NodeId> + 'static,
{
    Ok(Instance {
        state,
        eval: graph_eval(seed, build),
        per_tensor: None,
    })
}

fn network_case(
    spec: NetworkSpec,
    rng: &mut Rng,
    seed: u64,
    opts: &GradCheckOptions,
    batch: usize,
    loss: NetLoss,
    kink_free_input: bool,
) -> Result<Instance<'static>> {
    let net = Network::<f64>::build(&spec, rng)?;
    let mut shape = vec![batch];
    shape.extend_from_slice(&spec.input_shape);
    let x = if kink_free_input {
        uniform(rng, &shape, 0.0, 1.0)
    } else {
        uniform(rng, &shape, -1.0, 1.0)
    };
    let classes = net.class_count().unwrap_or(1);
    let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    let mut state = vec![x];
    state.extend(net.params().into_iter().cloned());
    Ok(Instance {
        state,
        eval: network_eval(net, labels, loss, seed),
        per_tensor: Some(opts.network_coordinates),
    })
}

fn cases() -> Vec<(&'static str, CaseFn)> {
    vec![
        ("matmul", |r, s, _| {
            let (m, k, n) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
            op(vec![uniform(r, &[m, k], -1.0, 1.0), uniform(r, &[k, n], -1.0, 1.0)], s, |g, v| g.matmul(v[0], v[1]))
        }),
        ("add_row_bias", |r, s, _| {
            op(vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)], s, |g, v| g.add_row_bias(v[0], v[1]))
        }),
        ("conv2d", |r, s, _| {
            let x = uniform(r, &[2, 2, 5, 5], -1.0, 1.0);
            let k = uniform(r, &[3, 2, 3, 3], -1.0, 1.0);
            op(vec![x, k], s, |g, v| g.conv2d(v[0], v[1], 1, 0))
        }),
        ("conv2d_stride2_pad1", |r, s, _| {
            let x = uniform(r, &[1, 2, 6, 5], -1.0, 1.0);
            let k = uniform(r, &[2, 2, 3, 2], -1.0, 1.0);
            op(vec![x, k], s, |g, v| g.conv2d(v[0], v[1], 2, 1))
        }),
        ("add_channel_bias", |r, s, _| {
            op(vec![uniform(r, &[2, 3, 2, 2], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)], s, |g, v| {
                g.add_channel_bias(v[0], v[1])
            })
        }),
        ("maxpool2d", |r, s, _| op(vec![distinct(r, &[2, 2, 4, 6])], s, |g, v| g.maxpool2d(v[0], 2))),
        ("relu", |r, s, _| op(vec![away_from_zero(r, &[3, 5])], s, |g, v| g.relu(v[0]))),
        ("leaky_relu", |r, s, _| {
            op(vec![away_from_zero(r, &[3, 5])], s, |g, v| g.unary(v[0], Unary::LeakyRelu(0.2)))
        }),
        ("sigmoid", |r, s, _| op(vec![uniform(r, &[3, 5], -4.0, 4.0)], s, |g, v| g.sigmoid(v[0]))),
        ("tanh", |r, s, _| op(vec![uniform(r, &[3, 5], -2.0, 2.0)], s, |g, v| g.unary(v[0], Unary::Tanh))),
        ("add", |r, s, _| {
            op(vec![uniform(r, &[4, 3], -1.0, 1.0), uniform(r, &[4, 3], -1.0, 1.0)], s, |g, v| g.add(v[0], v[1]))
        }),
        ("mul", |r, s, _| {
            op(vec![uniform(r, &[4, 3], -1.0, 1.0), uniform(r, &[4, 3], -1.0, 1.0)], s, |g, v| g.mul(v[0], v[1]))
        }),
        ("scale", |r, s, _| {
            let c = r.random_range(-2.0..2.0);
            op(vec![uniform(r, &[4, 3], -1.0, 1.0)], s, move |g, v| g.scale(v[0], c))
        }),
        ("softmax", |r, s, _| op(vec![uniform(r, &[3, 6], -3.0, 3.0)], s, |g, v| g.softmax(v[0]))),
        ("reshape_flatten", |r, s, _| {
            op(vec![uniform(r, &[2, 3, 2, 2], -1.0, 1.0)], s, |g, v| {
                let f = g.flatten(v[0])?;
                let sq = g.mul(f, f)?;
                g.reshape(sq, &[2, 2, 6])
            })
        }),
        ("concat_channels", |r, s, _| {
            op(vec![uniform(r, &[2, 1, 3, 3], -1.0, 1.0), uniform(r, &[2, 2, 3, 3], -1.0, 1.0)], s, |g, v| {
                g.concat_channels(&[v[0], v[1]])
            })
        }),
        ("fan_out", |r, s, _| {
            op(vec![uniform(r, &[3, 3], -1.0, 1.0)], s, |g, v| {
                let a = g.mul(v[0], v[0])?;
                let b = g.sigmoid(v[0])?;
                g.add(a, b)
            })
        }),
        ("mean", |r, s, _| op(vec![uniform(r, &[3, 4], -1.0, 1.0)], s, |g, v| g.mean(v[0]))),
        ("cross_entropy", |r, s, _| {
            let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..5)).collect();
            op(vec![uniform(r, &[4, 5], 0.05, 1.0)], s, move |g, v| g.cross_entropy(v[0], &labels))
        }),
        ("softmax_cross_entropy", |r, s, _| {
            let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..5)).collect();
            op(vec![uniform(r, &[4, 5], -3.0, 3.0)], s, move |g, v| g.softmax_cross_entropy(v[0], &labels))
        }),
        ("neg_log_sigmoid", |r, s, _| op(vec![uniform(r, &[6, 1], -4.0, 4.0)], s, |g, v| g.neg_log_sigmoid(v[0]))),
        ("discriminator_loss", |r, s, _| {
            op(vec![uniform(r, &[5, 1], -4.0, 4.0), uniform(r, &[5, 1], -4.0, 4.0)], s, |g, v| {
                discriminator_loss_graph(g, v[0], v[1])
            })
        }),
        ("generator_loss_minimax", |r, s, _| {
            op(vec![uniform(r, &[5, 1], -4.0, 4.0)], s, |g, v| {
                generator_loss_graph(g, v[0], GeneratorLossMode::Minimax)
            })
        }),
        ("generator_loss_non_saturating", |r, s, _| {
            op(vec![uniform(r, &[5, 1], -4.0, 4.0)], s, |g, v| {
                generator_loss_graph(g, v[0], GeneratorLossMode::NonSaturating)
            })
        }),
        ("external_classifier_loss", |r, s, _| {
            let yr: Vec<usize> = (0..3).map(|_| r.random_range(0..4)).collect();
            let yg: Vec<usize> = (0..2).map(|_| r.random_range(0..4)).collect();
            op(vec![uniform(r, &[3, 4], -3.0, 3.0), uniform(r, &[2, 4], -3.0, 3.0)], s, move |g, v| {
                external_classifier_loss_graph(g, Some((v[0], &yr)), Some((v[1], &yg)))
            })
        }),
        ("mlp_tanh_sigmoid", |r, s, o| {
            use super::spec::LayerSpec::*;
            let spec = NetworkSpec {
                name: "mlp3".into(),
                input_shape: vec![6],
                layers: vec![
                    Dense { units: 5, inputs: None },
                    Tanh,
                    Dense { units: 4, inputs: None },
                    Sigmoid,
                    Dense { units: 3, inputs: None },
                    Softmax,
                ],
            };
            let mut inst = network_case(spec, r, s, o, 4, NetLoss::SoftmaxCrossEntropy, false)?;
            inst.per_tensor = None;
            Ok(inst)
        }),
        ("preset_mlp", |r, s, o| {
            network_case(NetworkSpec::preset("mlp", 10)?, r, s, o, 2, NetLoss::SoftmaxCrossEntropy, true)
        }),
        ("preset_cnn_small", |r, s, o| {
            network_case(NetworkSpec::preset("cnn_small", 10)?, r, s, o, 2, NetLoss::SoftmaxCrossEntropy, true)
        }),
        ("preset_cnn_medium", |r, s, o| {
            network_case(NetworkSpec::preset("cnn_medium", 10)?, r, s, o, 2, NetLoss::SoftmaxCrossEntropy, true)
        }),
        ("preset_cnn_wide", |r, s, o| {
            network_case(NetworkSpec::preset("cnn_wide", 10)?, r, s, o, 2, NetLoss::SoftmaxCrossEntropy, true)
        }),
        ("generator", |r, s, o| {
            network_case(NetworkSpec::generator(8, &[16, 32]), r, s, o, 3, NetLoss::WeightedOutput, false)
        }),
        ("discriminator", |r, s, o| {
            network_case(NetworkSpec::discriminator(&[16, 32]), r, s, o, 3, NetLoss::WeightedOutput, true)
        }),
    ]
}

/// Names of all cases, in run order.
pub fn gradcheck_case_names() -> Vec<&'static str> {
    cases().into_iter().map(|(n, _)| n).collect()
}

/// Runs every case over `opts.seeds` seeds.
pub fn gradcheck_suite(opts: &GradCheckOptions) -> Result<Vec<GradCheckRecord>> {
    cases()
        .into_iter()
        .map(|(name, case)| {
            let mut total = Comparison::default();
            for s in 0..opts.seeds {
                let seed = derive_seed(opts.seed, &[name_tag(name), s as u64]);
                let mut rng = rng_from_seed(seed);
                let mut inst = case(&mut rng, derive_seed(seed, &[1]), opts)?;
                let c = compare(&mut inst.state, &mut inst.eval, opts.step, inst.per_tensor, &mut rng)?;
                total.worst = total.worst.max(c.worst);
                total.checked += c.checked;
                total.skipped += c.skipped;
            }
            Ok(GradCheckRecord {
                name: name.to_string(),
                seeds: opts.seeds,
                coordinates: total.checked,
                skipped_at_kinks: total.skipped,
                max_relative_error: total.worst,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_few_seeds_pass() {
        let opts = GradCheckOptions {
            seeds: 2,
            network_coordinates: 3,
            ..Default::default()
        };
        for rec in gradcheck_suite(&opts).unwrap() {
            assert!(rec.passed(), "{rec:?}");
            assert!(rec.coordinates > 0);
        }
    }

    #[test]
    fn a_wrong_gradient_is_detected() {
        let mut state = vec![Tensor::from_f64(&[2], &[0.3, -0.7]).unwrap()];
        let mut eval: Eval<'_> = Box::new(|s: &[Tensor<f64>], _| {
            let x = s[0].data();
            Ok(Evaluated {
                value: x[0] * x[0] + x[1],
                signature: 0,
                grads: vec![vec![x[0], 1.0]],
            })
        });
        let c = compare(&mut state, &mut eval, 1e-5, None, &mut rng_from_seed(0)).unwrap();
        assert_eq!((c.checked, c.skipped), (2, 0));
        assert!(c.worst > 0.4);
    }

    #[test]
    fn kink_crossings_are_skipped() {
        let mut state = vec![Tensor::from_f64(&[2], &[1e-6, 0.5]).unwrap()];
        let mut eval: Eval<'_> = Box::new(|s: &[Tensor<f64>], _| {
            let x = s[0].data();
            Ok(Evaluated {
                value: x[0].max(0.0) + x[1],
                signature: u64::from(x[0] > 0.0),
                grads: vec![vec![1.0, 1.0]],
            })
        });
        let c = compare(&mut state, &mut eval, 1e-5, None, &mut rng_from_seed(0)).unwrap();
        assert_eq!((c.checked, c.skipped), (1, 1));
        assert!(c.worst < 1e-8);
    }
}
