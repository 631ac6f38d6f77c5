//! Sequential network: parameters, forward and backward passes.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;

use super::layers::{self, BatchStats, BnCache, BnParams, Dims};
use super::spec::{LayerSpec, NetworkSpec};
use super::{NnError, Result, Scalar, Tensor};
use crate::rng::{stream_rng, streams, Rng64};

/// Parameter gradients in [`Network::params`] order, plus the input
/// gradient when requested.
pub type Gradients<T> = (Vec<Vec<T>>, Option<Vec<T>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and active dropout.
    Train,
    /// Running statistics, dropout disabled.
    Infer,
}

/// Learnable state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LayerState<T> {
    None,
    Conv { weight: Vec<T>, bias: Vec<T> },
    Fc { weight: Vec<T>, bias: Vec<T> },
    Bn {
        gamma: Vec<T>,
        beta: Vec<T>,
        running_mean: Vec<T>,
        running_var: Vec<T>,
    },
}

enum Cache<T> {
    None,
    Bn(BnCache<T>),
    Pool(Vec<u32>),
    Mask(Vec<T>),
}

/// Activations recorded by a forward pass, needed by `backward`.
pub struct Trace<T> {
    batch: usize,
    /// Per-sample shapes, input first.
    shapes: Vec<Vec<usize>>,
    acts: Vec<Vec<T>>,
    caches: Vec<Cache<T>>,
}

impl<T: Scalar> Trace<T> {
    /// Output of the last layer that ran.
    pub fn output(&self) -> Tensor<T> {
        let mut shape = self.shapes.last().expect("non-empty").clone();
        shape.insert(0, self.batch);
        Tensor::new(shape, self.acts.last().expect("non-empty").clone()).expect("consistent trace")
    }

    /// Number of layers that ran.
    pub fn depth(&self) -> usize {
        self.caches.len()
    }

    /// Hash of every non-differentiable branch taken: ReLU signs and max
    /// pool winners. Finite differences are only valid while it is stable.
    pub fn kink_signature(&self, spec: &NetworkSpec) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, layer) in spec.layers.iter().take(self.depth()).enumerate() {
            match layer {
                LayerSpec::ReLU => {
                    for v in &self.acts[i] {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                LayerSpec::MaxPool2x2 => {
                    if let Cache::Pool(arg) = &self.caches[i] {
                        arg.hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }
}

/// A network built from a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    state: Vec<LayerState<T>>,
}

fn dims(batch: usize, shape: &[usize]) -> Dims {
    match *shape {
        [c, h, w] => Dims { n: batch, c, h, w },
        [c] => Dims { n: batch, c, h: 1, w: 1 },
        _ => unreachable!("validated shape"),
    }
}

impl<T: Scalar> Network<T> {
    /// Fan-in scaled uniform weights (`U(-b, b)`, `b = sqrt(6 / fan_in)`),
    /// zero biases, unit batchnorm scale. Depends only on `seed`.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream_rng(seed, streams::INIT, 0);
        let uniform = |n: usize, fan_in: usize, rng: &mut Rng64| -> Vec<T> {
            let b = (6.0 / fan_in as f64).sqrt();
            (0..n).map(|_| T::of(rng.random_range(-b..b))).collect()
        };
        // The output layer of a headed network starts at zero, so early
        // gradients reaching the features are driven by the data rather than
        // by a random projection of the loss.
        let output_layer = spec
            .head
            .and_then(|_| spec.layers.iter().rposition(|l| matches!(l, LayerSpec::FullyConnected { .. })));
        let state = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| match *l {
                LayerSpec::Conv3x3 { in_ch, out_ch } => LayerState::Conv {
                    weight: uniform(out_ch * in_ch * 9, in_ch * 9, &mut rng),
                    bias: vec![T::zero(); out_ch],
                },
                LayerSpec::FullyConnected { inputs, outputs } if Some(i) == output_layer => LayerState::Fc {
                    weight: vec![T::zero(); outputs * inputs],
                    bias: vec![T::zero(); outputs],
                },
                LayerSpec::FullyConnected { inputs, outputs } => LayerState::Fc {
                    weight: uniform(outputs * inputs, inputs, &mut rng),
                    bias: vec![T::zero(); outputs],
                },
                LayerSpec::BatchNorm { ch } => LayerState::Bn {
                    gamma: vec![T::one(); ch],
                    beta: vec![T::zero(); ch],
                    running_mean: vec![T::zero(); ch],
                    running_var: vec![T::one(); ch],
                },
                _ => LayerState::None,
            })
            .collect();
        Ok(Self { spec, state })
    }

    pub(crate) fn from_parts(spec: NetworkSpec, state: Vec<LayerState<T>>) -> Self {
        Self { spec, state }
    }

    pub(crate) fn state(&self) -> &[LayerState<T>] {
        &self.state
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Learnable tensors in a fixed order (weight then bias, or gamma then
    /// beta, layer by layer). Gradients use the same order.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for s in &self.state {
            match s {
                LayerState::Conv { weight, bias } | LayerState::Fc { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                LayerState::Bn { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                LayerState::None => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for s in &mut self.state {
            match s {
                LayerState::Conv { weight, bias } | LayerState::Fc { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                LayerState::Bn { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                LayerState::None => {}
            }
        }
        out
    }

    /// Layer index owning each entry of [`Network::params`].
    pub fn param_layers(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, s) in self.state.iter().enumerate() {
            if !matches!(s, LayerState::None) {
                out.extend([i, i]);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Converts every tensor to another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        let state = self
            .state
            .iter()
            .map(|s| match s {
                LayerState::None => LayerState::None,
                LayerState::Conv { weight, bias } => LayerState::Conv {
                    weight: c(weight),
                    bias: c(bias),
                },
                LayerState::Fc { weight, bias } => LayerState::Fc {
                    weight: c(weight),
                    bias: c(bias),
                },
                LayerState::Bn {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => LayerState::Bn {
                    gamma: c(gamma),
                    beta: c(beta),
                    running_mean: c(running_mean),
                    running_var: c(running_var),
                },
            })
            .collect();
        Network {
            spec: self.spec.clone(),
            state,
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.shape().len() < 2 || input.shape()[1..] != self.spec.input[..] || input.batch() == 0 {
            return Err(NnError::ShapeMismatch(format!(
                "network expects (N, {:?}), got {:?}",
                self.spec.input,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Runs all layers. Train mode updates batchnorm running statistics and
    /// draws dropout masks from `rng`.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode, rng: &mut Rng64) -> Result<Trace<T>> {
        let end = self.spec.layers.len();
        self.forward_to(input, mode, rng, end)
    }

    /// Runs the first `end` layers.
    pub fn forward_to(&mut self, input: &Tensor<T>, mode: Mode, rng: &mut Rng64, end: usize) -> Result<Trace<T>> {
        let (trace, stats) = self.run(input, mode, Some(rng), end)?;
        for (i, st) in stats {
            if let LayerState::Bn {
                running_mean,
                running_var,
                ..
            } = &mut self.state[i]
            {
                st.update(running_mean, running_var);
            }
        }
        Ok(trace)
    }

    /// Infer-mode forward through every layer. Thread-safe on a shared
    /// network.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.infer_to(input, self.spec.layers.len())
    }

    /// Infer-mode forward through the first `end` layers.
    pub fn infer_to(&self, input: &Tensor<T>, end: usize) -> Result<Tensor<T>> {
        Ok(self.run(input, Mode::Infer, None, end)?.0.output())
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        mut rng: Option<&mut Rng64>,
        end: usize,
    ) -> Result<(Trace<T>, Vec<(usize, BatchStats)>)> {
        self.check_input(input)?;
        let batch = input.batch();
        let shapes = self.spec.activation_shapes()?;
        let end = end.min(self.spec.layers.len());
        let mut acts = vec![input.data().to_vec()];
        let mut caches = Vec::with_capacity(end);
        let mut stats = Vec::new();
        for i in 0..end {
            let x = &acts[i];
            let d = dims(batch, &shapes[i]);
            let (y, cache) = match (&self.spec.layers[i], &self.state[i]) {
                (&LayerSpec::Conv3x3 { out_ch, .. }, LayerState::Conv { weight, bias }) => {
                    (layers::conv_forward(x, d, weight, bias, out_ch), Cache::None)
                }
                (&LayerSpec::FullyConnected { inputs, outputs }, LayerState::Fc { weight, bias }) => {
                    (layers::fc_forward(x, batch, inputs, weight, bias, outputs), Cache::None)
                }
                (
                    LayerSpec::BatchNorm { .. },
                    LayerState::Bn {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    },
                ) => {
                    let p = BnParams { gamma, beta };
                    match mode {
                        Mode::Train => {
                            let (y, c, st) = layers::bn_forward_train(x, d, p);
                            stats.push((i, st));
                            (y, Cache::Bn(c))
                        }
                        Mode::Infer => (layers::bn_forward_infer(x, d, p, running_mean, running_var), Cache::None),
                    }
                }
                (LayerSpec::ReLU, _) => (x.iter().map(|&v| if v < T::zero() { T::zero() } else { v }).collect(), Cache::None),
                (LayerSpec::MaxPool2x2, _) => {
                    let (y, arg) = layers::maxpool_forward(x, d);
                    (y, Cache::Pool(arg))
                }
                (LayerSpec::Flatten, _) => (x.clone(), Cache::None),
                (&LayerSpec::Dropout { p }, _) => match (mode, rng.as_deref_mut()) {
                    (Mode::Train, Some(r)) if p > 0.0 => {
                        let mask = layers::dropout_mask::<T>(x.len(), p, r);
                        (x.iter().zip(&mask).map(|(a, m)| *a * *m).collect(), Cache::Mask(mask))
                    }
                    _ => (x.clone(), Cache::None),
                },
                (&LayerSpec::GroupSoftmax { bins, .. }, _) => (layers::group_softmax(x, bins), Cache::None),
                (l, _) => unreachable!("layer {} has mismatched state", l.name()),
            };
            acts.push(y);
            caches.push(cache);
        }
        let trace = Trace {
            batch,
            shapes: shapes[..=end].to_vec(),
            acts,
            caches,
        };
        Ok((trace, stats))
    }

    /// Backpropagates `grad` (w.r.t. the trace output) to every parameter.
    /// Returns gradients in [`Network::params`] order and, if requested,
    /// the gradient w.r.t. the input.
    pub fn backward(&self, trace: &Trace<T>, grad: &Tensor<T>, need_input_grad: bool) -> Result<Gradients<T>> {
        let depth = trace.depth();
        if grad.len() != trace.acts[depth].len() {
            return Err(NnError::ShapeMismatch(format!(
                "gradient has {} values, output has {}",
                grad.len(),
                trace.acts[depth].len()
            )));
        }
        let batch = trace.batch;
        let mut per_layer: Vec<Option<(Vec<T>, Vec<T>)>> = vec![None; self.state.len()];
        let mut dy = grad.data().to_vec();
        for i in (0..depth).rev() {
            let x = &trace.acts[i];
            let y = &trace.acts[i + 1];
            let d = dims(batch, &trace.shapes[i]);
            let need_dx = i > 0 || need_input_grad;
            let dx: Vec<T> = match (&self.spec.layers[i], &self.state[i], &trace.caches[i]) {
                (&LayerSpec::Conv3x3 { out_ch, .. }, LayerState::Conv { weight, .. }, _) => {
                    let (dw, db, dx) = layers::conv_backward(x, d, weight, out_ch, &dy, need_dx);
                    per_layer[i] = Some((dw, db));
                    dx.unwrap_or_default()
                }
                (&LayerSpec::FullyConnected { inputs, outputs }, LayerState::Fc { weight, .. }, _) => {
                    let (dw, db, dx) = layers::fc_backward(x, batch, inputs, weight, outputs, &dy, need_dx);
                    per_layer[i] = Some((dw, db));
                    dx.unwrap_or_default()
                }
                (LayerSpec::BatchNorm { .. }, LayerState::Bn { gamma, .. }, Cache::Bn(c)) => {
                    let (dg, db, dx) = layers::bn_backward(c, d, gamma, &dy);
                    per_layer[i] = Some((dg, db));
                    dx
                }
                (LayerSpec::BatchNorm { .. }, _, _) => {
                    return Err(NnError::ShapeMismatch("backward needs a train-mode trace".into()));
                }
                (LayerSpec::ReLU, _, _) => dy
                    .iter()
                    .zip(y)
                    .map(|(&g, &o)| if o > T::zero() { g } else { T::zero() })
                    .collect(),
                (LayerSpec::MaxPool2x2, _, Cache::Pool(arg)) => layers::maxpool_backward(arg, x.len(), &dy),
                (LayerSpec::Dropout { .. }, _, Cache::Mask(m)) => dy.iter().zip(m).map(|(a, b)| *a * *b).collect(),
                (LayerSpec::Dropout { .. }, _, _) | (LayerSpec::Flatten, _, _) => dy,
                (&LayerSpec::GroupSoftmax { bins, .. }, _, _) => layers::group_softmax_backward(y, &dy, bins),
                (l, _, _) => unreachable!("layer {} has mismatched state", l.name()),
            };
            dy = dx;
        }
        let grads = per_layer
            .into_iter()
            .flatten()
            .flat_map(|(a, b)| [a, b])
            .collect();
        Ok((grads, need_input_grad.then_some(dy)))
    }
}
