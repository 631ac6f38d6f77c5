//! Backpropagation versus central finite differences in `f64`.

use rand::Rng;

use super::loss::{cross_entropy_loss, l2_loss};
use super::quant::{GROUPS, NUM_BINS};
use super::spec::{homography_net, Head, LayerSpec, NetworkSpec, Scale};
use super::{Mode, Network, Result, Tensor};
use crate::rng::{stream_rng, streams, Rng64};

/// Per-layer threshold on the maximum relative error.
pub const LAYER_THRESHOLD: f64 = 1e-4;
/// Threshold for the end-to-end desk network check.
pub const NETWORK_THRESHOLD: f64 = 1e-3;

const STEP: f64 = 1e-5;
/// Denominator floor so entries whose true gradient is ~0 are judged by
/// absolute error.
const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    /// Gradient entries compared.
    pub checked: usize,
    /// Entries skipped because every step size crossed a ReLU or max pool
    /// kink.
    pub skipped: usize,
    pub threshold: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.threshold
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

type LossFn<'a> = dyn Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)> + 'a;

struct Harness<'a> {
    net: Network<f64>,
    x: Tensor<f64>,
    end: usize,
    loss: &'a LossFn<'a>,
    dropout_seed: u64,
}

impl Harness<'_> {
    fn eval(&mut self) -> Result<(f64, u64)> {
        // The same dropout mask on every evaluation.
        let mut rng = stream_rng(self.dropout_seed, streams::DROPOUT, 0);
        let trace = self.net.forward_to(&self.x, Mode::Train, &mut rng, self.end)?;
        let (l, _) = (self.loss)(&trace.output())?;
        Ok((l, trace.kink_signature(self.net.spec())))
    }

    fn analytic(&mut self) -> Result<(Vec<Vec<f64>>, Vec<f64>, u64)> {
        let mut rng = stream_rng(self.dropout_seed, streams::DROPOUT, 0);
        let trace = self.net.forward_to(&self.x, Mode::Train, &mut rng, self.end)?;
        let (_, g) = (self.loss)(&trace.output())?;
        let (grads, dx) = self.net.backward(&trace, &g, true)?;
        Ok((grads, dx.expect("requested"), trace.kink_signature(self.net.spec())))
    }

    /// Central difference for one entry, shrinking the step while the
    /// perturbation crosses a kink. `None` when no step size is clean.
    fn numeric(&mut self, tensor: Option<usize>, k: usize, base_sig: u64) -> Result<Option<f64>> {
        let mut h = STEP;
        for _ in 0..4 {
            let orig = self.get(tensor, k);
            self.set(tensor, k, orig + h);
            let (lp, sp) = self.eval()?;
            self.set(tensor, k, orig - h);
            let (lm, sm) = self.eval()?;
            self.set(tensor, k, orig);
            if sp == base_sig && sm == base_sig {
                return Ok(Some((lp - lm) / (2.0 * h)));
            }
            h /= 10.0;
        }
        Ok(None)
    }

    fn get(&self, tensor: Option<usize>, k: usize) -> f64 {
        match tensor {
            Some(t) => self.net.params()[t][k],
            None => self.x.data()[k],
        }
    }

    fn set(&mut self, tensor: Option<usize>, k: usize, v: f64) {
        match tensor {
            Some(t) => self.net.params_mut()[t][k] = v,
            None => self.x.data_mut()[k] = v,
        }
    }
}

/// Compares every parameter gradient (or `per_tensor` sampled entries of
/// each) and, optionally, the input gradient.
fn run_check(
    name: &str,
    mut h: Harness<'_>,
    per_tensor: Option<usize>,
    check_input: bool,
    threshold: f64,
    rng: &mut Rng64,
) -> Result<CheckResult> {
    let (grads, dx, sig) = h.analytic()?;
    let mut targets: Vec<(Option<usize>, usize, f64)> = Vec::new();
    let mut pick = |t: Option<usize>, g: &[f64], rng: &mut Rng64| match per_tensor {
        Some(m) if m < g.len() => {
            for _ in 0..m {
                let k = rng.random_range(0..g.len());
                targets.push((t, k, g[k]));
            }
        }
        _ => targets.extend(g.iter().enumerate().map(|(k, &v)| (t, k, v))),
    };
    for (t, g) in grads.iter().enumerate() {
        pick(Some(t), g, rng);
    }
    if check_input {
        pick(None, &dx, rng);
    }
    let mut result = CheckResult {
        name: name.to_string(),
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        threshold,
    };
    for (t, k, a) in targets {
        match h.numeric(t, k, sig)? {
            Some(n) => {
                result.max_rel_error = result.max_rel_error.max(relative_error(a, n));
                result.checked += 1;
            }
            None => result.skipped += 1,
        }
    }
    Ok(result)
}

fn random_tensor(shape: Vec<usize>, rng: &mut Rng64) -> Tensor<f64> {
    let n = shape.iter().product();
    // Keep values away from zero so ReLU kinks are rare.
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("sized")
}

/// Checks one layer inside a single-layer network, batch 2, with the loss
/// `sum(r * y)` for a fixed random `r`.
pub fn check_layer(name: &str, input: Vec<usize>, layer: LayerSpec, seed: u64) -> Result<CheckResult> {
    let mut rng = stream_rng(seed, streams::INIT, 99);
    let spec = NetworkSpec {
        input: input.clone(),
        layers: vec![layer],
        head: None,
    };
    let mut net = Network::<f64>::new(spec, seed)?;
    // Non-trivial affine batchnorm parameters.
    for p in net.params_mut() {
        if p.iter().all(|&v| v == 1.0 || v == 0.0) {
            p.iter_mut().for_each(|v| *v = rng.random_range(-1.5..1.5));
        }
    }
    let mut shape = input;
    shape.insert(0, 2);
    let x = random_tensor(shape, &mut rng);
    let out_shape = net.spec().output_shape(2)?;
    let r = random_tensor(out_shape, &mut rng);
    let loss = move |y: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> {
        let l = y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        Ok((l, r.clone()))
    };
    let end = net.spec().layers.len();
    let h = Harness {
        net,
        x,
        end,
        loss: &loss,
        dropout_seed: seed,
    };
    run_check(name, h, None, true, LAYER_THRESHOLD, &mut rng)
}

/// One check per layer type plus both losses.
pub fn check_all_layers(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = vec![
        check_layer("conv3x3", vec![2, 4, 5], LayerSpec::Conv3x3 { in_ch: 2, out_ch: 3 }, seed)?,
        check_layer("batchnorm", vec![3, 3, 2], LayerSpec::BatchNorm { ch: 3 }, seed)?,
        check_layer("relu", vec![12], LayerSpec::ReLU, seed)?,
        check_layer("maxpool2x2", vec![2, 4, 4], LayerSpec::MaxPool2x2, seed)?,
        check_layer("flatten", vec![2, 2, 3], LayerSpec::Flatten, seed)?,
        check_layer(
            "fully_connected",
            vec![6],
            LayerSpec::FullyConnected { inputs: 6, outputs: 4 },
            seed,
        )?,
        check_layer("dropout", vec![12], LayerSpec::Dropout { p: 0.5 }, seed)?,
        check_layer("group_softmax", vec![12], LayerSpec::GroupSoftmax { groups: 3, bins: 4 }, seed)?,
    ];
    out.push(check_losses(seed)?);
    Ok(out)
}

fn check_losses(seed: u64) -> Result<CheckResult> {
    let mut rng = stream_rng(seed, streams::INIT, 98);
    let mut worst = CheckResult {
        name: "losses".into(),
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        threshold: LAYER_THRESHOLD,
    };
    let labels: Vec<[f64; GROUPS]> = (0..2).map(|_| std::array::from_fn(|_| rng.random_range(-8.0..8.0))).collect();
    let bins: Vec<[usize; GROUPS]> = (0..2).map(|_| std::array::from_fn(|_| rng.random_range(0..NUM_BINS))).collect();
    let l2 = |y: &Tensor<f64>| l2_loss(y, &labels);
    let ce = |y: &Tensor<f64>| cross_entropy_loss(y, &bins);
    let cases: [(&LossFn<'_>, usize); 2] = [(&l2, GROUPS), (&ce, GROUPS * NUM_BINS)];
    for (f, width) in cases {
        let y = random_tensor(vec![2, width], &mut rng);
        let (_, g) = f(&y)?;
        for k in 0..y.len() {
            let mut p = y.clone();
            p.data_mut()[k] += STEP;
            let mut m = y.clone();
            m.data_mut()[k] -= STEP;
            let n = (f(&p)?.0 - f(&m)?.0) / (2.0 * STEP);
            worst.max_rel_error = worst.max_rel_error.max(relative_error(g.data()[k], n));
            worst.checked += 1;
        }
    }
    Ok(worst)
}

/// End-to-end check of the desk-scale architecture with dropout enabled
/// (batch 2, train mode) through its training loss, sampling `per_tensor`
/// entries of every parameter.
pub fn check_desk_network(head: Head, per_tensor: usize, seed: u64) -> Result<CheckResult> {
    let mut scale = Scale::Desk.config();
    scale.dropout = 0.5;
    let spec = homography_net(head, &Scale::Custom(scale))?;
    let mut net = Network::<f32>::new(spec, seed)?.cast::<f64>();
    let mut rng = stream_rng(seed, streams::INIT, 97);
    // The output layer starts at zero; randomize it so every earlier
    // parameter receives a non-trivial gradient.
    let mut params = net.params_mut();
    let n = params.len();
    for p in params[n - 2..].iter_mut() {
        p.iter_mut().for_each(|w| *w = rng.random_range(-0.2..0.2));
    }
    let side = net.spec().input_side().expect("square input");
    let x = Tensor::new(
        vec![2, 2, side, side],
        (0..2 * 2 * side * side).map(|_| rng.random_range(-0.5..0.5)).collect(),
    )?;
    let end = net.spec().logits_end();
    let name;
    let labels: Vec<[f64; GROUPS]> = (0..2).map(|_| std::array::from_fn(|_| rng.random_range(-8.0..8.0))).collect();
    let bins: Vec<[usize; GROUPS]> = (0..2).map(|_| std::array::from_fn(|_| rng.random_range(0..NUM_BINS))).collect();
    let l2 = |y: &Tensor<f64>| l2_loss(y, &labels);
    let ce = |y: &Tensor<f64>| cross_entropy_loss(y, &bins);
    let loss: &LossFn<'_> = match head {
        Head::Regression => {
            name = "desk_regression_network";
            &l2
        }
        Head::Classification { .. } => {
            name = "desk_classification_network";
            &ce
        }
    };
    let h = Harness {
        net,
        x,
        end,
        loss,
        dropout_seed: seed,
    };
    run_check(name, h, Some(per_tensor), true, NETWORK_THRESHOLD, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes() {
        for r in check_all_layers(1).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn a_broken_gradient_is_caught() {
        // Scaling the loss gradient by 1.01 must show up as a 1e-2 error.
        let mut rng = stream_rng(0, 0, 0);
        let spec = NetworkSpec {
            input: vec![4],
            layers: vec![LayerSpec::FullyConnected { inputs: 4, outputs: 3 }],
            head: None,
        };
        let net = Network::<f64>::new(spec, 0).unwrap();
        let x = random_tensor(vec![2, 4], &mut rng);
        let loss = |y: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> {
            let l = y.data().iter().map(|v| v * v).sum::<f64>() / 2.0;
            Ok((l, y.map(|v| v * 1.01)))
        };
        let h = Harness {
            net,
            x,
            end: 1,
            loss: &loss,
            dropout_seed: 0,
        };
        let r = run_check("broken", h, None, true, LAYER_THRESHOLD, &mut rng).unwrap();
        assert!(!r.passed());
        assert!(r.max_rel_error > 5e-3);
    }
}
