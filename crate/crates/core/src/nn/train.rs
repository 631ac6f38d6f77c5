//! Mini-batch SGD with classical momentum and step learning-rate decay.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::loss::{cross_entropy_loss, l2_loss};
use super::predict::pair_tensor_u8;
use super::quant::{encode_label, GROUPS};
use super::{Head, LayerSpec, Mode, Network, NnError, Result, Tensor};
use crate::datagen::PairSet;
use crate::geometry::FourPointDelta;
use crate::rng::{stream_rng, streams};

pub const LATEST_CHECKPOINT: &str = "latest.hnet";
pub const FINAL_CHECKPOINT: &str = "final.hnet";
pub const LOSS_CURVE: &str = "loss.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    /// Multiplier applied every `decay_every` iterations.
    pub lr_decay: f64,
    pub decay_every: u64,
    pub total_iters: u64,
    pub batch: usize,
    /// Drop probability expected on every dropout layer of the network.
    pub dropout_p: f64,
    pub seed: u64,
    /// Save `latest.hnet` every this many iterations; 0 disables.
    pub checkpoint_every: u64,
}

impl TrainConfig {
    /// The full-scale recipe: 90k iterations, decay x0.1 every 30k.
    pub fn full(seed: u64) -> Self {
        Self {
            lr0: 0.005,
            momentum: 0.9,
            lr_decay: 0.1,
            decay_every: 30_000,
            total_iters: 90_000,
            batch: 64,
            dropout_p: 0.5,
            seed,
            checkpoint_every: 5_000,
        }
    }

    /// 5000 iterations for the desk-scale regression network: lr 0.001, one
    /// decay at 4000, no dropout.
    pub fn desk(seed: u64) -> Self {
        Self {
            lr0: 0.001,
            decay_every: 4_000,
            total_iters: 5_000,
            dropout_p: 0.0,
            checkpoint_every: 1_000,
            ..Self::full(seed)
        }
    }

    /// The desk recipe for `head`. Cross-entropy gradients are several times
    /// smaller than pixel-unit L2 gradients, so classification uses lr 0.005.
    pub fn desk_for(head: Head, seed: u64) -> Self {
        match head {
            Head::Regression => Self::desk(seed),
            Head::Classification { .. } => Self {
                lr0: 0.005,
                ..Self::desk(seed)
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr0 > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.lr_decay > 0.0
            && self.decay_every > 0
            && self.batch >= 1
            && (0.0..1.0).contains(&self.dropout_p);
        if ok {
            Ok(())
        } else {
            Err(NnError::InvalidConfig(format!("{self:?}")))
        }
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        self.lr0 * self.lr_decay.powi((iteration / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Means of consecutive blocks of `window` losses (the last partial block
/// is dropped).
pub fn smoothed(curve: &[LossPoint], window: usize) -> Vec<f64> {
    curve
        .chunks_exact(window.max(1))
        .map(|c| c.iter().map(|p| p.loss).sum::<f64>() / c.len() as f64)
        .collect()
}

pub fn write_curve(path: &Path, curve: &[LossPoint]) -> Result<()> {
    let mut s = String::from("iteration,lr,loss\n");
    for p in curve {
        writeln!(s, "{},{},{}", p.iteration, p.lr, p.loss).expect("string write");
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<Vec<LossPoint>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || NnError::InvalidConfig(format!("bad loss curve line: {l}"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(LossPoint {
                iteration: f[0].parse().map_err(|_| bad())?,
                lr: f[1].parse().map_err(|_| bad())?,
                loss: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Network with optimizer state.
pub struct Trainer {
    pub net: Network<f32>,
    pub velocity: Vec<Vec<f32>>,
    /// Number of completed steps.
    pub iteration: u64,
    pub cfg: TrainConfig,
    perms: HashMap<u64, Vec<usize>>,
}

impl Trainer {
    pub fn new(net: Network<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        for l in &net.spec().layers {
            if let LayerSpec::Dropout { p } = l {
                if *p != cfg.dropout_p {
                    return Err(NnError::InvalidConfig(format!(
                        "network dropout {p} differs from configured {}",
                        cfg.dropout_p
                    )));
                }
            }
        }
        if net.spec().head.is_none() || net.spec().input_side().is_none() {
            return Err(NnError::InvalidSpec("training needs a HomographyNet".into()));
        }
        let velocity = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Ok(Self {
            net,
            velocity,
            iteration: 0,
            cfg,
            perms: HashMap::new(),
        })
    }

    /// Continues from a checkpoint; missing optimizer state starts at zero.
    pub fn resume(ck: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let mut t = Self::new(ck.net, cfg)?;
        t.iteration = ck.iteration;
        if let Some(v) = ck.velocity {
            t.velocity = v;
        }
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            net: self.net.clone(),
            iteration: self.iteration,
            velocity: Some(self.velocity.clone()),
        }
    }

    /// Dataset indices of the batch for `iteration`. Sample position
    /// `iteration * batch + j` walks through a fresh seeded permutation per
    /// epoch, so the schedule does not depend on where a run was resumed.
    pub fn batch_indices(&mut self, iteration: u64, n: usize) -> Vec<usize> {
        let b = self.cfg.batch as u64;
        let seed = self.cfg.seed;
        (0..b)
            .map(|j| {
                let pos = iteration * b + j;
                let epoch = pos / n as u64;
                let perm = self.perms.entry(epoch).or_insert_with(|| {
                    let mut p: Vec<usize> = (0..n).collect();
                    p.shuffle(&mut stream_rng(seed, streams::SHUFFLE, epoch));
                    p
                });
                perm[(pos % n as u64) as usize]
            })
            .collect()
    }

    /// One SGD step on the next batch; returns the batch loss.
    pub fn step(&mut self, data: &PairSet) -> Result<f64> {
        let side = self.net.spec().input_side().expect("checked in new");
        if data.patch_size != side {
            return Err(NnError::ShapeMismatch(format!(
                "dataset patches are {}px, network input is {side}px",
                data.patch_size
            )));
        }
        if data.is_empty() {
            return Err(NnError::InvalidConfig("empty training set".into()));
        }
        let it = self.iteration;
        let lr = self.cfg.lr_at(it);
        let idx = self.batch_indices(it, data.len());
        self.perms.retain(|&e, _| e + 1 >= (it * self.cfg.batch as u64) / data.len() as u64);
        let pairs: Vec<(&[u8], &[u8])> = idx
            .iter()
            .map(|&i| (data.records[i].a.as_slice(), data.records[i].b.as_slice()))
            .collect();
        let x = pair_tensor_u8::<f32>(&pairs, side)?;
        let mut rng = stream_rng(self.cfg.seed, streams::DROPOUT, it);
        let end = self.net.spec().logits_end();
        let trace = self.net.forward_to(&x, Mode::Train, &mut rng, end)?;
        let out = trace.output();
        let (loss, grad) = self.loss(&out, data, &idx)?;
        if !loss.is_finite() {
            return Err(NnError::NonFiniteLoss { iteration: it, lr });
        }
        let (grads, _) = self.net.backward(&trace, &grad, false)?;
        apply_momentum(&mut self.net, &mut self.velocity, &grads, lr as f32, self.cfg.momentum as f32);
        self.iteration += 1;
        Ok(loss)
    }

    fn loss(&self, out: &Tensor<f32>, data: &PairSet, idx: &[usize]) -> Result<(f64, Tensor<f32>)> {
        match self.net.spec().head.expect("checked in new") {
            Head::Regression => {
                let labels: Vec<[f64; GROUPS]> = idx.iter().map(|&i| data.records[i].label.map(f64::from)).collect();
                l2_loss(out, &labels)
            }
            Head::Classification { rho } => {
                let bins = idx
                    .iter()
                    .map(|&i| encode_label(&FourPointDelta::new(data.records[i].label.map(f64::from)), rho))
                    .collect::<Result<Vec<_>>>()?;
                cross_entropy_loss(out, &bins)
            }
        }
    }

    /// Trains until `cfg.total_iters`. With an output directory, writes
    /// periodic `latest.hnet`, the final checkpoint and the loss curve.
    pub fn run(&mut self, data: &PairSet, out_dir: Option<&Path>) -> Result<Vec<LossPoint>> {
        let mut curve = Vec::new();
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            let prior = dir.join(LOSS_CURVE);
            if self.iteration > 0 && prior.exists() {
                curve = read_curve(&prior)?;
                curve.retain(|p| p.iteration < self.iteration);
            }
        }
        let log_every = (self.cfg.total_iters / 50).max(1);
        while self.iteration < self.cfg.total_iters {
            let it = self.iteration;
            let lr = self.cfg.lr_at(it);
            let loss = self.step(data)?;
            curve.push(LossPoint { iteration: it, lr, loss });
            if (it + 1).is_multiple_of(log_every) {
                log::info!("iteration {} lr {lr:.2e} loss {loss:.4}", it + 1);
            }
            if let Some(dir) = out_dir {
                let k = self.cfg.checkpoint_every;
                if k > 0 && self.iteration.is_multiple_of(k) {
                    self.checkpoint().save(&dir.join(LATEST_CHECKPOINT))?;
                    write_curve(&dir.join(LOSS_CURVE), &curve)?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.checkpoint().save(&dir.join(FINAL_CHECKPOINT))?;
            write_curve(&dir.join(LOSS_CURVE), &curve)?;
        }
        Ok(curve)
    }
}

/// `v <- mu v - lr g; w <- w + v`.
pub fn apply_momentum(net: &mut Network<f32>, velocity: &mut [Vec<f32>], grads: &[Vec<f32>], lr: f32, mu: f32) {
    for ((w, v), g) in net.params_mut().into_iter().zip(velocity.iter_mut()).zip(grads) {
        for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = mu * *vi - lr * gi;
            *wi += *vi;
        }
    }
}
