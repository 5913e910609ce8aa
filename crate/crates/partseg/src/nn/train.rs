//! Soft Dice loss, Adam, and the multi-path training routine.
//!
//! Each epoch visits the decoders in a fresh random permutation; decoder i
//! draws batches only from its own subset, and every update step touches
//! exactly the encoder parameters and decoder i's parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grid::{Image, Mask};
use crate::nn::graph::{OperatorGraph, Param};
use crate::nn::net::{batch_images, MultiPathNet};
use crate::nn::tensor::Tensor;

pub const SOFT_DICE_EPS: f64 = 1.0;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_epochs: 30,
            batch_size: 4,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("n_epochs and batch_size must be positive"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be positive"));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0 < b1 && b1 < 1.0 && 0.0 < b2 && b2 < 1.0) {
            return Err(Error::config("adam betas must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// 1 - (2*sum(p*r) + eps) / (sum(p) + sum(r) + eps), eps = 1.
pub fn soft_dice_loss(pred: &Image, reference: &Mask) -> Result<f64> {
    if !pred.same_shape(reference) {
        return Err(Error::shape("soft_dice_loss: dimension mismatch"));
    }
    let refs: Vec<f64> = reference.data().iter().map(|&v| v as f64).collect();
    Ok(soft_dice_flat(pred.data(), &refs).0)
}

/// Loss and gradient w.r.t. pred for flat slices.
pub fn soft_dice_flat(pred: &[f64], reference: &[f64]) -> (f64, Vec<f64>) {
    let inter: f64 = pred.iter().zip(reference).map(|(p, r)| p * r).sum();
    let psum: f64 = pred.iter().sum();
    let rsum: f64 = reference.iter().sum();
    let num = 2.0 * inter + SOFT_DICE_EPS;
    let den = psum + rsum + SOFT_DICE_EPS;
    let loss = 1.0 - num / den;
    let grad = pred
        .iter()
        .zip(reference)
        .map(|(_, r)| -(2.0 * r * den - num) / (den * den))
        .collect();
    (loss, grad)
}

/// Batch mean of per-sample soft Dice losses over a [B,1,H,W] prediction.
/// Returns the loss and dLoss/dPred.
pub fn batch_soft_dice(pred: &Tensor, refs: &[&Mask]) -> Result<(f64, Tensor)> {
    if pred.n != refs.len() {
        return Err(Error::shape("batch_soft_dice: batch size mismatch"));
    }
    let plane = pred.h * pred.w;
    let mut grad = Tensor::zeros(pred.n, 1, pred.h, pred.w);
    let mut total = 0.0;
    let scale = 1.0 / pred.n as f64;
    for (n, r) in refs.iter().enumerate() {
        if r.h() != pred.h || r.w() != pred.w {
            return Err(Error::shape("batch_soft_dice: mask shape mismatch"));
        }
        let rflat: Vec<f64> = r.data().iter().map(|&v| v as f64).collect();
        let (loss, g) = soft_dice_flat(&pred.data[n * plane..(n + 1) * plane], &rflat);
        total += loss * scale;
        for (dst, src) in grad.data[n * plane..(n + 1) * plane].iter_mut().zip(g) {
            *dst = src * scale;
        }
    }
    Ok((total, grad))
}

/// Per-parameter Adam state.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn for_params(params: &[Param]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Param], lr: f64, betas: (f64, f64)) {
        self.t += 1;
        let (b1, b2) = betas;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            for j in 0..p.data.len() {
                let g = p.grad[j];
                self.m[i][j] = b1 * self.m[i][j] + (1.0 - b1) * g;
                self.v[i][j] = b2 * self.v[i][j] + (1.0 - b2) * g * g;
                let mhat = self.m[i][j] / bc1;
                let vhat = self.v[i][j] / bc2;
                p.data[j] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Stable hash of a graph's parameter bytes, for update-scope assertions.
pub fn params_hash(g: &OperatorGraph) -> u64 {
    let mut bytes = Vec::new();
    for p in &g.params {
        for v in &p.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    crate::util::fnv1a64(&bytes)
}

pub struct Trainer {
    enc_state: AdamState,
    dec_states: Vec<AdamState>,
    rng: ChaCha8Rng,
    cfg: TrainConfig,
}

impl Trainer {
    pub fn new(net: &MultiPathNet, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            enc_state: AdamState::for_params(&net.encoder.params),
            dec_states: net
                .decoders
                .iter()
                .map(|d| AdamState::for_params(&d.params))
                .collect(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
        })
    }

    /// One optimization step for decoder `i` on a batch; returns the loss.
    /// Updates exactly the encoder and decoder i.
    pub fn step(
        &mut self,
        net: &mut MultiPathNet,
        i: usize,
        images: &[&Image],
        refs: &[&Mask],
    ) -> Result<f64> {
        let x = batch_images(images)?;
        let enc_acts = net.encoder.forward(&[&x])?;
        let skip = enc_acts.0[net.encoder.outputs[0]].clone();
        let feat = enc_acts.0[net.encoder.outputs[1]].clone();
        let dec = &mut net.decoders[i];
        let dec_acts = dec.forward(&[&feat, &skip])?;
        let pred = &dec_acts.0[dec.outputs[0]];
        let (loss, grad) = batch_soft_dice(pred, refs)?;

        net.encoder.zero_grads();
        dec.zero_grads();
        let input_grads = dec.backward(&dec_acts, &[grad])?;
        // Decoder input order is [features, skip]; encoder outputs [skip, features].
        net.encoder
            .backward(&enc_acts, &[input_grads[1].clone(), input_grads[0].clone()])?;

        self.enc_state.step(
            &mut net.encoder.params,
            self.cfg.learning_rate,
            self.cfg.adam_betas,
        );
        self.dec_states[i].step(
            &mut net.decoders[i].params,
            self.cfg.learning_rate,
            self.cfg.adam_betas,
        );
        Ok(loss)
    }

    /// One full epoch: decoders in a fresh random permutation, each drawing
    /// seeded-shuffled batches from its own subset only (short tail kept).
    pub fn epoch(
        &mut self,
        net: &mut MultiPathNet,
        train_set: &Dataset,
        partition: &[Vec<usize>],
    ) -> Result<f64> {
        let mut order: Vec<usize> = (0..net.alpha).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for &i in &order {
            let mut idxs = partition[i].clone();
            idxs.shuffle(&mut self.rng);
            for chunk in idxs.chunks(self.cfg.batch_size) {
                let images: Vec<&Image> =
                    chunk.iter().map(|&j| &train_set.scans[j].image).collect();
                let refs: Vec<&Mask> = chunk
                    .iter()
                    .map(|&j| &train_set.scans[j].reference_mask)
                    .collect();
                total += self.step(net, i, &images, &refs)?;
                steps += 1;
            }
        }
        Ok(total / steps.max(1) as f64)
    }
}

/// Algorithm-style training over a partition of the training set.
///
/// `partition[i]` holds scan indices for decoder i+1; every subset must be
/// nonempty. Returns the mean training loss per epoch.
pub fn train(
    net: &mut MultiPathNet,
    train_set: &Dataset,
    partition: &[Vec<usize>],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if partition.len() != net.alpha {
        return Err(Error::config(format!(
            "partition has {} subsets for alpha {}",
            partition.len(),
            net.alpha
        )));
    }
    for (i, subset) in partition.iter().enumerate() {
        if subset.is_empty() {
            return Err(Error::config(format!("subset {} is empty", i + 1)));
        }
        if let Some(&bad) = subset.iter().find(|&&j| j >= train_set.len()) {
            return Err(Error::config(format!("scan index {} out of range", bad)));
        }
    }
    let mut trainer = Trainer::new(net, cfg.clone())?;
    let mut losses = Vec::with_capacity(cfg.n_epochs);
    for _ in 0..cfg.n_epochs {
        losses.push(trainer.epoch(net, train_set, partition)?);
    }
    Ok(losses)
}
