//! Training with intermediate supervision: masked heatmap MSE on every stage,
//! Adam with linear learning-rate decay, replayable batching and a PCK probe.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::arch::Network;
use crate::codec::{decode, encode_targets, Affine, DecodeConfig, HeatmapStack, KeypointSet, TargetConfig};
use crate::data::{augment, crop_sample, epoch_order, sample_rng, AugmentConfig, Record};
use crate::graph::{Mode, ParamStore};
use crate::metrics::{pck_bbox, PckReport};
use crate::optim::{AdamConfig, AdamState};
use crate::{Error, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean squared error over the labeled joints' maps, summed over stages.
    MaskedMse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub base_lr: f64,
    pub final_lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Random rotation/scale/flip; plain crops otherwise.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            steps_per_epoch: 30,
            base_lr: 5e-4,
            final_lr: 0.0,
            weight_decay: 1e-5,
            batch: 8,
            seed: 0,
            loss: LossKind::MaskedMse,
            augment: true,
        }
    }
}

impl TrainConfig {
    /// Desk-scale schedule for fitting a small synthetic set on one CPU core:
    /// 1,200 steps of 8 plain crops with a 2e-3 starting rate.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 40,
            steps_per_epoch: 30,
            base_lr: 2e-3,
            augment: false,
            ..TrainConfig::default()
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= self.final_lr && self.final_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rates must satisfy base >= final >= 0, got {} and {}",
                self.base_lr, self.final_lr
            )));
        }
        if self.batch == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config("batch size and steps per epoch must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        Ok(())
    }
}

/// Linear decay from `base_lr` at step 0 to `final_lr` at `total`.
pub fn lr_at(step: usize, total: usize, cfg: &TrainConfig) -> f64 {
    if total == 0 {
        return cfg.base_lr;
    }
    let t = step.min(total) as f64 / total as f64;
    cfg.base_lr + (cfg.final_lr - cfg.base_lr) * t
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<S> {
    pub loss: f64,
    pub stage_losses: Vec<f64>,
    /// `dloss / dpred` for every stage.
    pub grads: Vec<Tensor<S>>,
    /// No joint in the batch was labeled; the loss is 0 by convention.
    pub fully_masked: bool,
}

/// Per stage, `sum_{n,k} mask[n,k] * sum_{h,w} (pred - target)^2 / (H * W * sum mask)`;
/// stages are summed with equal weights. `mask` has one entry per `(n, k)`.
pub fn heatmap_loss<S: Scalar>(preds: &[&Tensor<S>], target: &Tensor<S>, mask: &[S]) -> Result<LossOutput<S>> {
    let shape = target.shape();
    let (n, k, hw) = (shape.n, shape.c, shape.h * shape.w);
    if mask.len() != n * k {
        return Err(Error::DimMismatch {
            op: "heatmap loss",
            dim: "mask length",
            expected: n * k,
            actual: mask.len(),
        });
    }
    let labeled: f64 = mask.iter().map(|m| m.to_f64()).sum();
    let fully_masked = labeled == 0.0;
    let denom = S::from_f64(if fully_masked { 1.0 } else { labeled * hw as f64 });
    let mut out = LossOutput {
        loss: 0.0,
        stage_losses: Vec::with_capacity(preds.len()),
        grads: Vec::with_capacity(preds.len()),
        fully_masked,
    };
    let two = S::from_f64(2.0);
    for p in preds {
        if p.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "heatmap loss",
                lhs: p.shape(),
                rhs: shape,
            });
        }
        let mut grad = vec![S::ZERO; p.numel()];
        let mut sum = S::ZERO;
        for (m_i, &m) in mask.iter().enumerate() {
            if m == S::ZERO {
                continue;
            }
            let range = m_i * hw..(m_i + 1) * hw;
            for ((g, &a), &b) in grad[range.clone()].iter_mut().zip(&p.data()[range.clone()]).zip(&target.data()[range]) {
                let d = a - b;
                sum += m * d * d;
                *g = two * m * d / denom;
            }
        }
        let l = (sum / denom).to_f64();
        out.loss += l;
        out.stage_losses.push(l);
        out.grads.push(Tensor::new(shape, grad)?);
    }
    Ok(out)
}

/// Network input, per-stage target and mask for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    pub mask: Vec<f32>,
    pub indices: Vec<usize>,
}

/// Crops (and optionally augments) `records[indices]` and encodes their targets.
/// Sample `i` of the batch draws from `sample_rng(seed, epoch, indices[i])`.
pub fn make_batch(
    records: &[Record],
    indices: &[usize],
    epoch: u64,
    seed: u64,
    aug: &AugmentConfig,
    augment_on: bool,
    heatmap: (usize, usize),
) -> Result<Batch> {
    let mut images = Vec::with_capacity(indices.len());
    let mut targets = Vec::with_capacity(indices.len());
    let mut mask = Vec::new();
    for &i in indices {
        let rec = records
            .get(i)
            .ok_or_else(|| Error::invalid("batch", format!("sample index {i} out of range")))?;
        let s = if augment_on {
            augment(rec, &mut sample_rng(seed, epoch, i), aug)?
        } else {
            crop_sample(rec, aug, 0.0, 1.0, false)?
        };
        let (t, m) = encode_targets(&s.keypoints, heatmap, &TargetConfig::default());
        images.push(s.image.to_tensor());
        targets.push(t.to_tensor());
        mask.extend(m);
    }
    Ok(Batch {
        input: Tensor::stack(&images)?,
        target: Tensor::stack(&targets)?,
        mask,
        indices: indices.to_vec(),
    })
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamStore<f32>,
    pub adam: AdamState<f32>,
    /// Completed optimizer steps.
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub stage_losses: Vec<f64>,
    pub fully_masked: bool,
}

pub struct Trainer {
    pub net: Network,
    pub cfg: TrainConfig,
    pub aug: AugmentConfig,
    pub records: Vec<Record>,
    pub state: TrainState,
    /// Steps whose batch had no labeled joint.
    pub masked_batches: usize,
}

impl Trainer {
    pub fn new(net: Network, records: Vec<Record>, cfg: TrainConfig, aug: AugmentConfig) -> Result<Self> {
        let params = net.graph.init_params::<f32>(cfg.seed);
        let adam = AdamState::new(params.params(), adam_config(&cfg));
        let state = TrainState { params, adam, step: 0 };
        Self::resume(net, records, cfg, aug, state)
    }

    /// Continue from a saved state; the next step is `state.step`.
    pub fn resume(net: Network, records: Vec<Record>, cfg: TrainConfig, aug: AugmentConfig, state: TrainState) -> Result<Self> {
        cfg.validate()?;
        if records.is_empty() {
            return Err(Error::Config("training needs at least one record".into()));
        }
        if aug.input != net.config.input {
            return Err(Error::Config(format!(
                "crop size {:?} differs from the network input {:?}",
                aug.input, net.config.input
            )));
        }
        if state.params.param_names().len() != net.graph.param_count() {
            return Err(Error::Config("saved state does not match the network".into()));
        }
        let mut state = state;
        state.adam.cfg = adam_config(&cfg);
        Ok(Trainer {
            net,
            cfg,
            aug,
            records,
            state,
            masked_batches: 0,
        })
    }

    pub fn done(&self) -> bool {
        self.state.step as usize >= self.cfg.total_steps()
    }

    /// Sample indices of batch `step`: a running pass over per-epoch shuffles,
    /// so every sample is seen once before any is seen twice.
    pub fn batch_indices(&self, step: usize) -> Vec<(u64, usize)> {
        let n = self.records.len();
        let first = step * self.cfg.batch;
        let mut out = Vec::with_capacity(self.cfg.batch);
        let mut cache: Option<(u64, Vec<usize>)> = None;
        for v in first..first + self.cfg.batch {
            let pass = (v / n) as u64;
            if cache.as_ref().map_or(true, |(p, _)| *p != pass) {
                cache = Some((pass, epoch_order(self.cfg.seed, pass, n)));
            }
            out.push((pass, cache.as_ref().expect("order").1[v % n]));
        }
        out
    }

    /// Inputs and targets of batch `step`.
    pub fn batch(&self, step: usize) -> Result<Batch> {
        let idx = self.batch_indices(step);
        let mut parts = Vec::with_capacity(idx.len());
        for &(pass, i) in &idx {
            parts.push(make_batch(
                &self.records,
                &[i],
                pass,
                self.cfg.seed,
                &self.aug,
                self.cfg.augment,
                self.net.config.heatmap_size(),
            )?);
        }
        let input = Tensor::stack(&parts.iter().map(|b| b.input.clone()).collect::<Vec<_>>())?;
        let target = Tensor::stack(&parts.iter().map(|b| b.target.clone()).collect::<Vec<_>>())?;
        Ok(Batch {
            input,
            target,
            mask: parts.iter().flat_map(|b| b.mask.iter().copied()).collect(),
            indices: idx.iter().map(|&(_, i)| i).collect(),
        })
    }

    /// Loss of batch `step` under the current parameters, without updating anything.
    pub fn evaluate_loss(&self, step: usize) -> Result<f64> {
        let b = self.batch(step)?;
        let tape = self.net.graph.forward(&self.state.params, &[b.input], Mode::Train)?;
        let preds: Vec<&Tensor<f32>> = self.net.heatmaps().iter().map(|&h| tape.value(h)).collect();
        Ok(heatmap_loss(&preds, &b.target, &b.mask)?.loss)
    }

    /// One optimizer step.
    pub fn step(&mut self) -> Result<StepLog> {
        let step = self.state.step as usize;
        let b = self.batch(step)?;
        let g = &self.net.graph;
        let tape = g.forward(&self.state.params, &[b.input], Mode::Train)?;
        let heads = self.net.heatmaps();
        let preds: Vec<&Tensor<f32>> = heads.iter().map(|&h| tape.value(h)).collect();
        let loss = heatmap_loss(&preds, &b.target, &b.mask)?;
        if !loss.loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        if loss.fully_masked {
            self.masked_batches += 1;
        }
        let seeds: Vec<_> = heads.iter().copied().zip(loss.grads.iter().cloned()).collect();
        g.backward_seeded(&mut self.state.params, &tape, &seeds)?;
        let lr = lr_at(step, self.cfg.total_steps(), &self.cfg);
        self.state.adam.step(self.state.params.params_mut(), lr)?;
        g.update_running_stats(&mut self.state.params, &tape)?;
        self.state.step += 1;
        Ok(StepLog {
            step,
            epoch: step / self.cfg.steps_per_epoch,
            lr,
            loss: loss.loss,
            stage_losses: loss.stage_losses,
            fully_masked: loss.fully_masked,
        })
    }

    /// Steps until the configured total, reporting each one.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, &StepLog)) -> Result<Vec<StepLog>> {
        let mut logs = Vec::new();
        while !self.done() {
            let l = self.step()?;
            on_step(self, &l);
            logs.push(l);
        }
        Ok(logs)
    }

    /// PCK on plain crops of the training records.
    pub fn probe(&self, alpha: f64) -> Result<PckReport> {
        probe_pck(&self.net, &self.state.params, &self.records, &self.aug, alpha)
    }
}

fn adam_config(cfg: &TrainConfig) -> AdamConfig {
    AdamConfig {
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    }
}

/// Decoded last-stage predictions for plain crops of `records`, in crop pixels, next to their ground truth.
pub fn predict_crops(
    net: &Network,
    params: &ParamStore<f32>,
    records: &[Record],
    aug: &AugmentConfig,
) -> Result<(Vec<KeypointSet>, Vec<KeypointSet>)> {
    let (hh, hw) = net.config.heatmap_size();
    let last = *net.heatmaps().last().ok_or_else(|| Error::Graph("network without outputs".into()))?;
    let (mut preds, mut gts) = (Vec::new(), Vec::new());
    for chunk in records.chunks(8) {
        let samples = chunk
            .iter()
            .map(|r| crop_sample(r, aug, 0.0, 1.0, false))
            .collect::<Result<Vec<_>>>()?;
        let input = Tensor::stack(&samples.iter().map(|s| s.image.to_tensor()).collect::<Vec<_>>())?;
        let tape = net.graph.forward(params, &[input], Mode::Eval)?;
        let out = tape.value(last);
        for (n, s) in samples.into_iter().enumerate() {
            let h = HeatmapStack::from_tensor(out, n, Affine::scale(crate::codec::HEATMAP_STRIDE as f64))?;
            debug_assert_eq!((h.h, h.w), (hh, hw));
            preds.push(decode(&h, None, &aug.flip_pairs, 1.0, &DecodeConfig::default())?);
            gts.push(s.keypoints);
        }
    }
    Ok((preds, gts))
}

/// `pck_bbox` of the decoded predictions on plain crops.
pub fn probe_pck(net: &Network, params: &ParamStore<f32>, records: &[Record], aug: &AugmentConfig, alpha: f64) -> Result<PckReport> {
    let (p, g) = predict_crops(net, params, records, aug)?;
    pck_bbox(&p, &g, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, 300, &c), 5e-4);
        assert_eq!(lr_at(300, 300, &c), 0.0);
        assert!((lr_at(150, 300, &c) - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn rates_must_be_ordered() {
        let c = TrainConfig {
            final_lr: 1e-3,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
