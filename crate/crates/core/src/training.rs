//! ADAM with step decay, sequence-length randomization, one training epoch,
//! and validation against the bicubic baseline.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::degradation::{make_lr_sequence, random_crop_sequence, DegradationParams};
use crate::metrics::{bicubic_resize, psnr, ssim, ItemMetrics, MetricReport, ResizeDirection};
use crate::network::{attach, unroll, unroll_on_tape, Parameters};
use crate::{seed, Error, Result, Tape, Tensor};

/// Per-parameter gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Tensor<f32>>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    /// Epochs between learning-rate decays.
    pub lr_decay_period: usize,
    /// Coupled L2 penalty added to the gradient.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    pub min_seq_len: usize,
    pub max_seq_len: usize,
    /// Side of the square HR crop taken from every training sequence.
    pub crop_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            base_lr: 1e-4,
            lr_decay_factor: 0.5,
            lr_decay_period: 25,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            min_seq_len: 1,
            max_seq_len: 10,
            crop_size: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!("lr_decay_factor must be in (0, 1], got {}", self.lr_decay_factor));
        }
        if !(1 <= self.min_seq_len && self.min_seq_len <= self.max_seq_len) {
            return bad(format!(
                "need 1 <= min_seq_len <= max_seq_len, got {}..{}",
                self.min_seq_len, self.max_seq_len
            ));
        }
        for (name, v) in [
            ("base_lr", self.base_lr),
            ("epsilon", self.epsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1), got {v}"));
            }
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("lr_decay_period", self.lr_decay_period),
            ("batch_size", self.batch_size),
            ("crop_size", self.crop_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        Ok(())
    }
}

/// `base_lr * factor^floor(epoch / period)`, with `epoch` counted from 0.
pub fn lr_at_epoch(epoch: usize, config: &TrainConfig) -> f64 {
    let decays = (epoch / config.lr_decay_period) as i32;
    config.base_lr * libm::pow(config.lr_decay_factor, decays as f64)
}

/// ADAM moments for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: BTreeMap<String, Tensor<f32>>,
    pub second_moment: BTreeMap<String, Tensor<f32>>,
}

impl OptimizerState {
    pub fn new(params: &Parameters<f32>) -> Result<Self> {
        let zeros = |p: &Parameters<f32>| -> Result<BTreeMap<String, Tensor<f32>>> {
            p.iter().map(|(n, t)| Ok((n.to_string(), Tensor::zeros(t.shape())?))).collect()
        };
        Ok(OptimizerState {
            step: 0,
            first_moment: zeros(params)?,
            second_moment: zeros(params)?,
        })
    }
}

/// One ADAM update with bias correction and coupled weight decay.
pub fn adam_step(
    params: &mut Parameters<f32>,
    grads: &Grads,
    state: &mut OptimizerState,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    for (name, p) in params.iter() {
        let param_err = |reason: String| Error::Parameter {
            name: name.to_string(),
            reason,
        };
        let g = grads.get(name).ok_or_else(|| param_err("no gradient".into()))?;
        if g.shape() != p.shape() {
            return Err(param_err(format!("gradient shape {:?} != parameter shape {:?}", g.shape(), p.shape())));
        }
        if !g.all_finite() {
            return Err(param_err("non-finite gradient".into()));
        }
        for moments in [&state.first_moment, &state.second_moment] {
            match moments.get(name) {
                Some(m) if m.shape() == p.shape() => {}
                _ => return Err(param_err("optimizer state does not match parameter".into())),
            }
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (config.beta1, config.beta2);
    let bc1 = 1.0 - libm::pow(b1, t);
    let bc2 = 1.0 - libm::pow(b2, t);
    let wd = config.weight_decay;
    let eps = config.epsilon;
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state.first_moment.get_mut(name).expect("checked above").data_mut();
        let v = state.second_moment.get_mut(name).expect("checked above").data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g_eff = gv as f64 + wd * *pv as f64;
            let m_new = b1 * *mv as f64 + (1.0 - b1) * g_eff;
            let v_new = b2 * *vv as f64 + (1.0 - b2) * g_eff * g_eff;
            *mv = m_new as f32;
            *vv = v_new as f32;
            let update = lr * (m_new / bc1) / (libm::sqrt(v_new / bc2) + eps);
            *pv = (*pv as f64 - update) as f32;
        }
    }
    Ok(())
}

/// Uniform draw from `[min_seq_len, max_seq_len]`.
pub fn sample_sequence_length(rng: &mut seed::Rng, config: &TrainConfig) -> usize {
    rng.gen_range(config.min_seq_len..=config.max_seq_len)
}

/// Mean over time-steps of the per-step MAE, and its gradient.
pub fn sequence_loss_and_grads(
    params: &Parameters<f32>,
    lr_frames: &[Tensor<f32>],
    hr_frames: &[Tensor<f32>],
) -> Result<(f64, Grads)> {
    if lr_frames.len() != hr_frames.len() {
        return Err(Error::InvalidConfig(format!(
            "{} LR frames for {} HR frames",
            lr_frames.len(),
            hr_frames.len()
        )));
    }
    let mut tape = Tape::new();
    let net = attach(&mut tape, params, true)?;
    let inputs: Vec<_> = lr_frames.iter().map(|f| tape.constant(f.clone())).collect();
    let outputs = unroll_on_tape(&mut tape, &net, &inputs)?;
    let mut losses = Vec::with_capacity(outputs.len());
    for (out, hr) in outputs.iter().zip(hr_frames) {
        let target = tape.constant(hr.clone());
        losses.push(tape.mean_abs_error(*out, target)?);
    }
    let loss = tape.mean_of(&losses)?;
    let value = tape.value(loss).item()? as f64;
    let grads = tape.backward(loss)?;
    let named = net.params().map(|(name, var)| (name, grads.get_or_zeros(&tape, var))).collect();
    Ok((value, named))
}

/// A ground-truth sequence with a stable identifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub frames: Vec<Tensor<f32>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub samples: usize,
    pub optimizer_steps: usize,
    pub lr: f64,
}

/// One pass over `dataset` in a seeded random order.
///
/// Each sample gets a random length prefix, one shared random crop, fresh
/// degradation noise, and contributes its sequence loss; gradients are
/// averaged over `batch_size` samples per ADAM step. All randomness derives
/// from `(config.seed, epoch)`, so resuming at an epoch boundary reproduces
/// the uninterrupted run.
pub fn train_epoch(
    params: &mut Parameters<f32>,
    opt: &mut OptimizerState,
    dataset: &[Sequence],
    config: &TrainConfig,
    degradation: &DegradationParams,
    epoch: usize,
) -> Result<EpochStats> {
    config.validate()?;
    degradation.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("train_epoch"));
    }
    if params.config().scale != degradation.scale {
        return Err(Error::InvalidConfig(format!(
            "network scale {} differs from degradation scale {}",
            params.config().scale,
            degradation.scale
        )));
    }
    let mut rng = seed::rng_for(config.seed, epoch as u64);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let lr = lr_at_epoch(epoch, config);

    let mut total_loss = 0.0;
    let mut steps = 0;
    for batch in order.chunks(config.batch_size) {
        let mut sum: Option<Grads> = None;
        for &idx in batch {
            let seq = &dataset[idx];
            let len = sample_sequence_length(&mut rng, config).min(seq.frames.len());
            let crop_seed: u64 = rng.gen();
            let noise_seed: u64 = rng.gen();
            let frames = random_crop_sequence(&seq.frames[..len], config.crop_size, crop_seed)?;
            let sample = make_lr_sequence(
                &frames,
                DegradationParams {
                    seed: noise_seed,
                    ..*degradation
                },
            )?;
            let (loss, grads) = sequence_loss_and_grads(params, &sample.lr_frames, &sample.hr_frames)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    sample: seq.id.clone(),
                    step: opt.step as usize,
                    reason: format!("loss is {loss}"),
                });
            }
            total_loss += loss;
            match &mut sum {
                None => sum = Some(grads),
                Some(acc) => {
                    for (name, g) in grads {
                        let a = acc.get_mut(&name).expect("same parameter set");
                        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                            *x += *y;
                        }
                    }
                }
            }
        }
        let mut grads = sum.expect("chunks are non-empty");
        let inv = 1.0 / batch.len() as f32;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        adam_step(params, &grads, opt, lr, config).map_err(|e| Error::Training {
            sample: batch.iter().map(|&i| dataset[i].id.as_str()).collect::<Vec<_>>().join(","),
            step: opt.step as usize,
            reason: e.to_string(),
        })?;
        steps += 1;
    }
    Ok(EpochStats {
        mean_loss: total_loss / dataset.len() as f64,
        samples: dataset.len(),
        optimizer_steps: steps,
        lr,
    })
}

/// Stable 64-bit hash of a sequence id (FNV-1a), used to seed its
/// validation degradation independently of list order.
pub fn id_hash(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn clamp01(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| v.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub sr: MetricReport,
    pub bicubic: MetricReport,
    /// Mean over sequences of the per-step MAE averaged over steps.
    pub mean_loss: f64,
}

/// Full-length unroll of each sequence; PSNR/SSIM of the final SR frame and
/// of the bicubic upsample of the final LR frame against the final HR frame.
/// Both images are clamped to `[0, 1]` before scoring.
pub fn evaluate(params: &Parameters<f32>, dataset: &[Sequence], degradation: &DegradationParams) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluate"));
    }
    let mut sr_items = Vec::with_capacity(dataset.len());
    let mut bicubic_items = Vec::with_capacity(dataset.len());
    let mut loss_sum = 0.0;
    for seq in dataset {
        let sample = make_lr_sequence(
            &seq.frames,
            DegradationParams {
                seed: seed::derive(degradation.seed, id_hash(&seq.id)),
                ..*degradation
            },
        )?;
        let outputs = unroll(params, &sample.lr_frames)?;
        let mut seq_loss = 0.0;
        for (out, hr) in outputs.iter().zip(&sample.hr_frames) {
            seq_loss += crate::ops::mean_abs_error(out, hr)? as f64;
        }
        loss_sum += seq_loss / outputs.len() as f64;

        let hr = sample.hr_frames.last().expect("non-empty");
        let sr = clamp01(outputs.last().expect("non-empty"));
        let bic = clamp01(&bicubic_resize(
            sample.lr_frames.last().expect("non-empty"),
            degradation.scale,
            ResizeDirection::Up,
        )?);
        sr_items.push(ItemMetrics {
            id: seq.id.clone(),
            psnr: psnr(&sr, hr, 1.0)?,
            ssim: ssim(&sr, hr, 1.0)?,
        });
        bicubic_items.push(ItemMetrics {
            id: seq.id.clone(),
            psnr: psnr(&bic, hr, 1.0)?,
            ssim: ssim(&bic, hr, 1.0)?,
        });
    }
    Ok(Evaluation {
        sr: MetricReport::from_items("SR", sr_items)?,
        bicubic: MetricReport::from_items("Bicubic", bicubic_items)?,
        mean_loss: loss_sum / dataset.len() as f64,
    })
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_psnr_sr: f64,
    pub val_psnr_bicubic: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}
