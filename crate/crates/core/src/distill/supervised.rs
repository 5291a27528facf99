//! Denoising regression used for teacher pretraining and bucketed adaptation.

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::{step_rng, Dataset, Window};
use crate::diffusion::{assemble_input, standard_normal};
use crate::error::{invalid, Error, Result};
use crate::net::{Denoiser, DenoiserNet, NetConfig, Optimizer, StepRule, Trainable};
use crate::derive_seed;

/// Optimisation settings for one supervised stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisedOpts {
    pub steps: usize,
    pub lr: f64,
    pub rule: StepRule,
    pub batch_size: usize,
    pub t_min: f64,
}

impl Default for SupervisedOpts {
    fn default() -> Self {
        Self { steps: 2000, lr: 1e-3, rule: StepRule::Adam, batch_size: 8, t_min: 0.02 }
    }
}

impl SupervisedOpts {
    pub fn validate(&self, prefix: &str) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            errs.push(format!("{prefix}.lr must be a finite nonnegative real"));
        }
        if self.batch_size == 0 {
            errs.push(format!("{prefix}.batch_size must be positive"));
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            errs.push(format!("{prefix}.t_min must lie in (0, 1)"));
        }
        errs
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
    /// Chunk length used at each step.
    pub lengths: Vec<usize>,
}

const LEN_STREAM: u64 = 40;
const WINDOW_STREAM: u64 = 41;
const NOISE_STREAM: u64 = 42;

/// Trains a fresh denoiser from its seeded initialisation on chunks of `chunk_len`.
pub fn pretrain_teacher(
    data: &Dataset,
    net: NetConfig,
    chunk_len: usize,
    motion_len: usize,
    opts: &SupervisedOpts,
    init_seed: u64,
    seed: u64,
) -> Result<(DenoiserNet, FitReport)> {
    let mut teacher = DenoiserNet::new(net, init_seed)?;
    let report = fit_denoising(&mut teacher, data, &[chunk_len], motion_len, opts, seed)?;
    Ok((teacher, report))
}

/// Fine-tunes a copy of `teacher`, drawing one bucket length per step.
pub fn stage1_adapt(
    teacher: &DenoiserNet,
    data: &Dataset,
    buckets: &[usize],
    motion_len: usize,
    opts: &SupervisedOpts,
    seed: u64,
) -> Result<(DenoiserNet, FitReport)> {
    if buckets.is_empty() {
        return Err(invalid("at least one bucket length is required"));
    }
    if let Some(b) = buckets.iter().find(|&&b| b < motion_len + 1) {
        return Err(invalid(format!("bucket length {b} is shorter than the motion window plus one frame")));
    }
    let mut sft = teacher.clone();
    let report = fit_denoising(&mut sft, data, buckets, motion_len, opts, seed)?;
    Ok((sft, report))
}

/// Minimises target-row MSE of x0 predictions over random `(window, t, ε)`.
pub fn fit_denoising<N: Trainable>(
    net: &mut N,
    data: &Dataset,
    lengths: &[usize],
    motion_len: usize,
    opts: &SupervisedOpts,
    seed: u64,
) -> Result<FitReport> {
    let errs = opts.validate("train");
    if !errs.is_empty() {
        return Err(invalid(errs.join("; ")));
    }
    let mut opt = Optimizer::new(opts.rule, opts.lr);
    let mut report = FitReport::default();
    for step in 0..opts.steps as u64 {
        let len = lengths[step_rng(seed, LEN_STREAM, step).gen_range(0..lengths.len())];
        let mut rng = step_rng(seed, WINDOW_STREAM, step);
        net.params_mut().zero_grad();
        let mut loss = 0.0;
        for b in 0..opts.batch_size {
            let w = data.sample_window(&mut rng, len)?;
            let t = rng.gen_range(opts.t_min..=1.0);
            let noise_seed = derive_seed(derive_seed(seed, step), b as u64);
            loss += denoise_accumulate(net, &w, motion_len, t, noise_seed, opts.batch_size)?;
        }
        let loss = loss / opts.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("denoising loss became {loss} at step {step}")));
        }
        opt.step(net.params_mut());
        report.losses.push(loss);
        report.lengths.push(len);
    }
    Ok(report)
}

/// Adds the gradient of `mean((pred − x0)²) / batch` over target rows; returns the unscaled loss.
fn denoise_accumulate<N: Trainable>(
    net: &mut N,
    w: &Window,
    lm: usize,
    t: f64,
    noise_seed: u64,
    batch: usize,
) -> Result<f64> {
    let target = w.target(lm);
    let noise = standard_normal(target.nrows(), target.ncols(), noise_seed, NOISE_STREAM);
    let input = assemble_input(w.motion(lm), target, w.reference(), t, noise.view(), &w.signal)?;
    let pred = net.predict(&input)?;
    let diff = &pred.slice(s![lm.., ..]) - &target;
    let n = diff.len() as f64;
    let loss = diff.mapv(|v| v * v).sum() / n;
    let mut cot = Array2::zeros(pred.raw_dim());
    cot.slice_mut(s![lm.., ..]).assign(&(&diff * (2.0 / (n * batch as f64))));
    net.backward(&input, cot.view())?;
    Ok(loss)
}

/// Mean target-row MSE of x0 predictions at a fixed `t`, noise drawn per window from `seed`.
pub fn denoise_mse<D: Denoiser + ?Sized>(net: &D, windows: &[Window], lm: usize, t: f64, seed: u64) -> Result<f64> {
    if windows.is_empty() {
        return Err(invalid("no evaluation windows"));
    }
    let mut total = 0.0;
    for (i, w) in windows.iter().enumerate() {
        let target = w.target(lm);
        let noise = standard_normal(target.nrows(), target.ncols(), derive_seed(seed, i as u64), NOISE_STREAM);
        let input = assemble_input(w.motion(lm), target, w.reference(), t, noise.view(), &w.signal)?;
        let pred = net.predict(&input)?;
        let diff = &pred.slice(s![lm.., ..]) - &target;
        total += diff.mapv(|v| v * v).mean().unwrap_or(0.0);
    }
    Ok(total / windows.len() as f64)
}

/// MSE of always predicting zero: the mean square of the target latents.
pub fn zero_predictor_mse(windows: &[Window], lm: usize) -> f64 {
    let sum: f64 = windows.iter().map(|w| w.target(lm).mapv(|v| v * v).mean().unwrap_or(0.0)).sum();
    sum / windows.len().max(1) as f64
}
