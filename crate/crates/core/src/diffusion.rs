//! Noise schedule, forward diffusion, chunk input assembly and the
//! deterministic few-step sampler.
//!
//! Denoisers predict clean latents (x0). The schedule is rectified-linear:
//! `alpha(t) = 1 - t`, `sigma(t) = t`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::net::Denoiser;
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    RectifiedLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
}

impl NoiseSchedule {
    pub fn alpha(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::RectifiedLinear => 1.0 - t,
        }
    }

    pub fn sigma(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::RectifiedLinear => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerPlan {
    pub steps: usize,
    pub timesteps: Vec<f64>,
    #[serde(default)]
    pub schedule: ScheduleKind,
}

impl Default for SamplerPlan {
    fn default() -> Self {
        Self { steps: 4, timesteps: vec![1.0, 0.75, 0.5, 0.25], schedule: ScheduleKind::RectifiedLinear }
    }
}

impl SamplerPlan {
    /// Evenly spaced ladder `1, 1 - 1/n, ..., 1/n`.
    pub fn uniform(steps: usize) -> Self {
        let timesteps = (0..steps).map(|i| 1.0 - i as f64 / steps as f64).collect();
        Self { steps, timesteps, schedule: ScheduleKind::RectifiedLinear }
    }

    pub fn schedule(&self) -> NoiseSchedule {
        NoiseSchedule { kind: self.schedule }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.steps == 0 {
            errs.push("sampler.steps must be positive".into());
        }
        if self.timesteps.len() != self.steps {
            errs.push(format!(
                "sampler.timesteps has {} entries but steps = {}",
                self.timesteps.len(),
                self.steps
            ));
        }
        if self.timesteps.first() != Some(&1.0) {
            errs.push("sampler.timesteps must start at exactly 1.0".into());
        }
        if self.timesteps.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Greater)) {
            errs.push("sampler.timesteps must be strictly decreasing".into());
        }
        if self.timesteps.last().is_some_and(|&t| t < 0.0) {
            errs.push("sampler.timesteps must stay within [0, 1]".into());
        }
        errs
    }

    pub fn check(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// A window of `L_c` latent frames whose first `motion_len` rows are the
/// motion frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentChunk {
    pub latents: Array2<f64>,
    pub motion_len: usize,
}

impl LatentChunk {
    pub fn len(&self) -> usize {
        self.latents.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.nrows() == 0
    }

    pub fn motion(&self) -> ArrayView2<'_, f64> {
        self.latents.slice(s![..self.motion_len, ..])
    }

    pub fn targets(&self) -> ArrayView2<'_, f64> {
        self.latents.slice(s![self.motion_len.., ..])
    }

    /// Last `n` rows, used as the next chunk's motion frames.
    pub fn tail(&self, n: usize) -> ArrayView2<'_, f64> {
        self.latents.slice(s![self.len() - n.., ..])
    }
}

/// Channel-wise concatenation `z_noise ‖ z_mask ‖ z_cond` plus the
/// auxiliary conditioning streams.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeInput {
    pub z_noise: Array2<f64>,
    pub z_mask: Vec<f64>,
    pub z_cond: Array2<f64>,
    /// One driving sample per frame of the chunk.
    pub signal: Vec<f64>,
    pub reference: Array1<f64>,
    /// Diffusion time per row; 0 for motion rows.
    pub timesteps: Vec<f64>,
    pub motion_len: usize,
}

impl CompositeInput {
    /// Builds the input from already-noised target rows.
    pub fn from_noised(
        motion: ArrayView2<'_, f64>,
        noised_target: ArrayView2<'_, f64>,
        reference: ArrayView1<'_, f64>,
        t: f64,
        signal: &[f64],
    ) -> Result<Self> {
        let d = reference.len();
        let lm = motion.nrows();
        let lc = lm + noised_target.nrows();
        if noised_target.nrows() == 0 {
            return Err(invalid("chunk needs at least one target row"));
        }
        if motion.ncols() != d || noised_target.ncols() != d {
            return Err(invalid("motion, target and reference widths differ"));
        }
        if signal.len() != lc {
            return Err(invalid(format!("signal window has {} samples, chunk has {lc} frames", signal.len())));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(invalid(format!("timestep {t} outside [0, 1]")));
        }
        let mut z_noise = Array2::zeros((lc, d));
        z_noise.slice_mut(s![..lm, ..]).assign(&motion);
        z_noise.slice_mut(s![lm.., ..]).assign(&noised_target);
        let mut z_mask = vec![0.0; lc];
        z_mask[0] = 1.0;
        let mut z_cond = Array2::zeros((lc, d));
        z_cond.row_mut(0).assign(&reference);
        let timesteps = (0..lc).map(|i| if i < lm { 0.0 } else { t }).collect();
        Ok(Self {
            z_noise,
            z_mask,
            z_cond,
            signal: signal.to_vec(),
            reference: reference.to_owned(),
            timesteps,
            motion_len: lm,
        })
    }

    pub fn len(&self) -> usize {
        self.z_noise.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z_noise.nrows() == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.z_noise.ncols()
    }

    /// Per-frame channels in checkpoint order: `z_noise`, `z_mask`, `z_cond`.
    pub fn channels(&self) -> Array2<f64> {
        let (lc, d) = self.z_noise.dim();
        let mut out = Array2::zeros((lc, 2 * d + 1));
        out.slice_mut(s![.., ..d]).assign(&self.z_noise);
        for (i, m) in self.z_mask.iter().enumerate() {
            out[[i, d]] = *m;
        }
        out.slice_mut(s![.., d + 1..]).assign(&self.z_cond);
        out
    }

    pub fn target_rows(&self) -> ArrayView2<'_, f64> {
        self.z_noise.slice(s![self.motion_len.., ..])
    }
}

/// `alpha(t)·z + sigma(t)·noise`.
pub fn forward_diffuse(z: ArrayView2<'_, f64>, t: f64, noise: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    forward_diffuse_with(NoiseSchedule::default(), z, t, noise)
}

pub fn forward_diffuse_with(
    schedule: NoiseSchedule,
    z: ArrayView2<'_, f64>,
    t: f64,
    noise: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("timestep {t} outside [0, 1]")));
    }
    if z.dim() != noise.dim() {
        return Err(invalid("noise shape does not match latents"));
    }
    let (a, sg) = (schedule.alpha(t), schedule.sigma(t));
    Ok(&z * a + &noise * sg)
}

/// Chunk assembly: clean motion rows, forward-diffused target rows, the
/// reference in the first conditioning row and a one-hot mask.
pub fn assemble_input(
    motion: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    reference: ArrayView1<'_, f64>,
    t: f64,
    noise: ArrayView2<'_, f64>,
    signal: &[f64],
) -> Result<CompositeInput> {
    let noised = forward_diffuse(target, t, noise)?;
    CompositeInput::from_noised(motion, noised.view(), reference, t, signal)
}

/// Gaussian score implied by an x0 estimate: `-(z_t - alpha·x0) / sigma²`.
pub fn score_from_x0(z_t: ArrayView2<'_, f64>, t: f64, x0_hat: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if t == 0.0 {
        return Err(Error::SingularSchedule("sigma(0) = 0".into()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("timestep {t} outside (0, 1]")));
    }
    if z_t.dim() != x0_hat.dim() {
        return Err(invalid("score inputs have different shapes"));
    }
    let sch = NoiseSchedule::default();
    let (a, sg) = (sch.alpha(t), sch.sigma(t));
    Ok((&z_t - &(&x0_hat * a)) * (-1.0 / (sg * sg)))
}

pub fn standard_normal(rows: usize, cols: usize, seed: u64, stream: u64) -> Array2<f64> {
    let mut rng = seeded_rng(seed, stream);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

/// Step-by-step state of the deterministic few-step recursion for one chunk.
#[derive(Debug, Clone)]
pub struct SamplerState<'a> {
    plan: &'a SamplerPlan,
    motion: ArrayView2<'a, f64>,
    reference: ArrayView1<'a, f64>,
    signal: &'a [f64],
    z: Array2<f64>,
    step: usize,
}

const INITIAL_NOISE_STREAM: u64 = 11;

impl<'a> SamplerState<'a> {
    pub fn new(
        plan: &'a SamplerPlan,
        motion: ArrayView2<'a, f64>,
        reference: ArrayView1<'a, f64>,
        signal: &'a [f64],
        seed: u64,
    ) -> Result<Self> {
        plan.check()?;
        let lc = signal.len();
        let lm = motion.nrows();
        if lm >= lc {
            return Err(invalid(format!("motion rows {lm} must be fewer than chunk length {lc}")));
        }
        let z = standard_normal(lc - lm, reference.len(), seed, INITIAL_NOISE_STREAM);
        Ok(Self { plan, motion, reference, signal, z, step: 0 })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.plan.steps
    }

    pub fn current_t(&self) -> f64 {
        self.plan.timesteps[self.step]
    }

    /// Denoiser input for the current step.
    pub fn input(&self) -> Result<CompositeInput> {
        CompositeInput::from_noised(self.motion, self.z.view(), self.reference, self.current_t(), self.signal)
    }

    /// Moves to the next step given the x0 prediction for the target rows.
    pub fn advance(&mut self, x0_hat: ArrayView2<'_, f64>) {
        let sch = self.plan.schedule();
        let t = self.current_t();
        self.step += 1;
        if self.step < self.plan.steps {
            let next = self.plan.timesteps[self.step];
            let eps = (&self.z - &(&x0_hat * sch.alpha(t))) / sch.sigma(t);
            self.z = &x0_hat * sch.alpha(next) + &eps * sch.sigma(next);
        }
    }

    pub fn noised(&self) -> ArrayView2<'_, f64> {
        self.z.view()
    }
}

/// Samples one chunk. Motion rows pass through unchanged; target rows are the
/// final x0 prediction.
pub fn few_step_sample<'a, D: Denoiser + ?Sized>(
    denoiser: &D,
    plan: &'a SamplerPlan,
    motion: ArrayView2<'a, f64>,
    reference: ArrayView1<'a, f64>,
    signal: &'a [f64],
    seed: u64,
) -> Result<LatentChunk> {
    let mut state = SamplerState::new(plan, motion, reference, signal, seed)?;
    let lm = motion.nrows();
    let mut last = None;
    while !state.is_done() {
        let input = state.input()?;
        let pred = denoiser.predict(&input)?;
        let x0 = pred.slice(s![lm.., ..]).to_owned();
        state.advance(x0.view());
        last = Some(x0);
    }
    let x0 = last.expect("plan has at least one step");
    let mut latents = Array2::zeros((signal.len(), reference.len()));
    latents.slice_mut(s![..lm, ..]).assign(&motion);
    latents.slice_mut(s![lm.., ..]).assign(&x0);
    Ok(LatentChunk { latents, motion_len: lm })
}
