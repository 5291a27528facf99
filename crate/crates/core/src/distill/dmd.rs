//! Distribution-matching distillation over retrospective multi-chunk rollouts.
//!
//! The generator rolls out `k` chunks, each conditioned on the previous
//! chunk's generated tail. Only the `t′`-th sampler step of chunk `k` is
//! differentiated; everything before it is a constant.

use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::{step_rng, Dataset, Window};
use crate::diffusion::{
    forward_diffuse, score_from_x0, standard_normal, CompositeInput, LatentChunk, NoiseSchedule, SamplerPlan,
    SamplerState,
};
use crate::error::{invalid, Error, Result};
use crate::net::{Denoiser, DenoiserNet, Optimizer, StepRule, Trainable};
use crate::{derive_seed, seeded_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkSchedule {
    Fixed(usize),
    RandomUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionSource {
    GroundTruth,
    Predicted,
}

/// Extra noise on the score networks' motion rows, level drawn from `U[0, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionNoise {
    Off,
    On(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub k_max: usize,
    pub chunk_schedule: ChunkSchedule,
    pub generator_lr: f64,
    pub fake_lr: f64,
    /// Fake-score updates per generator update.
    pub update_ratio: usize,
    pub sampler: SamplerPlan,
    pub t_min: f64,
    pub motion_source: MotionSource,
    pub motion_noise: MotionNoise,
    pub motion_in_loss: bool,
    pub steps: usize,
    /// Divide the cotangent by the mean |G − real x0| (off by default).
    pub normalize: bool,
    pub step_rule: StepRule,
    pub chunk_len: usize,
    pub motion_len: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            k_max: 5,
            chunk_schedule: ChunkSchedule::RandomUniform,
            generator_lr: 2e-4,
            fake_lr: 4e-5,
            update_ratio: 5,
            sampler: SamplerPlan::default(),
            t_min: 0.02,
            motion_source: MotionSource::Predicted,
            motion_noise: MotionNoise::On(0.25),
            motion_in_loss: false,
            steps: 200,
            normalize: false,
            step_rule: StepRule::Sgd,
            chunk_len: 9,
            motion_len: 2,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.k_max == 0 {
            errs.push("distill.k_max must be at least 1".into());
        }
        if let ChunkSchedule::Fixed(k) = self.chunk_schedule {
            if k == 0 || k > self.k_max {
                errs.push(format!("distill.chunk_schedule fixed({k}) must lie in 1..=k_max"));
            }
        }
        if self.update_ratio == 0 {
            errs.push("distill.update_ratio must be at least 1".into());
        }
        for (name, v) in [("generator_lr", self.generator_lr), ("fake_lr", self.fake_lr)] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("distill.{name} must be a finite nonnegative real"));
            }
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            errs.push("distill.t_min must lie in (0, 1)".into());
        }
        if let MotionNoise::On(m) = self.motion_noise {
            if !(0.0..=1.0).contains(&m) {
                errs.push("distill.motion_noise level must lie in [0, 1]".into());
            }
        }
        if self.motion_len >= self.chunk_len {
            errs.push("distill.motion_len must be smaller than distill.chunk_len".into());
        }
        errs.extend(self.sampler.validate().into_iter().map(|e| format!("distill.sampler: {e}")));
        errs
    }

    fn check(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn new_frames(&self) -> usize {
        self.chunk_len - self.motion_len
    }

    /// Frames a rollout of `k` chunks consumes.
    pub fn window_len(&self, k: usize) -> usize {
        self.motion_len + k * self.new_frames()
    }
}

/// Which rollout chunk and which sampler step carry the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draw {
    pub k: usize,
    pub t_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionProvenance {
    GroundTruth,
    SelfGenerated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrace {
    pub chunks: Vec<LatentChunk>,
    pub sampled_k: usize,
    pub sampled_t_prime_index: usize,
    pub provenance: Vec<MotionProvenance>,
}

// Named random streams. Every draw is a function of (seed, stream) only, so
// the rollout prefix and the score noise do not depend on (k, t′).
const DRAW_STREAM: u64 = 60;
const SCORE_STREAM: u64 = 61;
const EPS_STREAM: u64 = 62;
const MOTION_EPS_STREAM: u64 = 63;
const ROLLOUT_SALT: u64 = 0x0a11_0000;

pub fn draw_chunks(cfg: &DistillConfig, seed: u64) -> Draw {
    let mut rng = seeded_rng(seed, DRAW_STREAM);
    let k = match cfg.chunk_schedule {
        ChunkSchedule::Fixed(k) => k,
        ChunkSchedule::RandomUniform => rng.gen_range(1..=cfg.k_max),
    };
    let t_index = rng.gen_range(0..cfg.sampler.steps);
    Draw { k, t_index }
}

fn chunk_seed(seed: u64, j: usize) -> u64 {
    derive_seed(seed ^ ROLLOUT_SALT, j as u64)
}

fn signal_window(cfg: &DistillConfig, j: usize) -> std::ops::Range<usize> {
    let start = j * cfg.new_frames();
    start..start + cfg.chunk_len
}

/// Generates `draw.k` chunks and returns the trace plus the input of step
/// `draw.t_index` of the last chunk.
pub fn rollout<G: Denoiser + ?Sized>(
    gen: &G,
    cfg: &DistillConfig,
    w: &Window,
    draw: Draw,
    seed: u64,
) -> Result<(RolloutTrace, CompositeInput)> {
    check_draw(cfg, w, draw)?;
    let lm = cfg.motion_len;
    let mut chunks: Vec<LatentChunk> = Vec::with_capacity(draw.k);
    let mut provenance = Vec::with_capacity(draw.k);
    let mut step_input = None;
    for j in 0..draw.k {
        let motion = match chunks.last() {
            None => w.motion(lm).to_owned(),
            Some(prev) => prev.tail(lm).to_owned(),
        };
        provenance.push(if j == 0 { MotionProvenance::GroundTruth } else { MotionProvenance::SelfGenerated });
        let signal = &w.signal[signal_window(cfg, j)];
        let mut st = SamplerState::new(&cfg.sampler, motion.view(), w.reference(), signal, chunk_seed(seed, j))?;
        let mut last = None;
        while !st.is_done() {
            let input = st.input()?;
            let pred = gen.predict(&input)?;
            let x0 = pred.slice(s![lm.., ..]).to_owned();
            if j + 1 == draw.k && st.step() == draw.t_index {
                step_input = Some(input);
            }
            st.advance(x0.view());
            last = Some(x0);
        }
        chunks.push(assemble_chunk(motion.view(), last.expect("plan has at least one step")));
    }
    let trace = RolloutTrace { chunks, sampled_k: draw.k, sampled_t_prime_index: draw.t_index, provenance };
    Ok((trace, step_input.expect("t_index checked against the plan")))
}

fn assemble_chunk(motion: ArrayView2<'_, f64>, target: Array2<f64>) -> LatentChunk {
    let lm = motion.nrows();
    let mut latents = Array2::zeros((lm + target.nrows(), target.ncols()));
    latents.slice_mut(s![..lm, ..]).assign(&motion);
    latents.slice_mut(s![lm.., ..]).assign(&target);
    LatentChunk { latents, motion_len: lm }
}

fn check_draw(cfg: &DistillConfig, w: &Window, draw: Draw) -> Result<()> {
    if draw.k == 0 || draw.k > cfg.k_max {
        return Err(invalid(format!("k = {} outside 1..={}", draw.k, cfg.k_max)));
    }
    if draw.t_index >= cfg.sampler.steps {
        return Err(invalid(format!("t' index {} outside the {}-step ladder", draw.t_index, cfg.sampler.steps)));
    }
    if w.is_empty() {
        return Err(invalid("empty batch"));
    }
    if w.len() < cfg.window_len(draw.k) {
        return Err(invalid(format!("window of {} frames is too short for {} chunks", w.len(), draw.k)));
    }
    Ok(())
}

/// The re-noised generator sample as seen by the score networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreInput {
    pub input: CompositeInput,
    pub t: f64,
    /// Motion-row noise level (0 when off).
    pub t_motion: f64,
}

/// Builds `ψ(G, t)` on the target rows, with motion rows from `motion_source`
/// (plus optional noise). All randomness comes from `seed`.
pub fn score_input(
    cfg: &DistillConfig,
    w: &Window,
    k: usize,
    step_input: &CompositeInput,
    g: ArrayView2<'_, f64>,
    seed: u64,
) -> Result<ScoreInput> {
    let lm = cfg.motion_len;
    let mut rng = seeded_rng(seed, SCORE_STREAM);
    let t = rng.gen_range(cfg.t_min..=1.0);
    let g_target = g.slice(s![lm.., ..]);
    let eps = standard_normal(g_target.nrows(), g_target.ncols(), seed, EPS_STREAM);
    let z_t = forward_diffuse(g_target, t, eps.view())?;
    let mut motion = match cfg.motion_source {
        MotionSource::GroundTruth => {
            let start = (k - 1) * cfg.new_frames();
            w.latents.slice(s![start..start + lm, ..]).to_owned()
        }
        MotionSource::Predicted => step_input.z_noise.slice(s![..lm, ..]).to_owned(),
    };
    let mut t_motion = 0.0;
    if let MotionNoise::On(max) = cfg.motion_noise {
        t_motion = rng.gen_range(0.0..=max);
        let eps_m = standard_normal(lm, motion.ncols(), seed, MOTION_EPS_STREAM);
        motion = forward_diffuse(motion.view(), t_motion, eps_m.view())?;
    }
    let input = CompositeInput::from_noised(motion.view(), z_t.view(), w.reference(), t, &step_input.signal)?;
    Ok(ScoreInput { input, t, t_motion })
}

/// Generator cotangent `−α(t)·(s_real − s_fake)` and the norm of the score difference.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub cotangent: Array2<f64>,
    pub d_norm: f64,
    pub score: ScoreInput,
}

#[allow(clippy::too_many_arguments)]
pub fn dmd_direction<R: Denoiser + ?Sized, F: Denoiser + ?Sized>(
    real: &R,
    fake: &F,
    cfg: &DistillConfig,
    w: &Window,
    k: usize,
    step_input: &CompositeInput,
    g: ArrayView2<'_, f64>,
    seed: u64,
) -> Result<Direction> {
    let score = score_input(cfg, w, k, step_input, g, seed)?;
    let (z, t) = (&score.input.z_noise, score.t);
    let x_real = real.predict(&score.input)?;
    let x_fake = fake.predict(&score.input)?;
    let mut d = score_from_x0(z.view(), t, x_real.view())? - score_from_x0(z.view(), t, x_fake.view())?;
    let lm = cfg.motion_len;
    let rows = if cfg.motion_in_loss { 0 } else { lm };
    d.slice_mut(s![..rows, ..]).fill(0.0);
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("score difference is not finite at t = {t}")));
    }
    let d_norm = d.mapv(|v| v * v).sum().sqrt();
    let alpha = NoiseSchedule::default().alpha(t);
    let mut cotangent = d * (-alpha);
    if cfg.normalize {
        let gap = (&g.slice(s![rows.., ..]) - &x_real.slice(s![rows.., ..])).mapv(f64::abs);
        let scale = gap.mean().unwrap_or(0.0);
        if scale > 0.0 {
            cotangent /= scale;
        }
    }
    Ok(Direction { cotangent, d_norm, score })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmdStepReport {
    pub trace: RolloutTrace,
    /// Input of the differentiated sampler step.
    pub step_input: CompositeInput,
    /// Generator x0 output at that step (all rows).
    pub g: Array2<f64>,
    pub direction: Direction,
    pub grad_norm: f64,
}

/// Accumulates the truncated DMD gradient for a fixed draw into `gen`'s buffers.
pub fn dmd_gradient<G, R, F>(
    gen: &mut G,
    real: &R,
    fake: &F,
    cfg: &DistillConfig,
    w: &Window,
    draw: Draw,
    seed: u64,
) -> Result<DmdStepReport>
where
    G: Trainable,
    R: Denoiser + ?Sized,
    F: Denoiser + ?Sized,
{
    let (trace, step_input) = rollout(&*gen, cfg, w, draw, seed)?;
    let g = gen.predict(&step_input)?;
    let direction = dmd_direction(real, fake, cfg, w, draw.k, &step_input, g.view(), seed)?;
    gen.backward(&step_input, direction.cotangent.view())?;
    Ok(DmdStepReport { trace, step_input, g, direction, grad_norm: gen.params().grad_norm() })
}

/// Draws `(k, t′)`, computes the truncated gradient and applies one update.
pub fn dmd_generator_step<G, R, F>(
    gen: &mut G,
    real: &R,
    fake: &F,
    cfg: &DistillConfig,
    w: &Window,
    opt: &mut Optimizer,
    seed: u64,
) -> Result<DmdStepReport>
where
    G: Trainable,
    R: Denoiser + ?Sized,
    F: Denoiser + ?Sized,
{
    cfg.check()?;
    let draw = draw_chunks(cfg, seed);
    gen.params_mut().zero_grad();
    let report = dmd_gradient(gen, real, fake, cfg, w, draw, seed)?;
    opt.step(gen.params_mut());
    Ok(report)
}

/// Per-`(k, t′)` gradients from a single full rollout of `k_max` chunks,
/// every sampler input recorded. Independent of [`rollout`]'s truncation.
pub fn full_trace_gradients<G, R, F>(
    gen: &mut G,
    real: &R,
    fake: &F,
    cfg: &DistillConfig,
    w: &Window,
    seed: u64,
) -> Result<Vec<(Draw, Vec<f64>)>>
where
    G: Trainable,
    R: Denoiser + ?Sized,
    F: Denoiser + ?Sized,
{
    cfg.check()?;
    check_draw(cfg, w, Draw { k: cfg.k_max, t_index: 0 })?;
    let lm = cfg.motion_len;
    let mut inputs: Vec<Vec<CompositeInput>> = Vec::with_capacity(cfg.k_max);
    let mut motion = w.motion(lm).to_owned();
    for j in 0..cfg.k_max {
        let signal = &w.signal[signal_window(cfg, j)];
        let mut st = SamplerState::new(&cfg.sampler, motion.view(), w.reference(), signal, chunk_seed(seed, j))?;
        let mut per_step = Vec::with_capacity(cfg.sampler.steps);
        let mut last = None;
        while !st.is_done() {
            let input = st.input()?;
            let x0 = gen.predict(&input)?.slice(s![lm.., ..]).to_owned();
            per_step.push(input);
            st.advance(x0.view());
            last = Some(x0);
        }
        let chunk = assemble_chunk(motion.view(), last.expect("plan has at least one step"));
        motion = chunk.tail(lm).to_owned();
        inputs.push(per_step);
    }
    let mut out = Vec::with_capacity(cfg.k_max * cfg.sampler.steps);
    for (j, per_step) in inputs.iter().enumerate() {
        for (i, input) in per_step.iter().enumerate() {
            gen.params_mut().zero_grad();
            let g = gen.predict(input)?;
            let dir = dmd_direction(real, fake, cfg, w, j + 1, input, g.view(), seed)?;
            gen.backward(input, dir.cotangent.view())?;
            out.push((Draw { k: j + 1, t_index: i }, gen.params().flat_grads()));
        }
    }
    Ok(out)
}

/// One denoising-regression update of the fake score on a generator sample.
/// Returns the loss before the update.
pub fn fake_score_step<F, G>(
    fake: &mut F,
    gen: &G,
    cfg: &DistillConfig,
    w: &Window,
    opt: &mut Optimizer,
    seed: u64,
) -> Result<f64>
where
    F: Trainable,
    G: Denoiser + ?Sized,
{
    cfg.check()?;
    let draw = draw_chunks(cfg, seed);
    let (_, step_input) = rollout(gen, cfg, w, draw, seed)?;
    let g = gen.predict(&step_input)?;
    let score = score_input(cfg, w, draw.k, &step_input, g.view(), seed)?;
    let lm = cfg.motion_len;
    let pred = fake.predict(&score.input)?;
    let diff = &pred.slice(s![lm.., ..]) - &g.slice(s![lm.., ..]);
    let n = diff.len() as f64;
    let loss = diff.mapv(|v| v * v).sum() / n;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("fake-score loss became {loss}")));
    }
    let mut cot = Array2::zeros(pred.raw_dim());
    cot.slice_mut(s![lm.., ..]).assign(&(&diff * (2.0 / n)));
    fake.params_mut().zero_grad();
    fake.backward(&score.input, cot.view())?;
    opt.step(fake.params_mut());
    Ok(loss)
}

/// One line of the distillation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillLogLine {
    pub step: usize,
    pub k: usize,
    /// Index of the differentiated step in the sampler ladder.
    pub t_prime: usize,
    pub grad_norm: f64,
    pub d_norm: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub generator: DenoiserNet,
    pub fake_score: DenoiserNet,
    pub log: Vec<DistillLogLine>,
    pub generator_steps: usize,
    pub fake_steps: usize,
    pub wall_ms: f64,
}

const GEN_WINDOW_STREAM: u64 = 64;
const FAKE_WINDOW_STREAM: u64 = 65;
const FAKE_SALT: u64 = 0xfa4e_0000;

/// Full stage-2 loop. The real score is `sft` itself and is never written.
pub fn distill(
    sft: &DenoiserNet,
    data: &Dataset,
    cfg: &DistillConfig,
    seed: u64,
    mut on_log: impl FnMut(&DistillLogLine),
) -> Result<DistillOutcome> {
    cfg.check()?;
    let real = sft;
    let mut gen = sft.clone();
    let mut fake = sft.clone();
    let mut opt_g = Optimizer::new(cfg.step_rule, cfg.generator_lr);
    let mut opt_f = Optimizer::new(cfg.step_rule, cfg.fake_lr);
    let len = cfg.window_len(cfg.k_max);
    let mut log = Vec::with_capacity(cfg.steps);
    let mut fake_steps = 0;
    let start = Instant::now();
    for step in 0..cfg.steps {
        let tick = Instant::now();
        for r in 0..cfg.update_ratio {
            let idx = (step * cfg.update_ratio + r) as u64;
            let w = data.sample_window(&mut step_rng(seed, FAKE_WINDOW_STREAM, idx), len)?;
            fake_score_step(&mut fake, &gen, cfg, &w, &mut opt_f, derive_seed(seed ^ FAKE_SALT, idx))?;
            fake_steps += 1;
        }
        let w = data.sample_window(&mut step_rng(seed, GEN_WINDOW_STREAM, step as u64), len)?;
        let rep = dmd_generator_step(&mut gen, real, &fake, cfg, &w, &mut opt_g, derive_seed(seed, step as u64))?;
        let line = DistillLogLine {
            step,
            k: rep.trace.sampled_k,
            t_prime: rep.trace.sampled_t_prime_index,
            grad_norm: rep.grad_norm,
            d_norm: rep.direction.d_norm,
            wall_ms: tick.elapsed().as_secs_f64() * 1e3,
        };
        on_log(&line);
        log.push(line);
    }
    Ok(DistillOutcome {
        generator: gen,
        fake_score: fake,
        generator_steps: log.len(),
        log,
        fake_steps,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
