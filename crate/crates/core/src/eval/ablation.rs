use ndarray::s;
use serde::{Deserialize, Serialize};

use super::{evaluate, EvalSpec, FrameSource};
use crate::distill::{
    denoise_mse, distill, ChunkSchedule, Dataset, DistillConfig, MotionNoise, MotionSource, Window,
};
use crate::error::{invalid, Result};
use crate::net::{Denoiser, DenoiserNet};
use crate::stream::ChunkGenerator;
use crate::world::World;
use crate::derive_seed;

/// Shared seeds and evaluation horizons for an ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationBudget {
    pub seeds: Vec<u64>,
    pub short: EvalSpec,
    pub long: EvalSpec,
}

impl Default for AblationBudget {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            short: EvalSpec::default(),
            long: EvalSpec { horizon_s: 120.0, bucket_s: 30.0, streams: 2, ..EvalSpec::default() },
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRow {
    pub schedule: String,
    pub seed: u64,
    pub wall_ms: f64,
    pub short_sync: Option<f64>,
    pub long_sync: Option<f64>,
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkSummary {
    pub schedule: String,
    pub wall_ms: f64,
    pub short_sync: f64,
    pub long_sync: f64,
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkAblation {
    pub rows: Vec<ChunkRow>,
    /// Seed medians per schedule.
    pub summary: Vec<ChunkSummary>,
}

impl ChunkAblation {
    pub fn summary_for(&self, schedule: &str) -> Option<&ChunkSummary> {
        self.summary.iter().find(|s| s.schedule == schedule)
    }
}

pub fn schedule_label(s: ChunkSchedule, k_max: usize) -> String {
    match s {
        ChunkSchedule::Fixed(k) => format!("fixed_{k}"),
        ChunkSchedule::RandomUniform => format!("random_1_{k_max}"),
    }
}

fn generator_source<'a>(gen: &'a dyn Denoiser, cfg: &DistillConfig, seed: u64) -> FrameSource<'a> {
    FrameSource::Generator {
        denoiser: gen,
        plan: cfg.sampler.clone(),
        chunk_len: cfg.chunk_len,
        motion_len: cfg.motion_len,
        seed,
    }
}

/// Distils once per (schedule, seed) under an equal generator-step budget.
pub fn ablate_chunks(
    world: &World,
    sft: &DenoiserNet,
    data: &Dataset,
    base: &DistillConfig,
    budget: &AblationBudget,
) -> Result<ChunkAblation> {
    if budget.seeds.is_empty() {
        return Err(invalid("ablation needs at least one seed"));
    }
    let schedules = [
        ChunkSchedule::Fixed(1),
        ChunkSchedule::Fixed(3),
        ChunkSchedule::Fixed(5),
        ChunkSchedule::RandomUniform,
    ];
    let mut rows = Vec::new();
    for schedule in schedules {
        let cfg = DistillConfig { chunk_schedule: schedule, k_max: base.k_max.max(5), ..base.clone() };
        for &seed in &budget.seeds {
            let out = distill(sft, data, &cfg, seed, |_| {})?;
            let src = generator_source(&out.generator, &cfg, seed);
            let short = evaluate(world, &src, &budget.short)?;
            let long = evaluate(world, &src, &budget.long)?;
            rows.push(ChunkRow {
                schedule: schedule_label(schedule, cfg.k_max),
                seed,
                wall_ms: out.wall_ms,
                short_sync: short.mean_sync,
                long_sync: long.last_bucket_sync,
                drift: long.mean_drift,
            });
        }
    }
    let mut summary = Vec::new();
    for schedule in schedules {
        let label = schedule_label(schedule, base.k_max.max(5));
        let of = |f: &dyn Fn(&ChunkRow) -> f64| {
            median(&rows.iter().filter(|r| r.schedule == label).map(f).collect::<Vec<_>>())
        };
        summary.push(ChunkSummary {
            schedule: label.clone(),
            wall_ms: of(&|r| r.wall_ms),
            short_sync: of(&|r| r.short_sync.unwrap_or(f64::NAN)),
            long_sync: of(&|r| r.long_sync.unwrap_or(f64::NAN)),
            drift: of(&|r| r.drift),
        });
    }
    Ok(ChunkAblation { rows, summary })
}

/// Negated teacher denoising MSE at `t = 0.5` on generated chunks.
pub fn generated_quality(
    world: &World,
    teacher: &dyn Denoiser,
    gen: &dyn Denoiser,
    cfg: &DistillConfig,
    spec: &EvalSpec,
) -> Result<f64> {
    let mut windows = Vec::new();
    for i in 0..spec.streams {
        let (identity, drive) = spec.stream_inputs(world, i)?;
        let drive = &drive[..spec.frames()];
        let reference = world.codec().encode_frame(world.reference_frame(&identity)?.view())?;
        let g = ChunkGenerator::new(
            gen,
            cfg.sampler.clone(),
            cfg.chunk_len,
            cfg.motion_len,
            reference.clone(),
            derive_seed(spec.seed, i as u64),
        )?;
        let latents = g.generate_all(drive)?;
        let n_new = g.new_frames();
        let lm = cfg.motion_len;
        // chunk n ≥ 1 spans the previous chunk's tail plus its own frames
        for n in 1..latents.nrows() / n_new {
            let rows = latents.slice(s![n * n_new - lm..(n + 1) * n_new, ..]).to_owned();
            windows.push(Window { latents: rows, signal: g.signal_window(drive, n), reference: reference.clone() });
        }
    }
    Ok(-denoise_mse(teacher, &windows, cfg.motion_len, 0.5, spec.seed)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionCell {
    pub source: MotionSource,
    pub noise: bool,
    pub loss: bool,
}

impl MotionCell {
    pub fn all() -> Vec<MotionCell> {
        let mut out = Vec::with_capacity(8);
        for source in [MotionSource::GroundTruth, MotionSource::Predicted] {
            for noise in [true, false] {
                for loss in [false, true] {
                    out.push(MotionCell { source, noise, loss });
                }
            }
        }
        out
    }

    pub fn apply(&self, base: &DistillConfig) -> DistillConfig {
        let level = match base.motion_noise {
            MotionNoise::On(m) => m,
            MotionNoise::Off => 0.25,
        };
        DistillConfig {
            motion_source: self.source,
            motion_noise: if self.noise { MotionNoise::On(level) } else { MotionNoise::Off },
            motion_in_loss: self.loss,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionRow {
    pub cell: MotionCell,
    pub seed: u64,
    pub quality: f64,
    pub short_sync: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSummary {
    pub cell: MotionCell,
    pub quality: f64,
    pub short_sync: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionAblation {
    pub rows: Vec<MotionRow>,
    pub summary: Vec<MotionSummary>,
}

impl MotionAblation {
    pub fn summary_for(&self, cell: MotionCell) -> Option<&MotionSummary> {
        self.summary.iter().find(|s| s.cell == cell)
    }
}

/// Distils each of the eight motion-conditioning cells per seed.
pub fn ablate_motion(
    world: &World,
    sft: &DenoiserNet,
    data: &Dataset,
    base: &DistillConfig,
    budget: &AblationBudget,
) -> Result<MotionAblation> {
    if budget.seeds.is_empty() {
        return Err(invalid("ablation needs at least one seed"));
    }
    let mut rows = Vec::new();
    for cell in MotionCell::all() {
        let cfg = cell.apply(base);
        for &seed in &budget.seeds {
            let out = distill(sft, data, &cfg, seed, |_| {})?;
            let quality = generated_quality(world, sft, &out.generator, &cfg, &budget.short)?;
            let short = evaluate(world, &generator_source(&out.generator, &cfg, seed), &budget.short)?;
            rows.push(MotionRow { cell, seed, quality, short_sync: short.mean_sync });
        }
    }
    let summary = MotionCell::all()
        .into_iter()
        .map(|cell| {
            let mine: Vec<&MotionRow> = rows.iter().filter(|r| r.cell == cell).collect();
            MotionSummary {
                cell,
                quality: median(&mine.iter().map(|r| r.quality).collect::<Vec<_>>()),
                short_sync: median(&mine.iter().map(|r| r.short_sync.unwrap_or(f64::NAN)).collect::<Vec<_>>()),
            }
        })
        .collect();
    Ok(MotionAblation { rows, summary })
}
