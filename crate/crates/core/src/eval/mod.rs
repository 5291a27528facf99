//! Toy metric suite and the ablation harnesses.
//!
//! * `toy_sync`: lag-maximised correlation between `tanh(drive)` and the
//!   generated mouth channel (stand-in for a lip-sync confidence).
//! * `identity_drift`: distance of a bucket's mean frame from the identity's
//!   fixed point under the bucket's mean drive.
//! * `consistency`: `1 / (1 + mean squared jerk)`.

mod ablation;
mod metrics;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

pub use ablation::{
    ablate_chunks, ablate_motion, generated_quality, median, schedule_label, AblationBudget, ChunkAblation, ChunkRow,
    ChunkSummary, MotionAblation, MotionCell, MotionRow, MotionSummary,
};
pub use metrics::{
    bucket_reports, consistency, identity_drift, noise_floor, pearson, toy_sync, BucketReport, DriftReport,
    SyncReport, MAX_LAG,
};

use crate::diffusion::SamplerPlan;
use crate::error::{invalid, Result};
use crate::net::Denoiser;
use crate::stream::ChunkGenerator;
use crate::world::{sample_driving_signal, World, FRAME_RATE};
use crate::derive_seed;

/// Fixed-seed evaluation streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    pub streams: usize,
    pub seed: u64,
    pub horizon_s: f64,
    pub bucket_s: f64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { streams: 4, seed: 2024, horizon_s: SHORT_HORIZON_S, bucket_s: 10.0 }
    }
}

pub const SHORT_HORIZON_S: f64 = 10.0;
pub const LONG_HORIZON_S: f64 = 300.0;

/// Frames skipped before ground-truth streams are scored.
pub const ORACLE_BURN_IN: usize = 50;

impl EvalSpec {
    pub fn frames(&self) -> usize {
        (self.horizon_s * FRAME_RATE).round() as usize
    }

    pub fn bucket_frames(&self) -> usize {
        ((self.bucket_s * FRAME_RATE).round() as usize).max(1)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.streams == 0 {
            errs.push("eval.streams must be positive".into());
        }
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            errs.push("eval.horizon_s must be positive".into());
        }
        if !(self.bucket_s > 0.0 && self.bucket_s.is_finite()) {
            errs.push("eval.bucket_s must be positive".into());
        }
        errs
    }

    /// Identity and drive of evaluation stream `i`.
    pub fn stream_inputs(&self, world: &World, i: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let base = derive_seed(self.seed, i as u64);
        let identity = world.sample_identity(derive_seed(base, 0));
        let drive = sample_driving_signal(derive_seed(base, 1), self.frames() + ORACLE_BURN_IN)?.samples;
        Ok((identity, drive))
    }
}

/// Where evaluated frames come from.
pub enum FrameSource<'a> {
    /// Autoregressive chunked sampling from a denoiser.
    Generator { denoiser: &'a dyn Denoiser, plan: SamplerPlan, chunk_len: usize, motion_len: usize, seed: u64 },
    /// Ground-truth simulation of the world.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEval {
    pub identity: Vec<f64>,
    pub frames: usize,
    pub overall: SyncReport,
    pub buckets: Vec<BucketReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub horizon_s: f64,
    pub streams: Vec<StreamEval>,
    /// Mean whole-stream toy_sync over streams with a defined value.
    pub mean_sync: Option<f64>,
    /// Mean toy_sync of each stream's last bucket.
    pub last_bucket_sync: Option<f64>,
    pub mean_drift: f64,
    pub mean_consistency: f64,
}

/// Generated (or ground-truth) frames and the drive they align with.
pub fn stream_frames(world: &World, source: &FrameSource<'_>, spec: &EvalSpec, i: usize) -> Result<(Array2<f64>, Vec<f64>, Vec<f64>)> {
    let (identity, drive) = spec.stream_inputs(world, i)?;
    let n = spec.frames();
    match source {
        FrameSource::Oracle => {
            let sig = crate::world::DrivingSignal::new(drive.clone())?;
            let seq = world.simulate(&sig, &identity, derive_seed(derive_seed(spec.seed, i as u64), 3))?;
            let frames = seq.frames.slice(s![ORACLE_BURN_IN.., ..]).to_owned();
            Ok((frames, drive[ORACLE_BURN_IN..].to_vec(), identity))
        }
        FrameSource::Generator { denoiser, plan, chunk_len, motion_len, seed } => {
            let reference = world.codec().encode_frame(world.reference_frame(&identity)?.view())?;
            let gen = ChunkGenerator::new(
                *denoiser,
                plan.clone(),
                *chunk_len,
                *motion_len,
                reference,
                derive_seed(*seed, i as u64),
            )?;
            let drive = drive[..n].to_vec();
            let latents = gen.generate_all(&drive)?;
            if latents.nrows() == 0 {
                return Err(invalid("horizon is shorter than one chunk"));
            }
            let frames = world.codec().decode(latents.view())?;
            let len = frames.nrows();
            Ok((frames, drive[..len].to_vec(), identity))
        }
    }
}

pub fn evaluate(world: &World, source: &FrameSource<'_>, spec: &EvalSpec) -> Result<EvalReport> {
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(invalid(errs.join("; ")));
    }
    let mut streams = Vec::with_capacity(spec.streams);
    for i in 0..spec.streams {
        let (frames, drive, identity) = stream_frames(world, source, spec, i)?;
        let mouth = world.mouth_channel(frames.view());
        let overall = toy_sync(&drive, &mouth);
        let buckets = bucket_reports(world, frames.view(), &drive, &identity, spec.bucket_frames(), FRAME_RATE)?;
        streams.push(StreamEval { identity, frames: frames.nrows(), overall, buckets });
    }
    let mean_opt = |vals: Vec<Option<f64>>| {
        let v: Vec<f64> = vals.into_iter().flatten().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let mean_sync = mean_opt(streams.iter().map(|s| s.overall.toy_sync).collect());
    let last_bucket_sync = mean_opt(streams.iter().map(|s| s.buckets.last().and_then(|b| b.sync.toy_sync)).collect());
    let all: Vec<&BucketReport> = streams.iter().flat_map(|s| &s.buckets).collect();
    let nb = all.len().max(1) as f64;
    let mean_drift = all.iter().map(|b| b.drift.identity_drift).sum::<f64>() / nb;
    let mean_consistency = all.iter().map(|b| b.drift.consistency).sum::<f64>() / nb;
    Ok(EvalReport { horizon_s: spec.horizon_s, streams, mean_sync, last_bucket_sync, mean_drift, mean_consistency })
}
