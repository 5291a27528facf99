use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::world::{sample_driving_signal, World};
use crate::{derive_seed, seeded_rng};

/// Training-data layout: how many sequences, how long, and the chunk window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub sequences: usize,
    pub eval_sequences: usize,
    pub sequence_len: usize,
    /// Leading frames skipped so windows start near the stationary regime.
    pub burn_in: usize,
    pub chunk_len: usize,
    pub motion_len: usize,
    pub batch_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            sequences: 48,
            eval_sequences: 8,
            sequence_len: 240,
            burn_in: 20,
            chunk_len: 9,
            motion_len: 2,
            batch_size: 8,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.sequences == 0 {
            errs.push("data.sequences must be positive".into());
        }
        if self.eval_sequences == 0 {
            errs.push("data.eval_sequences must be positive".into());
        }
        if self.batch_size == 0 {
            errs.push("data.batch_size must be positive".into());
        }
        if self.motion_len >= self.chunk_len {
            errs.push("data.motion_len must be smaller than data.chunk_len".into());
        }
        if self.burn_in + self.chunk_len > self.sequence_len {
            errs.push("data.sequence_len must cover data.burn_in plus one chunk".into());
        }
        errs
    }

    pub fn new_frames(&self) -> usize {
        self.chunk_len - self.motion_len
    }
}

/// One simulated sequence in latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub identity: Vec<f64>,
    pub signal: Vec<f64>,
    pub latents: Array2<f64>,
    /// Encoded reference frame for this identity.
    pub reference: Array1<f64>,
}

/// A contiguous slice of a sequence: ground-truth latents and driving samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub latents: Array2<f64>,
    pub signal: Vec<f64>,
    pub reference: Array1<f64>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    pub fn motion(&self, lm: usize) -> ArrayView2<'_, f64> {
        self.latents.slice(s![..lm, ..])
    }

    pub fn target(&self, lm: usize) -> ArrayView2<'_, f64> {
        self.latents.slice(s![lm.., ..])
    }

    pub fn reference(&self) -> ArrayView1<'_, f64> {
        self.reference.view()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Sequence>,
    pub eval: Vec<Sequence>,
    burn_in: usize,
}

const EVAL_SALT: u64 = 0xe7a1_0000_0000_0000;

impl Dataset {
    /// Simulates every sequence; a pure function of `(world, cfg, seed)`.
    pub fn generate(world: &World, cfg: &DataConfig, seed: u64) -> Result<Self> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(invalid(errs.join("; ")));
        }
        let make = |s: u64| simulate_sequence(world, s, cfg.sequence_len);
        let train = (0..cfg.sequences as u64).map(|i| make(derive_seed(seed, i))).collect::<Result<_>>()?;
        let eval = (0..cfg.eval_sequences as u64)
            .map(|i| make(derive_seed(seed ^ EVAL_SALT, i)))
            .collect::<Result<_>>()?;
        Ok(Self { train, eval, burn_in: cfg.burn_in })
    }

    /// Window of `len` frames from a uniformly drawn training sequence and start.
    pub fn sample_window(&self, rng: &mut impl Rng, len: usize) -> Result<Window> {
        let seq = &self.train[rng.gen_range(0..self.train.len())];
        let last = seq.signal.len().checked_sub(len).filter(|&l| l >= self.burn_in);
        let last = last.ok_or_else(|| invalid(format!("window of {len} frames does not fit the sequences")))?;
        let start = rng.gen_range(self.burn_in..=last);
        Ok(window(seq, start, len))
    }

    /// Deterministic held-out windows: `count` per eval sequence, evenly spaced.
    pub fn eval_windows(&self, len: usize, count: usize) -> Result<Vec<Window>> {
        let mut out = Vec::new();
        for seq in &self.eval {
            let span = seq.signal.len().checked_sub(len + self.burn_in);
            let span = span.ok_or_else(|| invalid(format!("window of {len} frames does not fit the sequences")))?;
            for c in 0..count {
                let start = self.burn_in + span * c / count.max(1);
                out.push(window(seq, start, len));
            }
        }
        Ok(out)
    }
}

pub fn simulate_sequence(world: &World, seed: u64, len: usize) -> Result<Sequence> {
    let identity = world.sample_identity(derive_seed(seed, 0));
    let signal = sample_driving_signal(derive_seed(seed, 1), len)?;
    let frames = world.simulate(&signal, &identity, derive_seed(seed, 2))?;
    let latents = world.codec().encode(frames.frames.view())?;
    let reference = world.codec().encode_frame(world.reference_frame(&identity)?.view())?;
    Ok(Sequence { identity, signal: signal.samples, latents, reference })
}

fn window(seq: &Sequence, start: usize, len: usize) -> Window {
    Window {
        latents: seq.latents.slice(s![start..start + len, ..]).to_owned(),
        signal: seq.signal[start..start + len].to_vec(),
        reference: seq.reference.clone(),
    }
}

/// Rng for the `step`-th draw of a named training stream.
pub(crate) fn step_rng(seed: u64, stream: u64, step: u64) -> rand_chacha::ChaCha8Rng {
    seeded_rng(derive_seed(seed, step), stream)
}
