use ndarray::{s, Array1, Array2, ArrayView2};

use crate::diffusion::{few_step_sample, LatentChunk, SamplerPlan};
use crate::error::{invalid, Result};
use crate::net::Denoiser;
use crate::derive_seed;

/// Chunk-level autoregressive generation without threads or timing.
///
/// Chunk `n` produces frames `[n·N, (n+1)·N)` with `N = L_c − L_m`. Its
/// conditioning window holds the driving samples of its motion frames
/// (indices `n·N − L_m ..`, zero before the stream starts) followed by its
/// own `N` samples, so it never reads a sample of chunk `n + 1`.
#[derive(Debug, Clone)]
pub struct ChunkGenerator<D> {
    denoiser: D,
    plan: SamplerPlan,
    chunk_len: usize,
    motion_len: usize,
    reference: Array1<f64>,
    seed: u64,
}

impl<D: Denoiser> ChunkGenerator<D> {
    pub fn new(
        denoiser: D,
        plan: SamplerPlan,
        chunk_len: usize,
        motion_len: usize,
        reference: Array1<f64>,
        seed: u64,
    ) -> Result<Self> {
        plan.check()?;
        if motion_len >= chunk_len {
            return Err(invalid("motion_len must be smaller than chunk_len"));
        }
        Ok(Self { denoiser, plan, chunk_len, motion_len, reference, seed })
    }

    pub fn new_frames(&self) -> usize {
        self.chunk_len - self.motion_len
    }

    pub fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    pub fn motion_len(&self) -> usize {
        self.motion_len
    }

    pub fn reference(&self) -> &Array1<f64> {
        &self.reference
    }

    pub fn denoiser(&self) -> &D {
        &self.denoiser
    }

    /// `L_m` copies of the encoded reference frame.
    pub fn cold_motion(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.motion_len, self.reference.len()));
        for mut row in m.rows_mut() {
            row.assign(&self.reference);
        }
        m
    }

    /// Conditioning window of chunk `n` taken from a full drive sequence.
    pub fn signal_window(&self, drive: &[f64], n: usize) -> Vec<f64> {
        let start = (n * self.new_frames()) as isize - self.motion_len as isize;
        (0..self.chunk_len as isize)
            .map(|i| {
                let idx = start + i;
                if idx < 0 {
                    0.0
                } else {
                    drive[idx as usize]
                }
            })
            .collect()
    }

    /// Samples chunk `n` given its motion rows and conditioning window.
    pub fn generate<'a>(&'a self, n: usize, motion: ArrayView2<'a, f64>, window: &'a [f64]) -> Result<LatentChunk> {
        if window.len() != self.chunk_len {
            return Err(invalid(format!("chunk window has {} samples, expected {}", window.len(), self.chunk_len)));
        }
        few_step_sample(
            &self.denoiser,
            &self.plan,
            motion,
            self.reference.view(),
            window,
            derive_seed(self.seed, n as u64),
        )
    }

    /// Serially generates every complete chunk covered by `drive`; returns
    /// the new-frame latents in order (`chunks · N` rows).
    pub fn generate_all(&self, drive: &[f64]) -> Result<Array2<f64>> {
        let n_new = self.new_frames();
        let chunks = drive.len() / n_new;
        let mut out = Array2::zeros((chunks * n_new, self.reference.len()));
        let mut motion = self.cold_motion();
        for n in 0..chunks {
            let chunk = self.generate(n, motion.view(), &self.signal_window(drive, n))?;
            out.slice_mut(s![n * n_new..(n + 1) * n_new, ..]).assign(&chunk.targets());
            motion = chunk.tail(self.motion_len).to_owned();
        }
        Ok(out)
    }
}
