//! Closed-form fixtures shared by the integration tests.
#![allow(dead_code)]

use ftlk_core::diffusion::{CompositeInput, NoiseSchedule};
use ftlk_core::distill::Window;
use ftlk_core::net::{Denoiser, InputCotangent, ParamStore, Trainable};
use ftlk_core::Result;
use ndarray::{Array1, Array2, ArrayView2};

/// `G(z) = θ·z` applied to every row of `z_noise`.
pub struct LinearGenerator {
    params: ParamStore,
}

impl LinearGenerator {
    pub fn new(theta: f64) -> Self {
        let mut params = ParamStore::new();
        params.push("theta", vec![1], vec![theta]).unwrap();
        Self { params }
    }

    pub fn theta(&self) -> f64 {
        self.params.value(0)[0]
    }
}

impl Denoiser for LinearGenerator {
    fn predict(&self, input: &CompositeInput) -> Result<Array2<f64>> {
        Ok(&input.z_noise * self.theta())
    }
}

impl Trainable for LinearGenerator {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn backward(&mut self, input: &CompositeInput, cotangent: ArrayView2<'_, f64>) -> Result<InputCotangent> {
        self.params.grad_mut(0)[0] += (&cotangent * &input.z_noise).sum();
        Ok(InputCotangent { z_noise: cotangent.to_owned() * self.theta(), signal: vec![0.0; input.len()] })
    }
}

/// Exact posterior-mean denoiser for data `x0 ~ N(μ, s²)` per coordinate.
pub struct GaussianScore {
    pub mu: f64,
    pub var: f64,
}

impl GaussianScore {
    /// Closed-form marginal score of `z_t = α x0 + σ ε`.
    pub fn marginal_score(&self, z: f64, t: f64) -> f64 {
        let s = NoiseSchedule::default();
        let (a, sg) = (s.alpha(t), s.sigma(t));
        -(z - a * self.mu) / (a * a * self.var + sg * sg)
    }
}

impl Denoiser for GaussianScore {
    fn predict(&self, input: &CompositeInput) -> Result<Array2<f64>> {
        let s = NoiseSchedule::default();
        let mut out = input.z_noise.clone();
        for (r, mut row) in out.rows_mut().into_iter().enumerate() {
            let t = input.timesteps[r];
            let (a, sg) = (s.alpha(t), s.sigma(t));
            let gain = a * self.var / (a * a * self.var + sg * sg);
            row.mapv_inplace(|z| self.mu + gain * (z - a * self.mu));
        }
        Ok(out)
    }
}

/// A window of `len` frames with deterministic pseudo-random content.
pub fn synthetic_window(len: usize, d: usize, seed: u64) -> Window {
    let latents = ftlk_core::diffusion::standard_normal(len, d, seed, 500);
    let signal = ftlk_core::diffusion::standard_normal(1, len, seed, 501).iter().map(|v| v.tanh()).collect();
    let reference = Array1::from_iter(ftlk_core::diffusion::standard_normal(1, d, seed, 502));
    Window { latents, signal, reference }
}
