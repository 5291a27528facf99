//! The synthetic "talking dot" world.
//!
//! A driving scalar signal pushes a linear state through `tanh`; a fixed
//! identity vector sets the resting pose. The [`Codec`] is a lossless
//! orthogonal map between frame space and latent space.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seeded_rng;

/// Gain of the driving input along the mouth direction.
const INPUT_GAIN: f64 = 1.0;
/// Retention of the mouth block relative to the spectral radius.
const MOUTH_RETENTION: f64 = 0.55;
const IDENTITY_SCALE: f64 = 0.6;
/// Frames per second of every stream in this domain.
pub const FRAME_RATE: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub state_dim: usize,
    pub identity_dim: usize,
    pub dynamics_seed: u64,
    pub process_noise_sigma: f64,
    pub spectral_radius: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            state_dim: 8,
            identity_dim: 4,
            dynamics_seed: 0x5eed_0001,
            process_noise_sigma: 0.02,
            spectral_radius: 0.9,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.state_dim == 0 {
            errs.push("world.state_dim must be positive".into());
        }
        if self.identity_dim == 0 {
            errs.push("world.identity_dim must be positive".into());
        }
        if !(self.process_noise_sigma >= 0.0 && self.process_noise_sigma.is_finite()) {
            errs.push("world.process_noise_sigma must be a finite nonnegative real".into());
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius < 1.0) {
            errs.push("world.spectral_radius must lie in (0, 1)".into());
        }
        errs
    }
}

/// Orthogonal frame codec: `z = Q x`, `x = Qᵀ z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    q: Array2<f64>,
}

impl Codec {
    pub fn new(q: Array2<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(invalid("codec matrix must be square"));
        }
        Ok(Self { q })
    }

    pub fn identity(dim: usize) -> Self {
        Self { q: Array2::eye(dim) }
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.q.view()
    }

    /// Encodes frames (one per row) into latents.
    pub fn encode(&self, frames: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(frames)?;
        Ok(frames.dot(&self.q.t()))
    }

    pub fn decode(&self, latents: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(latents)?;
        Ok(latents.dot(&self.q))
    }

    pub fn encode_frame(&self, frame: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if frame.len() != self.dim() {
            return Err(invalid(format!("frame has dim {}, codec expects {}", frame.len(), self.dim())));
        }
        Ok(self.q.dot(&frame))
    }

    fn check(&self, rows: ArrayView2<'_, f64>) -> Result<()> {
        if rows.nrows() == 0 {
            return Err(invalid("codec input is empty"));
        }
        if rows.ncols() != self.dim() {
            return Err(invalid(format!("rows have dim {}, codec expects {}", rows.ncols(), self.dim())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrivingSignal {
    pub samples: Vec<f64>,
    pub frame_rate: f64,
}

impl DrivingSignal {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.iter().any(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(invalid("driving samples must be finite and within [-1, 1]"));
        }
        Ok(Self { samples, frame_rate: FRAME_RATE })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    /// One frame per row.
    pub frames: Array2<f64>,
    pub identity: Vec<f64>,
}

/// All constants derived from a [`WorldSpec`].
#[derive(Debug, Clone)]
pub struct World {
    spec: WorldSpec,
    transition: Array2<f64>,
    input: Array1<f64>,
    identity_proj: Array2<f64>,
    mouth: Array1<f64>,
    codec: Codec,
}

impl World {
    pub fn new(spec: WorldSpec) -> Result<Self> {
        let errs = spec.validate();
        if !errs.is_empty() {
            return Err(invalid(errs.join("; ")));
        }
        let d = spec.state_dim;
        let rho = spec.spectral_radius;
        let mut rng = seeded_rng(spec.dynamics_seed, 0);

        let basis = random_orthogonal(d, &mut rng);
        // Block-diagonal (in `basis`) scaled rotations: block 0 is the mouth.
        let n_pairs = d / 2;
        let n_blocks = n_pairs + d % 2;
        let mut block = Array2::<f64>::zeros((d, d));
        for bi in 0..n_blocks {
            let radius = if bi == 0 {
                MOUTH_RETENTION * rho
            } else if bi + 1 == n_blocks {
                rho
            } else {
                rng.gen_range(0.6 * rho..rho)
            };
            if bi < n_pairs {
                let angle = if bi == 0 { 0.0 } else { rng.gen_range(0.1..0.6) };
                let (s, c) = f64::sin_cos(angle);
                let i = 2 * bi;
                block[[i, i]] = radius * c;
                block[[i, i + 1]] = -radius * s;
                block[[i + 1, i]] = radius * s;
                block[[i + 1, i + 1]] = radius * c;
            } else {
                block[[d - 1, d - 1]] = radius;
            }
        }
        let transition = basis.dot(&block).dot(&basis.t());

        let mouth = basis.column(0).to_owned();
        let input = &mouth * INPUT_GAIN;

        // Identity lives in the middle blocks: away from the mouth and from
        // the slowest mode when there is room for both.
        let first = if d > 2 { 2 } else { 0 };
        let last = if n_blocks >= 3 { 2 * (n_blocks - 1) } else { d };
        let last = last.max(first + 1).min(d);
        let k = spec.identity_dim;
        let mut mix = Array2::<f64>::zeros((last - first, k));
        let scale = IDENTITY_SCALE / (k as f64).sqrt();
        for v in mix.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v = g * scale;
        }
        let identity_proj = basis.slice(ndarray::s![.., first..last]).dot(&mix);

        let codec = Codec::new(random_orthogonal(d, &mut rng))?;
        Ok(Self { spec, transition, input, identity_proj, mouth, codec })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn state_dim(&self) -> usize {
        self.spec.state_dim
    }

    pub fn transition(&self) -> ArrayView2<'_, f64> {
        self.transition.view()
    }

    pub fn input_vector(&self) -> ArrayView1<'_, f64> {
        self.input.view()
    }

    pub fn identity_projection(&self) -> ArrayView2<'_, f64> {
        self.identity_proj.view()
    }

    pub fn mouth_vector(&self) -> ArrayView1<'_, f64> {
        self.mouth.view()
    }

    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    /// Mouth channel `w·x` of every frame.
    pub fn mouth_channel(&self, frames: ArrayView2<'_, f64>) -> Vec<f64> {
        frames.dot(&self.mouth).to_vec()
    }

    /// Solves `(I − A) x = b·drive + P·identity`, where `drive` is the mean of `tanh(a)`.
    pub fn fixed_point(&self, mean_drive: f64, identity: &[f64]) -> Result<Array1<f64>> {
        self.check_identity(identity)?;
        let rhs = &self.input * mean_drive + self.identity_proj.dot(&ArrayView1::from(identity));
        self.solve_shifted(rhs.as_slice().expect("contiguous"))
    }

    /// Solves `(I − A) x = rhs`.
    pub fn solve_shifted(&self, rhs: &[f64]) -> Result<Array1<f64>> {
        let d = self.state_dim();
        if rhs.len() != d {
            return Err(invalid(format!("rhs has dim {}, world expects {d}", rhs.len())));
        }
        let m = DMatrix::<f64>::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.0 } - self.transition[[i, j]]);
        let sol = m
            .lu()
            .solve(&DVector::from_column_slice(rhs))
            .ok_or_else(|| invalid("I - A is singular"))?;
        Ok(Array1::from_iter(sol.iter().copied()))
    }

    /// Neutral pose for an identity: the zero-drive fixed point.
    pub fn reference_frame(&self, identity: &[f64]) -> Result<Array1<f64>> {
        self.fixed_point(0.0, identity)
    }

    pub fn simulate(&self, signal: &DrivingSignal, identity: &[f64], seed: u64) -> Result<FrameSequence> {
        if signal.is_empty() {
            return Err(invalid("driving signal is empty"));
        }
        self.check_identity(identity)?;
        let d = self.state_dim();
        let pid = self.identity_proj.dot(&ArrayView1::from(identity));
        let sigma = self.spec.process_noise_sigma;
        let mut rng = seeded_rng(seed, 1);
        let mut frames = Array2::<f64>::zeros((signal.len(), d));
        let mut x = pid.clone();
        for (t, &a) in signal.samples.iter().enumerate() {
            frames.row_mut(t).assign(&x);
            let mut next = self.transition.dot(&x) + &self.input * a.tanh() + &pid;
            if sigma > 0.0 {
                for v in next.iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *v += sigma * e;
                }
            }
            x = next;
        }
        Ok(FrameSequence { frames, identity: identity.to_vec() })
    }

    pub fn sample_identity(&self, seed: u64) -> Vec<f64> {
        let mut rng = seeded_rng(seed, 2);
        loop {
            let v: Vec<f64> = (0..self.spec.identity_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }

    fn check_identity(&self, identity: &[f64]) -> Result<()> {
        if identity.len() != self.spec.identity_dim {
            return Err(invalid(format!(
                "identity has dim {}, world expects {}",
                identity.len(),
                self.spec.identity_dim
            )));
        }
        let n = identity.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("identity must have unit norm, got {n}")));
        }
        Ok(())
    }
}

/// Two random-phase sinusoids plus low-pass noise, clamped to [-1, 1].
pub fn sample_driving_signal(seed: u64, length: usize) -> Result<DrivingSignal> {
    if length == 0 {
        return Err(invalid("signal length must be at least 1"));
    }
    let mut rng = seeded_rng(seed, 3);
    let tau = std::f64::consts::TAU;
    let p1: f64 = rng.gen_range(8.0..40.0);
    let p2: f64 = rng.gen_range(8.0..40.0);
    let ph1: f64 = rng.gen_range(0.0..tau);
    let ph2: f64 = rng.gen_range(0.0..tau);
    let rho: f64 = 0.9;
    let innov = (1.0 - rho * rho).sqrt();
    let mut lp: f64 = StandardNormal.sample(&mut rng);
    let samples = (0..length)
        .map(|t| {
            let t = t as f64;
            let e: f64 = StandardNormal.sample(&mut rng);
            lp = rho * lp + innov * e;
            let raw = 0.55 * (tau * t / p1 + ph1).sin() + 0.35 * (tau * t / p2 + ph2).sin() + 0.2 * lp;
            raw.clamp(-1.0, 1.0)
        })
        .collect();
    DrivingSignal::new(samples)
}

/// One line of the JSONL dataset export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub seed: u64,
    pub identity: Vec<f64>,
    pub signal: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
}

impl SequenceRecord {
    pub fn new(seed: u64, signal: &DrivingSignal, seq: &FrameSequence) -> Self {
        Self {
            seed,
            identity: seq.identity.clone(),
            signal: signal.samples.clone(),
            frames: seq.frames.axis_iter(Axis(0)).map(|r| r.to_vec()).collect(),
        }
    }
}

pub(crate) fn random_orthogonal(d: usize, rng: &mut impl Rng) -> Array2<f64> {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Array2::from_shape_fn((d, d), |(i, j)| q[(i, j)])
}
