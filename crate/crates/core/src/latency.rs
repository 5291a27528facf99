//! Calibrated latency model of a multi-GPU chunk pipeline and a small
//! event simulator for its steady state.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Eager-mode spec of the 8-GPU H800 deployment.
pub const PAPER_H800: &str = include_str!("../assets/paper_h800.json");
/// Same deployment with per-component compile factors fitted to the cycle breakdown.
pub const PAPER_H800_COMPILED: &str = include_str!("../assets/paper_h800_compiled.json");
/// Published component timings and cycle breakdown.
pub const PAPER_H800_MEASUREMENTS: &str = include_str!("../assets/paper_h800_measurements.json");

/// Communication cost of one parallel invocation: zero on one GPU, else
/// `fixed_ms + per_peer_ms · (g − 1)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommModel {
    pub fixed_ms: f64,
    pub per_peer_ms: f64,
}

impl CommModel {
    pub fn fixed(ms: f64) -> Self {
        Self { fixed_ms: ms, per_peer_ms: 0.0 }
    }

    pub fn at(&self, gpus: u32) -> f64 {
        if gpus <= 1 {
            0.0
        } else {
            self.fixed_ms + self.per_peer_ms * (gpus - 1) as f64
        }
    }
}

/// Multiplicative factors on compute terms; a bare number applies to all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompileSpeedup {
    pub dit: f64,
    pub vae_encode: f64,
    pub vae_decode: f64,
}

impl CompileSpeedup {
    pub fn uniform(f: f64) -> Self {
        Self { dit: f, vae_encode: f, vae_decode: f }
    }

    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::DitStep => self.dit,
            Component::VaeEncode => self.vae_encode,
            Component::VaeDecode => self.vae_decode,
        }
    }
}

impl Default for CompileSpeedup {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl<'de> Deserialize<'de> for CompileSpeedup {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Parts {
            dit: f64,
            vae_encode: f64,
            vae_decode: f64,
        }
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Uniform(f64),
            Parts(Parts),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Uniform(f) => Self::uniform(f),
            Repr::Parts(p) => Self { dit: p.dit, vae_encode: p.vae_encode, vae_decode: p.vae_decode },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    DitStep,
    VaeEncode,
    VaeDecode,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::DitStep, Component::VaeEncode, Component::VaeDecode];
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::DitStep => "dit_step",
            Component::VaeEncode => "vae_encode",
            Component::VaeDecode => "vae_decode",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSpec {
    pub gpu_count: u32,
    pub dit_step_ms_1gpu: f64,
    pub vae_encode_ms_1gpu: f64,
    pub vae_decode_ms_1gpu: f64,
    pub audio_ms: f64,
    /// Residual of the cycle breakdown.
    pub misc_ms: f64,
    pub denoise_steps: u32,
    pub frames_per_chunk_new: u32,
    pub dit_comm: CommModel,
    pub vae_encode_comm: CommModel,
    pub vae_decode_comm: CommModel,
    pub compile_speedup: CompileSpeedup,
    /// Extra time before the first cycle.
    pub cold_start_ms: f64,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        Self {
            gpu_count: 1,
            dit_step_ms_1gpu: 1070.0,
            vae_encode_ms_1gpu: 97.0,
            vae_decode_ms_1gpu: 988.0,
            audio_ms: 33.0,
            misc_ms: 26.0,
            denoise_steps: 4,
            frames_per_chunk_new: 28,
            dit_comm: CommModel::default(),
            vae_encode_comm: CommModel::default(),
            vae_decode_comm: CommModel::default(),
            compile_speedup: CompileSpeedup::default(),
            cold_start_ms: 0.0,
        }
    }
}

impl PipelineSpec {
    pub fn paper_h800() -> Self {
        serde_json::from_str(PAPER_H800).expect("bundled spec parses")
    }

    pub fn paper_h800_compiled() -> Self {
        serde_json::from_str(PAPER_H800_COMPILED).expect("bundled spec parses")
    }

    pub fn with_gpus(&self, g: u32) -> Self {
        Self { gpu_count: g, ..self.clone() }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.gpu_count == 0 {
            errs.push("gpu_count must be at least 1".into());
        }
        if self.frames_per_chunk_new == 0 {
            errs.push("frames_per_chunk_new must be positive".into());
        }
        let nonneg = [
            ("dit_step_ms_1gpu", self.dit_step_ms_1gpu),
            ("vae_encode_ms_1gpu", self.vae_encode_ms_1gpu),
            ("vae_decode_ms_1gpu", self.vae_decode_ms_1gpu),
            ("audio_ms", self.audio_ms),
            ("misc_ms", self.misc_ms),
            ("dit_comm.fixed_ms", self.dit_comm.fixed_ms),
            ("dit_comm.per_peer_ms", self.dit_comm.per_peer_ms),
            ("vae_encode_comm.fixed_ms", self.vae_encode_comm.fixed_ms),
            ("vae_encode_comm.per_peer_ms", self.vae_encode_comm.per_peer_ms),
            ("vae_decode_comm.fixed_ms", self.vae_decode_comm.fixed_ms),
            ("vae_decode_comm.per_peer_ms", self.vae_decode_comm.per_peer_ms),
            ("cold_start_ms", self.cold_start_ms),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be a finite nonnegative number"));
            }
        }
        for c in Component::ALL {
            let f = self.compile_speedup.get(c);
            if !(f > 0.0 && f <= 1.0) {
                errs.push(format!("compile_speedup.{c} must lie in (0, 1]"));
            }
        }
        errs
    }

    fn compute_ms(&self, c: Component) -> f64 {
        match c {
            Component::DitStep => self.dit_step_ms_1gpu,
            Component::VaeEncode => self.vae_encode_ms_1gpu,
            Component::VaeDecode => self.vae_decode_ms_1gpu,
        }
    }

    fn comm(&self, c: Component) -> &CommModel {
        match c {
            Component::DitStep => &self.dit_comm,
            Component::VaeEncode => &self.vae_encode_comm,
            Component::VaeDecode => &self.vae_decode_comm,
        }
    }

    /// Latency of one invocation of `c` on `g` GPUs.
    pub fn component_ms(&self, c: Component, g: u32) -> f64 {
        self.compute_ms(c) * self.compile_speedup.get(c) / g.max(1) as f64 + self.comm(c).at(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub gpu_count: u32,
    pub dit_step_ms: f64,
    pub denoise_ms: f64,
    pub vae_encode_ms: f64,
    pub vae_decode_ms: f64,
    pub audio_ms: f64,
    pub misc_ms: f64,
    pub cycle_ms: f64,
    pub fps: f64,
    pub startup_ms: f64,
    /// Single-step DiT speedup over one GPU.
    pub dit_speedup: f64,
    /// Whole-cycle speedup over one GPU.
    pub cycle_speedup: f64,
}

fn cycle_of(spec: &PipelineSpec, g: u32) -> f64 {
    spec.audio_ms
        + spec.denoise_steps as f64 * spec.component_ms(Component::DitStep, g)
        + spec.component_ms(Component::VaeDecode, g)
        + spec.component_ms(Component::VaeEncode, g)
        + spec.misc_ms
}

pub fn predict(spec: &PipelineSpec) -> Result<LatencyReport> {
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let g = spec.gpu_count;
    let dit = spec.component_ms(Component::DitStep, g);
    let cycle = cycle_of(spec, g);
    Ok(LatencyReport {
        gpu_count: g,
        dit_step_ms: dit,
        denoise_ms: spec.denoise_steps as f64 * dit,
        vae_encode_ms: spec.component_ms(Component::VaeEncode, g),
        vae_decode_ms: spec.component_ms(Component::VaeDecode, g),
        audio_ms: spec.audio_ms,
        misc_ms: spec.misc_ms,
        cycle_ms: cycle,
        fps: spec.frames_per_chunk_new as f64 * 1000.0 / cycle,
        startup_ms: cycle + spec.cold_start_ms,
        dit_speedup: spec.component_ms(Component::DitStep, 1) / dit,
        cycle_speedup: cycle_of(spec, 1) / cycle,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurement {
    pub gpus: u32,
    pub component: Component,
    pub ms: f64,
}

/// Published per-cycle split at one GPU count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleObservation {
    pub gpus: u32,
    pub total_ms: f64,
    pub audio_ms: f64,
    /// All denoising steps together.
    pub dit_ms: f64,
    pub vae_decode_ms: f64,
    pub vae_encode_ms: f64,
}

impl CycleObservation {
    /// The unattributed remainder of the cycle.
    pub fn misc_ms(&self) -> f64 {
        self.total_ms - self.audio_ms - self.dit_ms - self.vae_decode_ms - self.vae_encode_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaperMeasurements {
    pub table: Vec<Measurement>,
    pub cycle: CycleObservation,
    pub startup_ms: f64,
    pub fps: f64,
}

impl PaperMeasurements {
    pub fn h800() -> Self {
        serde_json::from_str(PAPER_H800_MEASUREMENTS).expect("bundled measurements parse")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFit {
    pub component: Component,
    pub compute_ms_1gpu: f64,
    pub comm_ms: f64,
    /// Measured minus fitted, in input order.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub fits: Vec<ComponentFit>,
}

impl Calibration {
    pub fn get(&self, c: Component) -> Option<&ComponentFit> {
        self.fits.iter().find(|f| f.component == c)
    }

    /// Copies fitted compute times and comm constants into `spec`.
    pub fn apply(&self, spec: &PipelineSpec) -> PipelineSpec {
        let mut out = spec.clone();
        for f in &self.fits {
            let comm = CommModel::fixed(f.comm_ms);
            match f.component {
                Component::DitStep => {
                    out.dit_step_ms_1gpu = f.compute_ms_1gpu;
                    out.dit_comm = comm;
                }
                Component::VaeEncode => {
                    out.vae_encode_ms_1gpu = f.compute_ms_1gpu;
                    out.vae_encode_comm = comm;
                }
                Component::VaeDecode => {
                    out.vae_decode_ms_1gpu = f.compute_ms_1gpu;
                    out.vae_decode_comm = comm;
                }
            }
        }
        out
    }
}

/// Least-squares fit of `ms(g) = T · c / g + comm · [g > 1]` per component.
pub fn calibrate(measurements: &[Measurement], compile: &CompileSpeedup) -> Result<Calibration> {
    let mut fits = Vec::new();
    for c in Component::ALL {
        let pts: Vec<&Measurement> = measurements.iter().filter(|m| m.component == c).collect();
        if pts.is_empty() {
            continue;
        }
        let mut gs: Vec<u32> = pts.iter().map(|m| m.gpus).collect();
        gs.sort_unstable();
        gs.dedup();
        if gs.len() < 2 {
            return Err(Error::InsufficientData(format!("{c} needs measurements at two or more GPU counts")));
        }
        if pts.iter().any(|m| m.gpus == 0 || !m.ms.is_finite()) {
            return Err(invalid(format!("{c} has an invalid measurement")));
        }
        let f = compile.get(c);
        let feat = |m: &Measurement| (f / m.gpus as f64, if m.gpus > 1 { 1.0 } else { 0.0 });
        let (mut suu, mut suv, mut svv, mut sum, mut svm) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for m in &pts {
            let (u, v) = feat(m);
            suu += u * u;
            suv += u * v;
            svv += v * v;
            sum += u * m.ms;
            svm += v * m.ms;
        }
        let det = suu * svv - suv * suv;
        if det.abs() < 1e-12 * suu.max(1.0) {
            return Err(Error::InsufficientData(format!("{c} measurements do not separate compute from comm")));
        }
        let compute = (sum * svv - suv * svm) / det;
        let comm = (suu * svm - suv * sum) / det;
        let residuals = pts
            .iter()
            .map(|m| {
                let (u, v) = feat(m);
                m.ms - (compute * u + comm * v)
            })
            .collect();
        fits.push(ComponentFit { component: c, compute_ms_1gpu: compute, comm_ms: comm, residuals });
    }
    if fits.is_empty() {
        return Err(Error::InsufficientData("no measurements".into()));
    }
    Ok(Calibration { fits })
}

/// Compute-only factors that make `spec` reproduce an observed cycle split.
pub fn fit_compile(spec: &PipelineSpec, obs: &CycleObservation) -> Result<CompileSpeedup> {
    if spec.denoise_steps == 0 || obs.gpus == 0 {
        return Err(invalid("observation needs denoising steps and GPUs"));
    }
    let g = obs.gpus;
    let factor = |c: Component, observed: f64| {
        (observed - spec.comm(c).at(g)) * g as f64 / spec.compute_ms(c)
    };
    let out = CompileSpeedup {
        dit: factor(Component::DitStep, obs.dit_ms / spec.denoise_steps as f64),
        vae_encode: factor(Component::VaeEncode, obs.vae_encode_ms),
        vae_decode: factor(Component::VaeDecode, obs.vae_decode_ms),
    };
    for c in Component::ALL {
        let f = out.get(c);
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::Numeric(format!("fitted compile factor for {c} is {f}")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlap {
    None,
    DecodeOverlapsDenoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lane {
    Main,
    Decode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: usize,
    pub stage: String,
    pub lane: Lane,
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub overlap: Overlap,
    pub cycles: usize,
    /// Events ordered by start time.
    pub trace: Vec<TraceEvent>,
    /// Emission time of each chunk.
    pub emissions_ms: Vec<f64>,
    /// Interval between the last two emissions (the first emission for one cycle).
    pub steady_cycle_ms: f64,
}

impl Simulation {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("cycle,stage,lane,start_ms,end_ms\n");
        for e in &self.trace {
            let lane = match e.lane {
                Lane::Main => "main",
                Lane::Decode => "decode",
            };
            out.push_str(&format!("{},{},{},{},{}\n", e.cycle, e.stage, lane, e.start_ms, e.end_ms));
        }
        out
    }
}

/// Schedules `n_cycles` chunks on a main lane and, under overlap, a separate decode lane.
///
/// Each cycle runs audio, the denoising steps, motion encode and misc on the
/// main lane. Decode waits for the cycle's denoising; without overlap it also
/// holds the main lane, with overlap it runs beside the next cycle.
pub fn simulate_pipeline(spec: &PipelineSpec, n_cycles: usize, overlap: Overlap) -> Result<Simulation> {
    if n_cycles == 0 {
        return Err(invalid("n_cycles must be at least 1"));
    }
    let rep = predict(spec)?;
    let mut trace = Vec::new();
    let mut emissions = Vec::with_capacity(n_cycles);
    let (mut main_free, mut decode_free) = (0.0f64, 0.0f64);
    let push = |trace: &mut Vec<TraceEvent>, cycle: usize, stage: String, lane: Lane, start: f64, dur: f64| {
        trace.push(TraceEvent { cycle, stage, lane, start_ms: start, end_ms: start + dur });
        start + dur
    };
    for c in 0..n_cycles {
        let mut t = push(&mut trace, c, "audio".into(), Lane::Main, main_free, rep.audio_ms);
        for s in 0..spec.denoise_steps {
            t = push(&mut trace, c, format!("dit_step_{s}"), Lane::Main, t, rep.dit_step_ms);
        }
        let denoised = t;
        let emitted = match overlap {
            Overlap::None => {
                t = push(&mut trace, c, "vae_decode".into(), Lane::Main, t, rep.vae_decode_ms);
                t
            }
            Overlap::DecodeOverlapsDenoise => {
                let start = denoised.max(decode_free);
                decode_free = push(&mut trace, c, "vae_decode".into(), Lane::Decode, start, rep.vae_decode_ms);
                decode_free
            }
        };
        t = push(&mut trace, c, "vae_encode".into(), Lane::Main, t, rep.vae_encode_ms);
        main_free = push(&mut trace, c, "misc".into(), Lane::Main, t, rep.misc_ms);
        let done = match overlap {
            Overlap::None => main_free,
            Overlap::DecodeOverlapsDenoise => emitted.max(main_free),
        };
        emissions.push(done);
    }
    trace.sort_by(|a, b| a.start_ms.total_cmp(&b.start_ms).then(a.cycle.cmp(&b.cycle)));
    let steady = match emissions.len() {
        1 => emissions[0],
        n => emissions[n - 1] - emissions[n - 2],
    };
    Ok(Simulation { overlap, cycles: n_cycles, trace, emissions_ms: emissions, steady_cycle_ms: steady })
}
