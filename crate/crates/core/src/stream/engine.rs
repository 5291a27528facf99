use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, SyncSender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::ChunkGenerator;
use crate::diffusion::SamplerPlan;
use crate::error::{invalid, Error, Result};
use crate::net::Denoiser;
use crate::world::{Codec, World};

/// Chunks queued between consecutive pipeline stages.
pub const QUEUE_CHUNKS: usize = 2;
/// Chunks averaged by the rolling statistics.
pub const ROLLING_CHUNKS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pacing {
    /// Emission is held back to `target_fps`.
    Realtime,
    /// Frames are emitted as soon as they are decoded.
    Unpaced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub chunk_len: usize,
    pub motion_len: usize,
    pub target_fps: f64,
    pub sampler: SamplerPlan,
    pub seed: u64,
    pub pacing: Pacing,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            chunk_len: 9,
            motion_len: 2,
            target_fps: 25.0,
            sampler: SamplerPlan::default(),
            seed: 0,
            pacing: Pacing::Unpaced,
        }
    }
}

impl StreamConfig {
    pub fn new_frames(&self) -> usize {
        self.chunk_len.saturating_sub(self.motion_len)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.chunk_len == 0 {
            errs.push("stream.chunk_len must be positive".into());
        }
        if self.motion_len >= self.chunk_len {
            errs.push("stream.motion_len must be smaller than stream.chunk_len".into());
        }
        if !(self.target_fps > 0.0 && self.target_fps.is_finite()) {
            errs.push("stream.target_fps must be positive".into());
        }
        errs.extend(self.sampler.validate().into_iter().map(|e| format!("stream.sampler: {e}")));
        errs
    }
}

/// Per-chunk time split, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleBreakdown {
    pub signal_ms: f64,
    pub denoise_ms: f64,
    pub decode_ms: f64,
    pub motion_encode_ms: f64,
    pub misc_ms: f64,
}

impl CycleBreakdown {
    pub fn total(&self) -> f64 {
        self.signal_ms + self.denoise_ms + self.decode_ms + self.motion_encode_ms + self.misc_ms
    }

    fn scaled(&self, k: f64) -> Self {
        Self {
            signal_ms: self.signal_ms * k,
            denoise_ms: self.denoise_ms * k,
            decode_ms: self.decode_ms * k,
            motion_encode_ms: self.motion_encode_ms * k,
            misc_ms: self.misc_ms * k,
        }
    }

    fn add(&mut self, o: &Self) {
        self.signal_ms += o.signal_ms;
        self.denoise_ms += o.denoise_ms;
        self.decode_ms += o.decode_ms;
        self.motion_encode_ms += o.motion_encode_ms;
        self.misc_ms += o.misc_ms;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    /// Session start to first emitted frame.
    pub startup_ms: Option<f64>,
    /// First chunk's denoise start to its emission.
    pub warm_startup_ms: Option<f64>,
    /// `N · 1000 / mean_cycle_ms` over the rolling window.
    pub fps: f64,
    /// Frames per second between emissions over the rolling window.
    pub throughput_fps: f64,
    pub mean_cycle_ms: f64,
    pub last_generate_ms: f64,
    pub frames_emitted: u64,
    pub chunks_emitted: u64,
    /// Rolling mean of the per-chunk breakdown.
    pub cycle: CycleBreakdown,
}

const F_STARTUP: usize = 0;
const F_WARM: usize = 1;
const F_FPS: usize = 2;
const F_THROUGHPUT: usize = 3;
const F_MEAN_CYCLE: usize = 4;
const F_LAST_GEN: usize = 5;
const F_FRAMES: usize = 6;
const F_CHUNKS: usize = 7;
const F_SIGNAL: usize = 8;
const F_DENOISE: usize = 9;
const F_DECODE: usize = 10;
const F_MOTION: usize = 11;
const F_MISC: usize = 12;
const N_FIELDS: usize = 13;

/// Single-writer sequence-locked stats; readers never block.
#[derive(Debug)]
pub struct StatsCell {
    seq: AtomicU64,
    fields: [AtomicU64; N_FIELDS],
}

impl Default for StatsCell {
    fn default() -> Self {
        let cell = Self { seq: AtomicU64::new(0), fields: std::array::from_fn(|_| AtomicU64::new(0)) };
        cell.fields[F_STARTUP].store(f64::NAN.to_bits(), Ordering::Relaxed);
        cell.fields[F_WARM].store(f64::NAN.to_bits(), Ordering::Relaxed);
        cell
    }
}

impl StatsCell {
    fn publish(&self, s: &StatsSnapshot) {
        let f = |v: f64| v.to_bits();
        let values = [
            f(s.startup_ms.unwrap_or(f64::NAN)),
            f(s.warm_startup_ms.unwrap_or(f64::NAN)),
            f(s.fps),
            f(s.throughput_fps),
            f(s.mean_cycle_ms),
            f(s.last_generate_ms),
            s.frames_emitted,
            s.chunks_emitted,
            f(s.cycle.signal_ms),
            f(s.cycle.denoise_ms),
            f(s.cycle.decode_ms),
            f(s.cycle.motion_encode_ms),
            f(s.cycle.misc_ms),
        ];
        self.seq.fetch_add(1, Ordering::AcqRel);
        for (slot, v) in self.fields.iter().zip(values) {
            slot.store(v, Ordering::Relaxed);
        }
        self.seq.fetch_add(1, Ordering::Release);
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        loop {
            let before = self.seq.load(Ordering::Acquire);
            if before % 2 == 1 {
                std::hint::spin_loop();
                continue;
            }
            let v: [u64; N_FIELDS] = std::array::from_fn(|i| self.fields[i].load(Ordering::Relaxed));
            std::sync::atomic::fence(Ordering::Acquire);
            if self.seq.load(Ordering::Relaxed) != before {
                continue;
            }
            let f = |i: usize| f64::from_bits(v[i]);
            let opt = |i: usize| Some(f(i)).filter(|x| !x.is_nan());
            return StatsSnapshot {
                startup_ms: opt(F_STARTUP),
                warm_startup_ms: opt(F_WARM),
                fps: f(F_FPS),
                throughput_fps: f(F_THROUGHPUT),
                mean_cycle_ms: f(F_MEAN_CYCLE),
                last_generate_ms: f(F_LAST_GEN),
                frames_emitted: v[F_FRAMES],
                chunks_emitted: v[F_CHUNKS],
                cycle: CycleBreakdown {
                    signal_ms: f(F_SIGNAL),
                    denoise_ms: f(F_DENOISE),
                    decode_ms: f(F_DECODE),
                    motion_encode_ms: f(F_MOTION),
                    misc_ms: f(F_MISC),
                },
            };
        }
    }
}

/// One decoded frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFrame {
    pub index: u64,
    pub chunk: u64,
    pub latent: Vec<f64>,
    pub state: Vec<f64>,
    pub mouth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionIntrospection {
    /// Motion rows the first chunk was conditioned on, once it has been denoised.
    pub cold_motion: Option<Vec<Vec<f64>>>,
    /// Bytes held by long-lived stage buffers (model parameters excluded).
    pub persistent_state_bytes: usize,
    pub samples_received: u64,
}

struct ChunkJob {
    n: u64,
    window: Vec<f64>,
}

struct DecodeJob {
    n: u64,
    targets: Array2<f64>,
    started: Instant,
    signal_ms: f64,
    denoise_ms: f64,
    motion_encode_ms: f64,
}

struct Shared {
    stats: StatsCell,
    stopping: AtomicBool,
    ingest_bytes: AtomicU64,
    denoise_bytes: AtomicU64,
    emit_bytes: AtomicU64,
    cold_motion: Mutex<Option<Array2<f64>>>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// A running three-stage stream: ingest, denoise, decode/emit.
pub struct StreamSession {
    cfg: StreamConfig,
    shared: Arc<Shared>,
    ingest: Option<Sender<Vec<f64>>>,
    frames: Receiver<Result<Vec<EmittedFrame>>>,
    workers: Vec<JoinHandle<()>>,
    next_index: u64,
    closed: bool,
}

impl StreamSession {
    /// Starts a session conditioned on a pixel-space reference frame.
    pub fn start<D>(denoiser: D, world: &World, reference_frame: &[f64], cfg: StreamConfig) -> Result<Self>
    where
        D: Denoiser + Send + 'static,
    {
        let reference = world.codec().encode_frame(Array1::from(reference_frame.to_vec()).view())?;
        Self::start_latent(denoiser, world.codec().clone(), world.mouth_vector().to_owned(), reference, cfg)
    }

    /// Starts a session from an already encoded reference latent.
    pub fn start_latent<D>(
        denoiser: D,
        codec: Codec,
        mouth: Array1<f64>,
        reference: Array1<f64>,
        cfg: StreamConfig,
    ) -> Result<Self>
    where
        D: Denoiser + Send + 'static,
    {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        if reference.len() != codec.dim() || mouth.len() != codec.dim() {
            return Err(invalid("reference and mouth vector must match the codec dimension"));
        }
        let started = Instant::now();
        let gen = ChunkGenerator::new(denoiser, cfg.sampler.clone(), cfg.chunk_len, cfg.motion_len, reference, cfg.seed)?;
        let shared = Arc::new(Shared {
            stats: StatsCell::default(),
            stopping: AtomicBool::new(false),
            ingest_bytes: AtomicU64::new(0),
            denoise_bytes: AtomicU64::new(0),
            emit_bytes: AtomicU64::new(0),
            cold_motion: Mutex::new(None),
        });
        let (in_tx, in_rx) = mpsc::channel::<Vec<f64>>();
        let (job_tx, job_rx) = mpsc::sync_channel::<ChunkJob>(QUEUE_CHUNKS);
        let (dec_tx, dec_rx) = mpsc::sync_channel::<Result<DecodeJob>>(QUEUE_CHUNKS);
        let (out_tx, out_rx) = mpsc::channel::<Result<Vec<EmittedFrame>>>();

        let (lc, lm, n_new) = (cfg.chunk_len, cfg.motion_len, cfg.new_frames());
        let mut workers = Vec::with_capacity(3);
        let sh = shared.clone();
        workers.push(std::thread::spawn(move || ingest_stage(in_rx, job_tx, lc, lm, n_new, &sh)));
        let sh = shared.clone();
        workers.push(std::thread::spawn(move || denoise_stage(gen, job_rx, dec_tx, &sh)));
        let sh = shared.clone();
        let emit = EmitStage { codec, mouth, n_new, pacing: cfg.pacing, fps: cfg.target_fps, started };
        workers.push(std::thread::spawn(move || emit.run(dec_rx, out_tx, &sh)));

        Ok(Self { cfg, shared, ingest: Some(in_tx), frames: out_rx, workers, next_index: 0, closed: false })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.cfg
    }

    /// Index the next pushed sample must carry.
    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    /// Appends driving samples starting at frame `start`; indices must be contiguous.
    pub fn push_signal(&mut self, start: u64, values: &[f64]) -> Result<()> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        if start < self.next_index {
            return Err(invalid(format!("driving index {start} regresses below {}", self.next_index)));
        }
        if start > self.next_index {
            return Err(invalid(format!("driving index {start} skips ahead of {}", self.next_index)));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("driving value {v} is not finite")));
        }
        if values.is_empty() {
            return Ok(());
        }
        let tx = self.ingest.as_ref().ok_or(Error::SessionClosed)?;
        tx.send(values.to_vec()).map_err(|_| Error::SessionClosed)?;
        self.next_index += values.len() as u64;
        Ok(())
    }

    /// Frames decoded so far and not yet returned, in index order.
    pub fn next_frames(&mut self) -> Result<Vec<EmittedFrame>> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        let mut out = Vec::new();
        loop {
            match self.frames.try_recv() {
                Ok(chunk) => out.extend(chunk?),
                Err(TryRecvError::Empty) => return Ok(out),
                Err(TryRecvError::Disconnected) if out.is_empty() => return Err(Error::SessionClosed),
                Err(TryRecvError::Disconnected) => return Ok(out),
            }
        }
    }

    /// Blocks until at least `min` frames are available or `timeout` passes.
    pub fn wait_frames(&mut self, min: usize, timeout: Duration) -> Result<Vec<EmittedFrame>> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        let deadline = Instant::now() + timeout;
        let mut out = Vec::new();
        while out.len() < min {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.frames.recv_timeout(left) {
                Ok(chunk) => out.extend(chunk?),
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) if out.is_empty() => return Err(Error::SessionClosed),
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        Ok(out)
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.shared.stats.snapshot()
    }

    pub fn introspect(&self) -> SessionIntrospection {
        let cold = self.shared.cold_motion.lock().map(|m| m.clone()).unwrap_or(None);
        SessionIntrospection {
            cold_motion: cold.map(|m| m.rows().into_iter().map(|r| r.to_vec()).collect()),
            persistent_state_bytes: self.persistent_state_bytes(),
            samples_received: self.next_index,
        }
    }

    pub fn persistent_state_bytes(&self) -> usize {
        let s = &self.shared;
        (s.ingest_bytes.load(Ordering::Relaxed) + s.denoise_bytes.load(Ordering::Relaxed) + s.emit_bytes.load(Ordering::Relaxed))
            as usize
    }

    /// Shuts the pipeline down; undelivered frames are discarded.
    pub fn stop(&mut self) -> StatsSnapshot {
        if !self.closed {
            self.closed = true;
            self.shared.stopping.store(true, Ordering::Release);
            self.ingest = None;
            // drain so no stage blocks on a full queue
            while self.frames.recv_timeout(Duration::from_millis(1)).is_ok() {}
            for w in self.workers.drain(..) {
                let _ = w.join();
            }
        }
        self.stats()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }
}

impl Drop for StreamSession {
    fn drop(&mut self) {
        self.stop();
    }
}

fn ingest_stage(rx: Receiver<Vec<f64>>, tx: SyncSender<ChunkJob>, lc: usize, lm: usize, n_new: usize, sh: &Shared) {
    // samples with absolute index >= base; negative indices read as zero
    let mut pending: VecDeque<f64> = VecDeque::with_capacity(2 * lc);
    let mut base: i64 = -(lm as i64);
    pending.extend(std::iter::repeat_n(0.0, lm));
    let mut received: u64 = 0;
    let mut n: u64 = 0;
    while let Ok(values) = rx.recv() {
        pending.extend(values.iter().copied());
        received += values.len() as u64;
        while received >= (n + 1) * n_new as u64 {
            if sh.stopping.load(Ordering::Acquire) {
                return;
            }
            let start = (n * n_new as u64) as i64 - lm as i64;
            let off = (start - base) as usize;
            let window: Vec<f64> = pending.range(off..off + lc).copied().collect();
            if tx.send(ChunkJob { n, window }).is_err() {
                return;
            }
            n += 1;
            let next_start = (n * n_new as u64) as i64 - lm as i64;
            pending.drain(..(next_start - base) as usize);
            base = next_start;
        }
        sh.ingest_bytes.store((pending.capacity() * std::mem::size_of::<f64>()) as u64, Ordering::Relaxed);
    }
}

fn denoise_stage<D: Denoiser>(
    gen: ChunkGenerator<D>,
    rx: Receiver<ChunkJob>,
    tx: SyncSender<Result<DecodeJob>>,
    sh: &Shared,
) {
    let mut motion = gen.cold_motion();
    let mut window = vec![0.0; gen.chunk_len()];
    let f = std::mem::size_of::<f64>();
    let bytes = motion.len() * f + window.capacity() * f + gen.reference().len() * f;
    sh.denoise_bytes.store(bytes as u64, Ordering::Relaxed);
    while let Ok(job) = rx.recv() {
        if sh.stopping.load(Ordering::Acquire) {
            return;
        }
        let started = Instant::now();
        if job.window.len() != window.len() {
            let _ = tx.send(Err(invalid("conditioning window has the wrong length")));
            return;
        }
        window.copy_from_slice(&job.window);
        let t_signal = Instant::now();
        if job.n == 0 {
            if let Ok(mut cold) = sh.cold_motion.lock() {
                *cold = Some(motion.clone());
            }
        }
        let chunk = match gen.generate(job.n as usize, motion.view(), &window) {
            Ok(c) => c,
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        };
        let t_denoise = Instant::now();
        motion.assign(&chunk.tail(gen.motion_len()));
        let targets = chunk.targets().to_owned();
        let t_motion = Instant::now();
        let msg = DecodeJob {
            n: job.n,
            targets,
            started,
            signal_ms: ms(t_signal - started),
            denoise_ms: ms(t_denoise - t_signal),
            motion_encode_ms: ms(t_motion - t_denoise),
        };
        if tx.send(Ok(msg)).is_err() {
            return;
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct CycleSample {
    cycle_ms: f64,
    breakdown: CycleBreakdown,
    emitted: Instant,
}

struct EmitStage {
    codec: Codec,
    mouth: Array1<f64>,
    n_new: usize,
    pacing: Pacing,
    fps: f64,
    started: Instant,
}

impl EmitStage {
    fn run(self, rx: Receiver<Result<DecodeJob>>, tx: Sender<Result<Vec<EmittedFrame>>>, sh: &Shared) {
        let mut window: VecDeque<CycleSample> = VecDeque::with_capacity(ROLLING_CHUNKS);
        sh.emit_bytes.store((window.capacity() * std::mem::size_of::<CycleSample>()) as u64, Ordering::Relaxed);
        let mut snap = StatsSnapshot::default();
        let mut first_emit: Option<Instant> = None;
        while let Ok(msg) = rx.recv() {
            let job = match msg {
                Ok(j) => j,
                Err(e) => {
                    let _ = tx.send(Err(e));
                    return;
                }
            };
            let t0 = Instant::now();
            let frames = match self.codec.decode(job.targets.view()) {
                Ok(f) => f,
                Err(e) => {
                    let _ = tx.send(Err(e));
                    return;
                }
            };
            let decode_ms = ms(t0.elapsed());
            let first = job.n * self.n_new as u64;
            let batch: Vec<EmittedFrame> = frames
                .rows()
                .into_iter()
                .zip(job.targets.rows())
                .enumerate()
                .map(|(i, (x, z))| EmittedFrame {
                    index: first + i as u64,
                    chunk: job.n,
                    latent: z.to_vec(),
                    state: x.to_vec(),
                    mouth: x.dot(&self.mouth),
                })
                .collect();
            if self.pacing == Pacing::Realtime {
                if let Some(t) = first_emit {
                    let due = t + Duration::from_secs_f64(first as f64 / self.fps);
                    let now = Instant::now();
                    if due > now && !sh.stopping.load(Ordering::Acquire) {
                        std::thread::sleep(due - now);
                    }
                }
            }
            let emitted = Instant::now();
            let cycle_ms = ms(emitted - job.started);
            let mut breakdown = CycleBreakdown {
                signal_ms: job.signal_ms,
                denoise_ms: job.denoise_ms,
                decode_ms,
                motion_encode_ms: job.motion_encode_ms,
                misc_ms: 0.0,
            };
            breakdown.misc_ms = (cycle_ms - breakdown.total()).max(0.0);
            if first_emit.is_none() {
                first_emit = Some(emitted);
                snap.startup_ms = Some(ms(emitted - self.started));
                snap.warm_startup_ms = Some(cycle_ms);
            }
            if window.len() == ROLLING_CHUNKS {
                window.pop_front();
            }
            window.push_back(CycleSample { cycle_ms, breakdown, emitted });

            let count = window.len() as f64;
            let mean_cycle = window.iter().map(|s| s.cycle_ms).sum::<f64>() / count;
            let mut mean = CycleBreakdown::default();
            for s in &window {
                mean.add(&s.breakdown);
            }
            let span = window.back().map(|b| ms(b.emitted - window[0].emitted)).unwrap_or(0.0);
            snap.fps = self.n_new as f64 * 1e3 / mean_cycle;
            snap.throughput_fps = if window.len() > 1 && span > 0.0 {
                (window.len() - 1) as f64 * self.n_new as f64 * 1e3 / span
            } else {
                snap.fps
            };
            snap.mean_cycle_ms = mean_cycle;
            snap.last_generate_ms = job.denoise_ms;
            snap.chunks_emitted = job.n + 1;
            snap.frames_emitted = (job.n + 1) * self.n_new as u64;
            snap.cycle = mean.scaled(1.0 / count);
            sh.stats.publish(&snap);
            if tx.send(Ok(batch)).is_err() {
                return;
            }
        }
    }
}
