use std::time::Duration;

use ndarray::Array2;
use serde::Serialize;

use super::engine::{StatsSnapshot, StreamSession};
use crate::error::{invalid, Error, Result};
use crate::eval::{bucket_reports, BucketReport};
use crate::world::{World, FRAME_RATE};

/// Longest wait for one chunk before a long run is abandoned.
const CHUNK_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongRunReport {
    pub frames: usize,
    pub chunks: u64,
    pub buckets: Vec<BucketReport>,
    /// Drift of the stream's starting frame: zero by construction.
    pub drift_at_start: f64,
    /// Persistent session bytes after chunk 10 (or the last chunk if fewer).
    pub bytes_at_chunk_10: usize,
    pub bytes_at_end: usize,
    /// Largest persistent footprint seen from chunk 10 on.
    pub bytes_high_water: usize,
    pub stats: StatsSnapshot,
}

/// Streams `total_seconds` of `script` chunk by chunk, scoring each bucket as it fills.
pub fn run_longform(
    session: &mut StreamSession,
    world: &World,
    identity: &[f64],
    total_seconds: f64,
    script: &[f64],
    bucket_s: f64,
) -> Result<LongRunReport> {
    if !(total_seconds > 0.0 && bucket_s > 0.0) {
        return Err(invalid("total_seconds and bucket_s must be positive"));
    }
    if session.next_index() != 0 {
        return Err(invalid("long runs need a fresh session"));
    }
    let n_new = session.config().new_frames();
    let chunks = ((total_seconds * FRAME_RATE) / n_new as f64 - 1e-9).ceil().max(1.0) as usize;
    let frames_total = chunks * n_new;
    if script.len() < frames_total {
        return Err(invalid(format!("script covers {} frames, run needs {frames_total}", script.len())));
    }
    let bucket_frames = ((bucket_s * FRAME_RATE).round() as usize).max(1);
    let dim = world.state_dim();
    let reference = world.reference_frame(identity)?;
    let drift_at_start = (&reference - &world.fixed_point(0.0, identity)?).mapv(|v| v * v).sum().sqrt();

    let mut bucket = Array2::<f64>::zeros((bucket_frames, dim));
    let mut filled = 0usize;
    let mut bucket_start = 0usize;
    let mut buckets = Vec::new();
    let flush = |bucket: &Array2<f64>, filled: usize, start: usize, buckets: &mut Vec<BucketReport>| -> Result<()> {
        let drive = &script[start..start + filled];
        let view = bucket.slice(ndarray::s![..filled, ..]);
        for mut b in bucket_reports(world, view, drive, identity, filled, FRAME_RATE)? {
            b.index = buckets.len();
            b.start_s = start as f64 / FRAME_RATE;
            buckets.push(b);
        }
        Ok(())
    };

    let (mut at_10, mut high) = (0usize, 0usize);
    for c in 0..chunks {
        let lo = c * n_new;
        session.push_signal(lo as u64, &script[lo..lo + n_new])?;
        let got = session.wait_frames(n_new, CHUNK_TIMEOUT)?;
        if got.len() != n_new {
            return Err(Error::Numeric(format!("chunk {c} produced {} frames", got.len())));
        }
        for (i, f) in got.into_iter().enumerate() {
            if f.index != (lo + i) as u64 || f.state.len() != dim {
                return Err(invalid(format!("frame {} arrived where {} was expected", f.index, lo + i)));
            }
            bucket.row_mut(filled).assign(&ndarray::ArrayView1::from(&f.state[..]));
            filled += 1;
            if filled == bucket_frames {
                flush(&bucket, filled, bucket_start, &mut buckets)?;
                bucket_start += filled;
                filled = 0;
            }
        }
        let bytes = session.persistent_state_bytes();
        if c + 1 == 10.min(chunks) {
            at_10 = bytes;
        }
        if c + 1 >= 10.min(chunks) {
            high = high.max(bytes);
        }
    }
    if filled > 0 {
        flush(&bucket, filled, bucket_start, &mut buckets)?;
    }
    Ok(LongRunReport {
        frames: frames_total,
        chunks: chunks as u64,
        buckets,
        drift_at_start,
        bytes_at_chunk_10: at_10,
        bytes_at_end: session.persistent_state_bytes(),
        bytes_high_water: high,
        stats: session.stats(),
    })
}
