use ndarray::{s, Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::world::World;

/// Largest lag (in frames) searched by [`toy_sync`].
pub const MAX_LAG: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    /// `None` when either series is constant.
    pub toy_sync: Option<f64>,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub identity_drift: f64,
    pub consistency: f64,
}

/// Pearson correlation; `None` if either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    // variance at rounding level counts as constant
    let flat = |ss: f64, v: &[f64]| {
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        ss <= (1e-12 * scale).powi(2) * n as f64
    };
    if flat(saa, a) || flat(sbb, b) {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Max over lags `0..=3` of `pearson(tanh(drive[t]), mouth[t + lag])`.
pub fn toy_sync(drive: &[f64], mouth: &[f64]) -> SyncReport {
    let n = drive.len().min(mouth.len());
    let x: Vec<f64> = drive[..n].iter().map(|a| a.tanh()).collect();
    let mut best: Option<f64> = None;
    for lag in 0..=MAX_LAG.min(n.saturating_sub(2)) {
        if let Some(r) = pearson(&x[..n - lag], &mouth[lag..n]) {
            best = Some(best.map_or(r, |b| b.max(r)));
        }
    }
    SyncReport { toy_sync: best, window: n }
}

/// Distance between the mean frame and the fixed point for the mean drive.
pub fn identity_drift(world: &World, frames: ArrayView2<'_, f64>, drive: &[f64], identity: &[f64]) -> Result<f64> {
    let mean_drive = drive.iter().map(|a| a.tanh()).sum::<f64>() / drive.len().max(1) as f64;
    let target = world.fixed_point(mean_drive, identity)?;
    let mean = frames.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(target.len()));
    Ok((&mean - &target).mapv(|v| v * v).sum().sqrt())
}

/// `1 / (1 + mean ‖Δ³x‖²)` where `Δ³` is the third forward difference.
pub fn consistency(frames: ArrayView2<'_, f64>) -> f64 {
    let n = frames.nrows();
    if n < 4 {
        return 1.0;
    }
    let jerk = &frames.slice(s![3.., ..]) - &(&frames.slice(s![2..n - 1, ..]) * 3.0)
        + &(&frames.slice(s![1..n - 2, ..]) * 3.0)
        - frames.slice(s![..n - 3, ..]);
    let mean_sq = jerk.mapv(|v| v * v).sum() / (n - 3) as f64;
    1.0 / (1.0 + mean_sq)
}

/// Expected drift of ground-truth data: `σ‖(I − A)⁻¹‖_F / √n`.
pub fn noise_floor(world: &World, frames: usize) -> Result<f64> {
    let d = world.state_dim();
    let mut fro = 0.0;
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        fro += world.solve_shifted(&e)?.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(world.spec().process_noise_sigma * fro.sqrt() / (frames.max(1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub index: usize,
    pub start_s: f64,
    pub frames: usize,
    pub sync: SyncReport,
    pub drift: DriftReport,
}

/// Splits a stream into consecutive buckets of `bucket_frames` and scores each.
pub fn bucket_reports(
    world: &World,
    frames: ArrayView2<'_, f64>,
    drive: &[f64],
    identity: &[f64],
    bucket_frames: usize,
    frame_rate: f64,
) -> Result<Vec<BucketReport>> {
    let n = frames.nrows().min(drive.len());
    let bucket_frames = bucket_frames.max(1);
    let mouth = world.mouth_channel(frames);
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + bucket_frames).min(n);
        let f = frames.slice(s![start..end, ..]);
        out.push(BucketReport {
            index: out.len(),
            start_s: start as f64 / frame_rate,
            frames: end - start,
            sync: toy_sync(&drive[start..end], &mouth[start..end]),
            drift: DriftReport {
                identity_drift: identity_drift(world, f, &drive[start..end], identity)?,
                consistency: consistency(f),
            },
        });
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{sample_driving_signal, WorldSpec};
    use ndarray::Array2;

    #[test]
    fn pearson_edge_cases() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]), None);
        assert!((pearson(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[0.0, 1.0, 2.0], &[5.0, 3.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sync_is_shift_invariant_and_null_for_constants() {
        let drive = sample_driving_signal(3, 300).unwrap().samples;
        let mouth: Vec<f64> = (0..300).map(|t| if t == 0 { 0.0 } else { drive[t - 1].tanh() * 0.8 }).collect();
        let base = toy_sync(&drive, &mouth).toy_sync.unwrap();
        assert!(base > 0.99);
        let shifted: Vec<f64> = mouth.iter().map(|m| m + 7.5).collect();
        assert!((toy_sync(&drive, &shifted).toy_sync.unwrap() - base).abs() < 1e-12);
        assert_eq!(toy_sync(&drive, &vec![0.3; 300]).toy_sync, None);
        assert_eq!(toy_sync(&vec![0.0; 300], &mouth).toy_sync, None);
    }

    #[test]
    fn constant_frames_are_perfectly_consistent() {
        let frames = Array2::from_elem((50, 8), 0.4);
        assert_eq!(consistency(frames.view()), 1.0);
        let ramp = Array2::from_shape_fn((50, 2), |(t, _)| (t * t) as f64);
        // second-order polynomials have zero third difference
        assert_eq!(consistency(ramp.view()), 1.0);
        let cubic = Array2::from_shape_fn((20, 1), |(t, _)| (t * t * t) as f64);
        assert!((consistency(cubic.view()) - 1.0 / 37.0).abs() < 1e-12);
    }

    #[test]
    fn drift_is_zero_at_the_fixed_point() {
        let w = World::new(WorldSpec::default()).unwrap();
        let id = w.sample_identity(1);
        let fp = w.fixed_point(0.0, &id).unwrap();
        let frames = Array2::from_shape_fn((10, 8), |(_, j)| fp[j]);
        assert!(identity_drift(&w, frames.view(), &[0.0; 10], &id).unwrap() < 1e-12);
        assert!(noise_floor(&w, 100).unwrap() > 0.0);
    }
}
