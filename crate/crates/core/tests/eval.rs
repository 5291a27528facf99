use ftlk_core::distill::{DataConfig, Dataset, DistillConfig, MotionSource};
use ftlk_core::eval::{
    ablate_chunks, ablate_motion, consistency, evaluate, generated_quality, noise_floor, stream_frames, toy_sync,
    AblationBudget, EvalSpec, FrameSource, MotionCell,
};
use ftlk_core::diffusion::SamplerPlan;
use ftlk_core::net::{DenoiserNet, NetConfig};
use ftlk_core::world::{World, WorldSpec};
use ndarray::Array2;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn oracle_sync_matches_a_direct_computation() {
    let world = World::new(WorldSpec::default()).unwrap();
    let spec = EvalSpec { streams: 3, ..EvalSpec::default() };
    let rep = evaluate(&world, &FrameSource::Oracle, &spec).unwrap();
    for i in 0..spec.streams {
        let (frames, drive, _) = stream_frames(&world, &FrameSource::Oracle, &spec, i).unwrap();
        let w = world.mouth_vector();
        let mouth: Vec<f64> = frames.rows().into_iter().map(|r| r.iter().zip(w).map(|(a, b)| a * b).sum()).collect();
        let x: Vec<f64> = drive.iter().map(|a| a.tanh()).collect();
        let n = x.len();
        let direct = (0..=3).map(|lag| corr(&x[..n - lag], &mouth[lag..n])).fold(f64::MIN, f64::max);
        let got = rep.streams[i].overall.toy_sync.unwrap();
        assert!((got - direct).abs() < 1e-12, "{got} vs {direct}");
        assert!(got > 0.9);
    }
}

#[test]
fn oracle_drift_stays_near_the_noise_floor() {
    let world = World::new(WorldSpec::default()).unwrap();
    let spec = EvalSpec { streams: 4, horizon_s: 60.0, ..EvalSpec::default() };
    let rep = evaluate(&world, &FrameSource::Oracle, &spec).unwrap();
    let floor = noise_floor(&world, spec.bucket_frames()).unwrap();
    for s in &rep.streams {
        assert_eq!(s.buckets.len(), 6);
        for b in &s.buckets {
            assert!(b.drift.identity_drift < 3.0 * floor, "{} vs floor {floor}", b.drift.identity_drift);
        }
    }
}

#[test]
fn constant_generator_has_no_sync_and_full_consistency() {
    let world = World::new(WorldSpec::default()).unwrap();
    let zero = DenoiserNet::zeros(NetConfig::default()).unwrap();
    let src = FrameSource::Generator { denoiser: &zero, plan: SamplerPlan::default(), chunk_len: 9, motion_len: 2, seed: 0 };
    let rep = evaluate(&world, &src, &EvalSpec { streams: 2, ..EvalSpec::default() }).unwrap();
    assert_eq!(rep.mean_sync, None);
    assert_eq!(rep.mean_consistency, 1.0);
    for s in &rep.streams {
        assert_eq!(s.overall.toy_sync, None);
    }
}

#[test]
fn white_noise_frames_do_not_sync() {
    let world = World::new(WorldSpec::default()).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let n = 300;
        let drive: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let frames = Array2::from_shape_fn((n, 8), |_| StandardNormal.sample(&mut rng));
        let s = toy_sync(&drive, &world.mouth_channel(frames.view())).toy_sync.unwrap();
        assert!(s.abs() < 0.2, "{s}");
        assert!(consistency(frames.view()) < 1.0);
    }
}

#[test]
fn evaluation_is_deterministic() {
    let world = World::new(WorldSpec::default()).unwrap();
    let net = DenoiserNet::new(NetConfig::default(), 3).unwrap();
    let src = FrameSource::Generator { denoiser: &net, plan: SamplerPlan::default(), chunk_len: 9, motion_len: 2, seed: 4 };
    let spec = EvalSpec { streams: 2, ..EvalSpec::default() };
    assert_eq!(evaluate(&world, &src, &spec).unwrap(), evaluate(&world, &src, &spec).unwrap());
}

fn tiny() -> (World, Dataset, DenoiserNet, DistillConfig, AblationBudget) {
    let world = World::new(WorldSpec::default()).unwrap();
    let data = Dataset::generate(
        &world,
        &DataConfig { sequences: 4, eval_sequences: 2, sequence_len: 120, ..DataConfig::default() },
        1,
    )
    .unwrap();
    let net = DenoiserNet::new(NetConfig { model_dim: 8, layers: 1, heads: 2, ff_dim: 16, latent_dim: 8 }, 2).unwrap();
    let cfg = DistillConfig { steps: 2, update_ratio: 1, ..DistillConfig::default() };
    let short = EvalSpec { streams: 1, horizon_s: 4.0, bucket_s: 4.0, ..EvalSpec::default() };
    let long = EvalSpec { streams: 1, horizon_s: 8.0, bucket_s: 4.0, ..EvalSpec::default() };
    (world, data, net, cfg, AblationBudget { seeds: vec![1, 2], short, long })
}

#[test]
fn chunk_ablation_emits_every_row() {
    let (world, data, net, cfg, budget) = tiny();
    let t = ablate_chunks(&world, &net, &data, &cfg, &budget).unwrap();
    assert_eq!(t.rows.len(), 8);
    assert_eq!(t.summary.len(), 4);
    for label in ["fixed_1", "fixed_3", "fixed_5", "random_1_5"] {
        let s = t.summary_for(label).unwrap();
        assert!(s.wall_ms > 0.0 && s.drift.is_finite() && s.short_sync.is_finite() && s.long_sync.is_finite());
    }
    assert!(ablate_chunks(&world, &net, &data, &cfg, &AblationBudget { seeds: vec![], ..budget }).is_err());
}

#[test]
fn motion_ablation_covers_eight_cells() {
    let (world, data, net, cfg, budget) = tiny();
    let budget = AblationBudget { seeds: vec![1], ..budget };
    let t = ablate_motion(&world, &net, &data, &cfg, &budget).unwrap();
    assert_eq!(t.rows.len(), 8);
    let cells = MotionCell::all();
    assert_eq!(cells.len(), 8);
    for c in &cells {
        let s = t.summary_for(*c).unwrap();
        assert!(s.quality.is_finite() && s.quality <= 0.0);
    }
    let applied = cells[0].apply(&cfg);
    assert_eq!(applied.motion_source, MotionSource::GroundTruth);
    assert!(applied.motion_noise != ftlk_core::distill::MotionNoise::Off && !applied.motion_in_loss);
}

#[test]
fn quality_of_the_teacher_on_its_own_samples_is_finite() {
    let (world, _, net, cfg, budget) = tiny();
    let q = generated_quality(&world, &net, &net, &cfg, &budget.short).unwrap();
    assert!(q.is_finite() && q < 0.0);
}
