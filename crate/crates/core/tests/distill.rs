mod common;

use common::{synthetic_window, GaussianScore, LinearGenerator};
use ftlk_core::diffusion::{NoiseSchedule, SamplerPlan};
use ftlk_core::distill::{
    distill, dmd_generator_step, dmd_gradient, draw_chunks, fake_score_step, full_trace_gradients, rollout,
    ChunkSchedule, DataConfig, Dataset, DistillConfig, Draw, MotionNoise, MotionProvenance, MotionSource,
};
use ftlk_core::net::{DenoiserNet, NetConfig, Optimizer, StepRule, Trainable};
use ftlk_core::world::{World, WorldSpec};
use ndarray::s;

fn tiny_net() -> NetConfig {
    NetConfig { model_dim: 4, layers: 1, heads: 2, ff_dim: 6, latent_dim: 3 }
}

fn tiny_cfg() -> DistillConfig {
    DistillConfig {
        k_max: 2,
        sampler: SamplerPlan::uniform(2),
        chunk_len: 5,
        motion_len: 2,
        ..DistillConfig::default()
    }
}

#[test]
fn gaussian_linear_generator_matches_hand_derived_update() {
    let cfg = DistillConfig {
        k_max: 1,
        chunk_schedule: ChunkSchedule::Fixed(1),
        sampler: SamplerPlan::uniform(1),
        chunk_len: 6,
        motion_len: 2,
        motion_noise: MotionNoise::Off,
        generator_lr: 0.05,
        ..DistillConfig::default()
    };
    let real = GaussianScore { mu: 0.7, var: 0.5 };
    let fake = GaussianScore { mu: -0.2, var: 1.3 };
    for seed in 0..5u64 {
        let theta0 = 0.4 + 0.1 * seed as f64;
        let mut gen = LinearGenerator::new(theta0);
        let w = synthetic_window(6, 3, seed);
        let mut opt = Optimizer::new(StepRule::Sgd, cfg.generator_lr);
        let rep = dmd_generator_step(&mut gen, &real, &fake, &cfg, &w, &mut opt, seed).unwrap();

        let t = rep.direction.score.t;
        let alpha = NoiseSchedule::default().alpha(t);
        let z = rep.step_input.z_noise.slice(s![2.., ..]).to_owned();
        let zt = rep.direction.score.input.z_noise.slice(s![2.., ..]).to_owned();
        // dL/dθ = −Σ α (s_real − s_fake)(z̃) · ∂G/∂θ with ∂G/∂θ = z
        let mut grad = 0.0;
        for (zi, zti) in z.iter().zip(zt.iter()) {
            let d = real.marginal_score(*zti, t) - fake.marginal_score(*zti, t);
            grad += -alpha * d * zi;
        }
        let expect = theta0 - cfg.generator_lr * grad;
        assert!((gen.theta() - expect).abs() < 1e-8, "seed {seed}: {} vs {expect}", gen.theta());
        assert!(grad.abs() > 1e-3);
    }
}

#[test]
fn identical_score_nets_leave_generator_unchanged() {
    let cfg = tiny_cfg();
    let real = DenoiserNet::new(tiny_net(), 1).unwrap();
    let fake = real.clone();
    let mut gen = DenoiserNet::new(tiny_net(), 2).unwrap();
    let before = gen.params().clone();
    let w = synthetic_window(cfg.window_len(2), 3, 9);
    for rule in [StepRule::Sgd, StepRule::Adam] {
        let mut opt = Optimizer::new(rule, 0.1);
        for seed in 0..4 {
            let rep = dmd_generator_step(&mut gen, &real, &fake, &cfg, &w, &mut opt, seed).unwrap();
            assert_eq!(rep.direction.d_norm, 0.0);
            assert_eq!(rep.grad_norm, 0.0);
        }
    }
    assert!(gen.params().same_values(&before));
}

#[test]
fn truncated_estimator_is_unbiased_over_its_support() {
    let cfg = tiny_cfg();
    let w = synthetic_window(cfg.window_len(2), 3, 4);
    for draw_seed in 0..5u64 {
        let real = DenoiserNet::new(tiny_net(), 100 + draw_seed).unwrap();
        let fake = DenoiserNet::new(tiny_net(), 200 + draw_seed).unwrap();
        let mut gen = DenoiserNet::new(tiny_net(), 300 + draw_seed).unwrap();
        let seed = 7 + draw_seed;
        let full = full_trace_gradients(&mut gen, &real, &fake, &cfg, &w, seed).unwrap();
        assert_eq!(full.len(), 4);
        let n = full[0].1.len();
        let mut truncated = vec![0.0; n];
        let mut reference = vec![0.0; n];
        for (draw, g) in &full {
            gen.params_mut().zero_grad();
            dmd_gradient(&mut gen, &real, &fake, &cfg, &w, *draw, seed).unwrap();
            for (acc, v) in truncated.iter_mut().zip(gen.params().flat_grads()) {
                *acc += v / 4.0;
            }
            for (acc, v) in reference.iter_mut().zip(g) {
                *acc += v / 4.0;
            }
        }
        let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(scale > 0.0);
        for (a, b) in truncated.iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn self_conditioning_and_provenance() {
    let cfg = tiny_cfg();
    let gen = DenoiserNet::new(tiny_net(), 3).unwrap();
    let w = synthetic_window(cfg.window_len(2), 3, 5);
    let (trace, _) = rollout(&gen, &cfg, &w, Draw { k: 2, t_index: 1 }, 11).unwrap();
    assert_eq!(trace.chunks.len(), 2);
    assert_eq!(trace.provenance, vec![MotionProvenance::GroundTruth, MotionProvenance::SelfGenerated]);
    assert_eq!(trace.chunks[0].motion(), w.motion(2));
    assert_eq!(trace.chunks[1].motion(), trace.chunks[0].tail(2));
    // the prefix does not depend on how many chunks are rolled out
    let (short, _) = rollout(&gen, &cfg, &w, Draw { k: 1, t_index: 0 }, 11).unwrap();
    assert_eq!(short.chunks[0], trace.chunks[0]);

    let fixed = DistillConfig { chunk_schedule: ChunkSchedule::Fixed(1), ..cfg.clone() };
    for seed in 0..20 {
        let d = draw_chunks(&fixed, seed);
        assert_eq!(d.k, 1);
        let (tr, _) = rollout(&gen, &fixed, &w, d, seed).unwrap();
        assert_eq!(tr.chunks.len(), 1);
        assert_eq!(tr.provenance, vec![MotionProvenance::GroundTruth]);
    }
    assert!(rollout(&gen, &cfg, &w, Draw { k: 3, t_index: 0 }, 0).is_err());
}

#[test]
fn random_schedule_covers_one_through_k_max() {
    let cfg = DistillConfig::default();
    let mut seen = [false; 6];
    for seed in 0..200 {
        let d = draw_chunks(&cfg, seed);
        assert!((1..=5).contains(&d.k));
        assert!(d.t_index < 4);
        seen[d.k] = true;
    }
    assert!(seen[1..].iter().all(|s| *s));
}

#[test]
fn motion_in_loss_toggles_cotangent_support() {
    let real = DenoiserNet::new(tiny_net(), 1).unwrap();
    let fake = DenoiserNet::new(tiny_net(), 2).unwrap();
    let mut gen = DenoiserNet::new(tiny_net(), 3).unwrap();
    for on in [false, true] {
        let cfg = DistillConfig { motion_in_loss: on, ..tiny_cfg() };
        let w = synthetic_window(cfg.window_len(2), 3, 6);
        gen.params_mut().zero_grad();
        let rep = dmd_gradient(&mut gen, &real, &fake, &cfg, &w, Draw { k: 2, t_index: 0 }, 1).unwrap();
        let motion_mass: f64 = rep.direction.cotangent.slice(s![..2, ..]).iter().map(|v| v.abs()).sum();
        let target_mass: f64 = rep.direction.cotangent.slice(s![2.., ..]).iter().map(|v| v.abs()).sum();
        assert!(target_mass > 0.0);
        assert_eq!(motion_mass > 0.0, on);
    }
}

#[test]
fn motion_source_selects_score_conditioning() {
    let real = DenoiserNet::new(tiny_net(), 1).unwrap();
    let fake = DenoiserNet::new(tiny_net(), 2).unwrap();
    let mut gen = DenoiserNet::new(tiny_net(), 3).unwrap();
    let base = DistillConfig { motion_noise: MotionNoise::Off, ..tiny_cfg() };
    let w = synthetic_window(base.window_len(2), 3, 8);
    let draw = Draw { k: 2, t_index: 1 };
    let gt = DistillConfig { motion_source: MotionSource::GroundTruth, ..base.clone() };
    let rep = dmd_gradient(&mut gen, &real, &fake, &gt, &w, draw, 2).unwrap();
    assert_eq!(rep.direction.score.input.z_noise.slice(s![..2, ..]), w.latents.slice(s![3..5, ..]));
    let pred = DistillConfig { motion_source: MotionSource::Predicted, ..base.clone() };
    let rep = dmd_gradient(&mut gen, &real, &fake, &pred, &w, draw, 2).unwrap();
    assert_eq!(rep.direction.score.input.z_noise.slice(s![..2, ..]), rep.trace.chunks[0].tail(2));
    let noisy = DistillConfig { motion_noise: MotionNoise::On(0.25), ..pred };
    let rep = dmd_gradient(&mut gen, &real, &fake, &noisy, &w, draw, 2).unwrap();
    assert!(rep.direction.score.t_motion <= 0.25);
    assert_ne!(rep.direction.score.input.z_noise.slice(s![..2, ..]), rep.trace.chunks[0].tail(2));
}

#[test]
fn fake_score_step_zero_lr_and_determinism() {
    let cfg = tiny_cfg();
    let gen = DenoiserNet::new(tiny_net(), 3).unwrap();
    let w = synthetic_window(cfg.window_len(2), 3, 5);
    let mut fake = DenoiserNet::new(tiny_net(), 4).unwrap();
    let before = fake.params().clone();
    fake_score_step(&mut fake, &gen, &cfg, &w, &mut Optimizer::new(StepRule::Sgd, 0.0), 1).unwrap();
    assert!(fake.params().same_values(&before));
    let mut a = fake.clone();
    let mut b = fake.clone();
    let la = fake_score_step(&mut a, &gen, &cfg, &w, &mut Optimizer::new(StepRule::Sgd, 0.01), 2).unwrap();
    let lb = fake_score_step(&mut b, &gen, &cfg, &w, &mut Optimizer::new(StepRule::Sgd, 0.01), 2).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.params().checksum(), b.params().checksum());
}

#[test]
fn fake_score_tracks_frozen_generator() {
    let cfg = DistillConfig { step_rule: StepRule::Adam, ..tiny_cfg() };
    let gen = DenoiserNet::new(tiny_net(), 3).unwrap();
    let mut fake = DenoiserNet::new(tiny_net(), 4).unwrap();
    let mut opt = Optimizer::new(StepRule::Adam, 1e-2);
    let mut losses = Vec::new();
    for step in 0..60u64 {
        let w = synthetic_window(cfg.window_len(2), 3, step % 6);
        losses.push(fake_score_step(&mut fake, &gen, &cfg, &w, &mut opt, step).unwrap());
    }
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[50..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn distill_loop_accounting_and_determinism() {
    let world = World::new(WorldSpec::default()).unwrap();
    let dcfg = DataConfig { sequences: 3, eval_sequences: 1, sequence_len: 80, ..DataConfig::default() };
    let data = Dataset::generate(&world, &dcfg, 1).unwrap();
    let net = NetConfig { model_dim: 8, layers: 1, heads: 2, ff_dim: 8, latent_dim: 8 };
    let sft = DenoiserNet::new(net, 5).unwrap();
    let cfg = DistillConfig { steps: 4, update_ratio: 3, k_max: 2, ..DistillConfig::default() };
    let mut lines = 0;
    let a = distill(&sft, &data, &cfg, 9, |_| lines += 1).unwrap();
    assert_eq!(lines, 4);
    assert_eq!(a.log.len(), 4);
    assert_eq!(a.generator_steps, 4);
    assert_eq!(a.fake_steps, 12);
    assert!(a.log.iter().all(|l| (1..=2).contains(&l.k) && l.t_prime < 4));
    let b = distill(&sft, &data, &cfg, 9, |_| {}).unwrap();
    assert_eq!(a.generator.params().checksum(), b.generator.params().checksum());
    assert_eq!(a.fake_score.params().checksum(), b.fake_score.params().checksum());
    assert_ne!(a.generator.params().checksum(), sft.params().checksum());

    let zero = DistillConfig { steps: 0, ..cfg };
    let z = distill(&sft, &data, &zero, 9, |_| {}).unwrap();
    assert!(z.generator.params().same_values(sft.params()));
    assert!(z.log.is_empty());
}
