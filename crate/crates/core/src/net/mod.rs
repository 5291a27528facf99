//! The miniature bidirectional chunk denoiser.
//!
//! Tokens are the `L_c` frames of a chunk. Each block applies full
//! (unmasked) self-attention across frames, cross-attention onto the
//! driving-signal tokens plus one reference token, and a SiLU feed-forward,
//! all pre-LayerNorm with residuals. The head predicts x0 for every row.

mod ops;
mod params;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffusion::CompositeInput;
use crate::error::{invalid, Result};
use crate::seeded_rng;
use ops::{AttnCache, AttnIx, LnCache};
pub use params::{clone_params, Optimizer, ParamStore, StepRule};

/// Scale applied to diffusion time before the sinusoidal embedding.
const TIME_SCALE: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Latent width `D`; input channels are `2·D + 1`.
    pub latent_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { model_dim: 32, layers: 2, heads: 2, ff_dim: 64, latent_dim: 8 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("model_dim", self.model_dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
            ("latent_dim", self.latent_dim),
        ] {
            if v == 0 {
                errs.push(format!("net.{name} must be positive"));
            }
        }
        if self.heads > 0 && !self.model_dim.is_multiple_of(self.heads) {
            errs.push("net.model_dim must be divisible by net.heads".into());
        }
        errs
    }

    pub fn input_channels(&self) -> usize {
        2 * self.latent_dim + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    TeacherReal,
    GeneratorStudent,
    FakeScore,
}

/// Anything that maps a chunk input to x0 predictions for all `L_c` rows.
pub trait Denoiser {
    fn predict(&self, input: &CompositeInput) -> Result<Array2<f64>>;
}

impl<T: Denoiser + ?Sized> Denoiser for &T {
    fn predict(&self, input: &CompositeInput) -> Result<Array2<f64>> {
        (**self).predict(input)
    }
}

/// Cotangent with respect to the differentiable inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputCotangent {
    pub z_noise: Array2<f64>,
    pub signal: Vec<f64>,
}

pub trait Trainable: Denoiser {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Adds the VJP of `predict` against `cotangent` into the gradient buffers.
    fn backward(&mut self, input: &CompositeInput, cotangent: ArrayView2<'_, f64>) -> Result<InputCotangent>;
}

#[derive(Debug, Clone)]
struct LayerIx {
    ln1: (usize, usize),
    self_attn: AttnIx,
    ln2: (usize, usize),
    cross_attn: AttnIx,
    ln3: (usize, usize),
    ff1: (usize, usize),
    ff2: (usize, usize),
}

#[derive(Debug, Clone)]
struct Layout {
    input: (usize, usize),
    time: (usize, usize),
    signal: (usize, usize),
    reference: (usize, usize),
    layers: Vec<LayerIx>,
    ln_final: (usize, usize),
    out: (usize, usize),
}

/// Parameter names and shapes in storage order.
pub fn param_specs(cfg: &NetConfig) -> Vec<(String, Vec<usize>)> {
    let (m, f, d) = (cfg.model_dim, cfg.ff_dim, cfg.latent_dim);
    let mut v: Vec<(String, Vec<usize>)> = Vec::new();
    let lin = |v: &mut Vec<(String, Vec<usize>)>, name: &str, i: usize, o: usize| {
        v.push((format!("{name}.w"), vec![i, o]));
        v.push((format!("{name}.b"), vec![o]));
    };
    lin(&mut v, "embed.input", cfg.input_channels(), m);
    lin(&mut v, "embed.time", m, m);
    lin(&mut v, "embed.signal", 1, m);
    lin(&mut v, "embed.reference", d, m);
    for l in 0..cfg.layers {
        let p = format!("block{l}");
        v.push((format!("{p}.ln1.g"), vec![m]));
        v.push((format!("{p}.ln1.b"), vec![m]));
        for x in ["q", "k", "v", "o"] {
            lin(&mut v, &format!("{p}.self.{x}"), m, m);
        }
        v.push((format!("{p}.ln2.g"), vec![m]));
        v.push((format!("{p}.ln2.b"), vec![m]));
        for x in ["q", "k", "v", "o"] {
            lin(&mut v, &format!("{p}.cross.{x}"), m, m);
        }
        v.push((format!("{p}.ln3.g"), vec![m]));
        v.push((format!("{p}.ln3.b"), vec![m]));
        lin(&mut v, &format!("{p}.ff1"), m, f);
        lin(&mut v, &format!("{p}.ff2"), f, m);
    }
    v.push(("final.ln.g".into(), vec![m]));
    v.push(("final.ln.b".into(), vec![m]));
    lin(&mut v, "head", m, d);
    v
}

fn layout(cfg: &NetConfig) -> Layout {
    // Indices follow `param_specs` order.
    let mut i = 0;
    let mut pair = || {
        let p = (i, i + 1);
        i += 2;
        p
    };
    let input = pair();
    let time = pair();
    let signal = pair();
    let reference = pair();
    let mut layers = Vec::with_capacity(cfg.layers);
    for _ in 0..cfg.layers {
        let ln1 = pair();
        let attn = |pair: &mut dyn FnMut() -> (usize, usize)| {
            let (q_w, q_b) = pair();
            let (k_w, k_b) = pair();
            let (v_w, v_b) = pair();
            let (o_w, o_b) = pair();
            AttnIx { q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b }
        };
        let self_attn = attn(&mut pair);
        let ln2 = pair();
        let cross_attn = attn(&mut pair);
        let ln3 = pair();
        let ff1 = pair();
        let ff2 = pair();
        layers.push(LayerIx { ln1, self_attn, ln2, cross_attn, ln3, ff1, ff2 });
    }
    let ln_final = pair();
    let out = pair();
    Layout { input, time, signal, reference, layers, ln_final, out }
}

struct LayerCache {
    ln1: LnCache,
    a1: Array2<f64>,
    self_attn: AttnCache,
    ln2: LnCache,
    a2: Array2<f64>,
    cross_attn: AttnCache,
    ln3: LnCache,
    a3: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

struct Cache {
    channels: Array2<f64>,
    time_feat: Array2<f64>,
    signal: Array2<f64>,
    reference: Array2<f64>,
    ctx: Array2<f64>,
    layers: Vec<LayerCache>,
    ln_final: LnCache,
    h_final: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct DenoiserNet {
    config: NetConfig,
    params: ParamStore,
    layout: Layout,
}

impl DenoiserNet {
    /// Scaled-Gaussian init (variance `1/fan_in`), zero biases, unit norms.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(invalid(errs.join("; ")));
        }
        let mut rng = seeded_rng(seed, 21);
        let mut params = ParamStore::new();
        for (name, shape) in param_specs(&config) {
            let n: usize = shape.iter().product();
            let value = if shape.len() == 2 {
                let dist = Normal::new(0.0, (1.0 / shape[0] as f64).sqrt()).expect("positive std");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            } else if name.ends_with(".g") {
                vec![1.0; n]
            } else {
                vec![0.0; n]
            };
            params.push(name, shape, value)?;
        }
        let layout = layout(&config);
        Ok(Self { config, params, layout })
    }

    /// All parameters zero (including norm gains).
    pub fn zeros(config: NetConfig) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        for i in 0..net.params.len() {
            net.params.value_mut(i).iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(net)
    }

    pub fn from_params(config: NetConfig, params: ParamStore) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(invalid(errs.join("; ")));
        }
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(invalid(format!("expected {} parameter entries, got {}", specs.len(), params.len())));
        }
        for (i, (name, shape)) in specs.iter().enumerate() {
            if params.name(i) != name || params.shape(i) != &shape[..] {
                return Err(invalid(format!(
                    "entry {i}: expected {name} {shape:?}, got {} {:?}",
                    params.name(i),
                    params.shape(i)
                )));
            }
        }
        let layout = layout(&config);
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn forward(&self, input: &CompositeInput) -> Result<Array2<f64>> {
        self.check(input)?;
        Ok(self.run(input).0)
    }

    fn check(&self, input: &CompositeInput) -> Result<()> {
        let d = self.config.latent_dim;
        let lc = input.len();
        if lc == 0 {
            return Err(invalid("empty chunk"));
        }
        if input.z_noise.ncols() != d || input.z_cond.dim() != (lc, d) || input.reference.len() != d {
            return Err(invalid(format!("chunk latent width does not match net latent_dim {d}")));
        }
        if input.z_mask.len() != lc || input.signal.len() != lc || input.timesteps.len() != lc {
            return Err(invalid("mask, signal and timestep streams must have one entry per frame"));
        }
        Ok(())
    }

    fn run(&self, input: &CompositeInput) -> (Array2<f64>, Cache) {
        let p = self.params.view();
        let ly = &self.layout;
        let m = self.config.model_dim;
        let lc = input.len();
        let heads = self.config.heads;

        let channels = input.channels();
        let pos = positions(lc, m);
        let mut time_feat = Array2::zeros((lc, m));
        for (i, &t) in input.timesteps.iter().enumerate() {
            time_feat.row_mut(i).assign(&ops::sinusoid(t * TIME_SCALE, m));
        }
        let mut h = ops::linear(&p, ly.input.0, ly.input.1, channels.view())
            + ops::linear(&p, ly.time.0, ly.time.1, time_feat.view())
            + &pos;

        let signal = Array2::from_shape_vec((lc, 1), input.signal.clone()).expect("lc x 1");
        let reference = input.reference.view().insert_axis(Axis(0)).to_owned();
        let mut ctx = Array2::zeros((lc + 1, m));
        ctx.slice_mut(s![..lc, ..]).assign(&(ops::linear(&p, ly.signal.0, ly.signal.1, signal.view()) + &pos));
        ctx.slice_mut(s![lc.., ..])
            .assign(&ops::linear(&p, ly.reference.0, ly.reference.1, reference.view()));

        let mut layers = Vec::with_capacity(ly.layers.len());
        for lx in &ly.layers {
            let h_in = h;
            let (a1, ln1) = ops::layer_norm(h_in.view(), p.vector(lx.ln1.0), p.vector(lx.ln1.1));
            let (sa, self_attn) = ops::attention(&p, &lx.self_attn, heads, a1.view(), a1.view());
            let h1 = &h_in + &sa;
            let (a2, ln2) = ops::layer_norm(h1.view(), p.vector(lx.ln2.0), p.vector(lx.ln2.1));
            let (ca, cross_attn) = ops::attention(&p, &lx.cross_attn, heads, a2.view(), ctx.view());
            let h2 = &h1 + &ca;
            let (a3, ln3) = ops::layer_norm(h2.view(), p.vector(lx.ln3.0), p.vector(lx.ln3.1));
            let pre = ops::linear(&p, lx.ff1.0, lx.ff1.1, a3.view());
            let act = ops::silu(&pre);
            h = &h2 + &ops::linear(&p, lx.ff2.0, lx.ff2.1, act.view());
            layers.push(LayerCache { ln1, a1, self_attn, ln2, a2, cross_attn, ln3, a3, pre, act });
        }
        let (h_final, ln_final) = ops::layer_norm(h.view(), p.vector(ly.ln_final.0), p.vector(ly.ln_final.1));
        let out = ops::linear(&p, ly.out.0, ly.out.1, h_final.view());
        (out, Cache { channels, time_feat, signal, reference, ctx, layers, ln_final, h_final })
    }
}

fn positions(len: usize, width: usize) -> Array2<f64> {
    let mut pos = Array2::zeros((len, width));
    for i in 0..len {
        pos.row_mut(i).assign(&ops::sinusoid(i as f64, width));
    }
    pos
}

impl Denoiser for DenoiserNet {
    fn predict(&self, input: &CompositeInput) -> Result<Array2<f64>> {
        self.forward(input)
    }
}

impl Trainable for DenoiserNet {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn backward(&mut self, input: &CompositeInput, cotangent: ArrayView2<'_, f64>) -> Result<InputCotangent> {
        self.check(input)?;
        if cotangent.dim() != input.z_noise.dim() {
            return Err(invalid(format!(
                "cotangent shape {:?} does not match output {:?}",
                cotangent.dim(),
                input.z_noise.dim()
            )));
        }
        let (_, cache) = self.run(input);
        let heads = self.config.heads;
        let d = self.config.latent_dim;
        let lc = input.len();
        let ly = self.layout.clone();
        let (p, mut g) = self.params.split();

        let dh_final = ops::linear_back(&p, &mut g, ly.out.0, ly.out.1, cache.h_final.view(), cotangent);
        let mut dh = ops::layer_norm_back(
            &mut g,
            ly.ln_final.0,
            ly.ln_final.1,
            p.vector(ly.ln_final.0),
            &cache.ln_final,
            dh_final.view(),
        );
        let mut dctx = Array2::<f64>::zeros(cache.ctx.raw_dim());
        for (lx, lc_) in ly.layers.iter().zip(&cache.layers).rev() {
            // feed-forward
            let dact = ops::linear_back(&p, &mut g, lx.ff2.0, lx.ff2.1, lc_.act.view(), dh.view());
            let dpre = ops::silu_back(&lc_.pre, dact.view());
            let da3 = ops::linear_back(&p, &mut g, lx.ff1.0, lx.ff1.1, lc_.a3.view(), dpre.view());
            let dh2 = &dh + &ops::layer_norm_back(&mut g, lx.ln3.0, lx.ln3.1, p.vector(lx.ln3.0), &lc_.ln3, da3.view());
            // cross-attention
            let (da2, dc) = ops::attention_back(
                &p,
                &mut g,
                &lx.cross_attn,
                heads,
                lc_.a2.view(),
                cache.ctx.view(),
                &lc_.cross_attn,
                dh2.view(),
            );
            dctx += &dc;
            let dh1 = &dh2 + &ops::layer_norm_back(&mut g, lx.ln2.0, lx.ln2.1, p.vector(lx.ln2.0), &lc_.ln2, da2.view());
            // self-attention
            let (dx, dy) = ops::attention_back(
                &p,
                &mut g,
                &lx.self_attn,
                heads,
                lc_.a1.view(),
                lc_.a1.view(),
                &lc_.self_attn,
                dh1.view(),
            );
            let da1 = dx + dy;
            dh = &dh1 + &ops::layer_norm_back(&mut g, lx.ln1.0, lx.ln1.1, p.vector(lx.ln1.0), &lc_.ln1, da1.view());
        }

        let dsig_tokens = dctx.slice(s![..lc, ..]);
        let dsig = ops::linear_back(&p, &mut g, ly.signal.0, ly.signal.1, cache.signal.view(), dsig_tokens);
        let dref_tok = dctx.slice(s![lc.., ..]);
        ops::linear_back(&p, &mut g, ly.reference.0, ly.reference.1, cache.reference.view(), dref_tok);
        ops::linear_back(&p, &mut g, ly.time.0, ly.time.1, cache.time_feat.view(), dh.view());
        let dch = ops::linear_back(&p, &mut g, ly.input.0, ly.input.1, cache.channels.view(), dh.view());

        Ok(InputCotangent {
            z_noise: dch.slice(s![.., ..d]).to_owned(),
            signal: dsig.column(0).to_vec(),
        })
    }
}

/// Closed-form parameter count for a config.
pub fn param_count(cfg: &NetConfig) -> usize {
    let (m, f, d) = (cfg.model_dim, cfg.ff_dim, cfg.latent_dim);
    let embed = (2 * d + 1) * m + m + m * m + m + 2 * m + d * m + m;
    let block = 8 * m * m + 15 * m + 2 * m * f + f;
    let head = 2 * m + m * d + d;
    embed + cfg.layers * block + head
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{assemble_input, standard_normal};
    use ndarray::Array1;

    fn tiny() -> NetConfig {
        NetConfig { model_dim: 4, layers: 1, heads: 2, ff_dim: 6, latent_dim: 3 }
    }

    fn input(cfg: &NetConfig, lc: usize, lm: usize, seed: u64) -> CompositeInput {
        let d = cfg.latent_dim;
        let motion = standard_normal(lm, d, seed, 100);
        let target = standard_normal(lc - lm, d, seed, 101);
        let noise = standard_normal(lc - lm, d, seed, 102);
        let reference = Array1::from_iter(standard_normal(1, d, seed, 103));
        let signal: Vec<f64> = standard_normal(1, lc, seed, 104).iter().map(|v| v.tanh()).collect();
        assemble_input(motion.view(), target.view(), reference.view(), 0.6, noise.view(), &signal).unwrap()
    }

    /// Perturbs every norm gain and bias so no parameter sits at a symmetric point.
    fn jittered(cfg: NetConfig, seed: u64) -> DenoiserNet {
        let mut net = DenoiserNet::new(cfg, seed).unwrap();
        let n = net.params.len();
        for i in 0..n {
            let len = net.params.value(i).len();
            let jit = standard_normal(1, len, seed, 200 + i as u64);
            for (v, j) in net.params.value_mut(i).iter_mut().zip(jit.iter()) {
                *v += 0.3 * j;
            }
        }
        net
    }

    fn contract(out: &Array2<f64>, c: &Array2<f64>) -> f64 {
        (out * c).sum()
    }

    #[test]
    fn zero_params_give_zero_output() {
        let cfg = NetConfig::default();
        let net = DenoiserNet::zeros(cfg.clone()).unwrap();
        let out = net.forward(&input(&cfg, 9, 2, 1)).unwrap();
        assert_eq!(out.dim(), (9, 8));
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let cfg = NetConfig::default();
        let net = DenoiserNet::new(cfg.clone(), 5).unwrap();
        let x = input(&cfg, 9, 2, 2);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x.clone()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_mismatched_width() {
        let net = DenoiserNet::new(NetConfig::default(), 0).unwrap();
        assert!(net.forward(&input(&tiny(), 5, 2, 0)).is_err());
    }

    #[test]
    fn parameter_gradients_match_central_differences() {
        let cfg = tiny();
        let mut net = jittered(cfg.clone(), 3);
        let x = input(&cfg, 5, 2, 4);
        let c = standard_normal(5, cfg.latent_dim, 4, 300);
        net.params.zero_grad();
        net.backward(&x, c.view()).unwrap();
        let analytic = net.params.flat_grads();
        let h = 1e-5;
        let mut k = 0;
        let mut worst = 0.0f64;
        for i in 0..net.params.len() {
            for j in 0..net.params.value(i).len() {
                let orig = net.params.value(i)[j];
                net.params.value_mut(i)[j] = orig + h;
                let up = contract(&net.forward(&x).unwrap(), &c);
                net.params.value_mut(i)[j] = orig - h;
                let down = contract(&net.forward(&x).unwrap(), &c);
                net.params.value_mut(i)[j] = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = (analytic[k] - fd).abs() / fd.abs().max(analytic[k].abs()).max(1e-6);
                worst = worst.max(rel);
                k += 1;
            }
        }
        assert_eq!(k, param_count(&cfg));
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn input_cotangent_matches_central_differences() {
        let cfg = tiny();
        let mut net = jittered(cfg.clone(), 8);
        let x = input(&cfg, 5, 2, 9);
        let c = standard_normal(5, cfg.latent_dim, 9, 300);
        let ct = net.backward(&x, c.view()).unwrap();
        let h = 1e-5;
        for r in 0..5 {
            for col in 0..cfg.latent_dim {
                let mut up = x.clone();
                up.z_noise[[r, col]] += h;
                let mut down = x.clone();
                down.z_noise[[r, col]] -= h;
                let fd = (contract(&net.forward(&up).unwrap(), &c) - contract(&net.forward(&down).unwrap(), &c)) / (2.0 * h);
                assert!((fd - ct.z_noise[[r, col]]).abs() < 1e-7 * fd.abs().max(1.0));
            }
            let mut up = x.clone();
            up.signal[r] += h;
            let mut down = x.clone();
            down.signal[r] -= h;
            let fd = (contract(&net.forward(&up).unwrap(), &c) - contract(&net.forward(&down).unwrap(), &c)) / (2.0 * h);
            assert!((fd - ct.signal[r]).abs() < 1e-7 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn earlier_target_depends_on_later_frames() {
        let cfg = NetConfig::default();
        let mut net = DenoiserNet::new(cfg.clone(), 11).unwrap();
        let x = input(&cfg, 9, 2, 12);
        // basis cotangent on the first target row
        let mut c = Array2::zeros((9, cfg.latent_dim));
        c[[2, 0]] = 1.0;
        let ct = net.backward(&x, c.view()).unwrap();
        let later: f64 = ct.z_noise.slice(s![3.., ..]).iter().map(|v| v.abs()).sum();
        assert!(later > 0.0);
        // swapping two later frames moves the earlier prediction
        let mut swapped = x.clone();
        let (a, b) = (swapped.z_noise.row(6).to_owned(), swapped.z_noise.row(8).to_owned());
        swapped.z_noise.row_mut(6).assign(&b);
        swapped.z_noise.row_mut(8).assign(&a);
        let p0 = net.forward(&x).unwrap();
        let p1 = net.forward(&swapped).unwrap();
        assert_ne!(p0.row(2), p1.row(2));
    }

    #[test]
    fn backward_accumulates_additively() {
        let cfg = tiny();
        let mut net = jittered(cfg.clone(), 1);
        let x = input(&cfg, 5, 1, 2);
        let c1 = standard_normal(5, 3, 1, 1);
        let c2 = standard_normal(5, 3, 1, 2);
        net.params.zero_grad();
        net.backward(&x, c1.view()).unwrap();
        net.backward(&x, c2.view()).unwrap();
        let seq = net.params.flat_grads();
        net.params.zero_grad();
        net.backward(&x, (&c1 + &c2).view()).unwrap();
        for (a, b) in seq.iter().zip(net.params.flat_grads()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        net.params.zero_grad();
        net.backward(&x, Array2::zeros((5, 3)).view()).unwrap();
        assert!(net.params.flat_grads().iter().all(|g| *g == 0.0));
        assert!(net.backward(&x, Array2::zeros((4, 3)).view()).is_err());
    }

    #[test]
    fn param_count_closed_form() {
        for cfg in [NetConfig::default(), tiny(), NetConfig { layers: 3, ff_dim: 10, ..tiny() }] {
            let net = DenoiserNet::new(cfg.clone(), 0).unwrap();
            assert_eq!(net.params.num_scalars(), param_count(&cfg));
        }
        // independent tally for the default config: m=32, f=64, d=8
        let embed = 17 * 32 + 32 + 32 * 32 + 32 + 32 + 32 + 8 * 32 + 32;
        let block = 3 * 64 + 8 * (32 * 32 + 32) + 32 * 64 + 64 + 64 * 32 + 32;
        let head = 64 + 32 * 8 + 8;
        assert_eq!(param_count(&NetConfig::default()), embed + 2 * block + head);
    }

    #[test]
    fn clone_checksum_and_reload() {
        let net = DenoiserNet::new(NetConfig::default(), 4).unwrap();
        let copy = clone_params(net.params());
        assert_eq!(copy.checksum(), net.params().checksum());
        let again = DenoiserNet::from_params(NetConfig::default(), copy).unwrap();
        assert_eq!(again.params().checksum(), net.params().checksum());
        assert!(DenoiserNet::from_params(tiny(), net.into_params()).is_err());
    }
}
