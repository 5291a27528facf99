use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ftlk_core::checkpoint::Checkpoint;
use ftlk_core::config::{RunConfig, RUN_DIR_ENV};
use ftlk_core::distill::{distill, pretrain_teacher, stage1_adapt, ChunkSchedule, Dataset, FitReport};
use ftlk_core::eval::{ablate_chunks, ablate_motion, evaluate, EvalSpec, FrameSource, LONG_HORIZON_S, SHORT_HORIZON_S};
use ftlk_core::latency::{predict, simulate_pipeline, Overlap, PipelineSpec};
use ftlk_core::net::{DenoiserNet, RoleTag};
use ftlk_core::world::World;
use serde::Serialize;

use crate::{serve, AblationArg, Command, ConfigArg, HorizonArg, OverlapArg, ScheduleArg};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Pretrain { config, steps, out } => pretrain(&config, steps, out),
        Command::Sft { config, teacher, buckets, steps, out } => sft(&config, teacher, buckets, steps, out),
        Command::Distill { config, sft, schedule, k, steps, out } => distill_cmd(&config, sft, schedule, k, steps, out),
        Command::Stream { config, checkpoint, fps, script, serve: serving, port, max_sessions, identity_seed, unpaced, out } => {
            let cfg = load_config(&config)?;
            let net = load_net(&checkpoint)?;
            let opts = serve::StreamOpts { fps, identity_seed, unpaced };
            if serving {
                serve::serve(&cfg, net, &opts, port, max_sessions)
            } else {
                let script = script.expect("clap enforces --script without --serve");
                serve::run_script(&cfg, net, &opts, &script, out.as_deref())
            }
        }
        Command::Simulate { spec, gpus, overlap, cycles, trace } => simulate(&spec, gpus, overlap, cycles, trace),
        Command::Ablate { which, config, sft } => ablate(which, &config, sft),
        Command::Eval { config, checkpoint, oracle: _, horizon } => eval(&config, checkpoint, horizon),
    }
}

/// Loads the run config (or defaults), applies the run-dir override and validates.
pub fn load_config(arg: &ConfigArg) -> Result<RunConfig> {
    match &arg.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading config {}", path.display())),
        None => {
            let mut cfg = RunConfig::default();
            cfg.apply_env();
            cfg.check()?;
            Ok(cfg)
        }
    }
}

fn prepare_run_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.run_dir)
        .with_context(|| format!("creating run_dir {} (override with {RUN_DIR_ENV})", cfg.run_dir.display()))?;
    fs::write(cfg.run_dir.join("config.json"), cfg.to_json() + "\n")?;
    Ok(())
}

fn load_net(path: &Path) -> Result<DenoiserNet> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(ck.into_net()?)
}

fn save_net(net: &DenoiserNet, role: RoleTag, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Checkpoint::from_net(net, role).save(path).with_context(|| format!("writing checkpoint {}", path.display()))?;
    Ok(())
}

/// Line-buffered JSONL writer; every line reaches the file before the next step.
struct JsonlLog(BufWriter<File>);

impl JsonlLog {
    fn create(path: &Path) -> Result<Self> {
        Ok(Self(BufWriter::new(File::create(path).with_context(|| format!("creating log {}", path.display()))?)))
    }

    fn line(&mut self, value: &impl Serialize) -> Result<()> {
        serde_json::to_writer(&mut self.0, value)?;
        self.0.write_all(b"\n")?;
        self.0.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct FitLine {
    step: usize,
    chunk_len: usize,
    loss: f64,
}

fn write_fit_log(path: &Path, report: &FitReport) -> Result<()> {
    let mut log = JsonlLog::create(path)?;
    for (step, (&loss, &chunk_len)) in report.losses.iter().zip(&report.lengths).enumerate() {
        log.line(&FitLine { step, chunk_len, loss })?;
    }
    Ok(())
}

fn summary(value: serde_json::Value) {
    println!("{value}");
}

fn pretrain(config: &ConfigArg, steps: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = steps {
        cfg.train.pretrain.steps = s;
    }
    prepare_run_dir(&cfg)?;
    let world = World::new(cfg.world.clone())?;
    let data = Dataset::generate(&world, &cfg.data, cfg.seeds.data)?;
    let (teacher, report) = pretrain_teacher(
        &data,
        cfg.net.clone(),
        cfg.data.chunk_len,
        cfg.data.motion_len,
        &cfg.train.pretrain,
        cfg.seeds.init,
        cfg.seeds.run,
    )?;
    write_fit_log(&cfg.run_dir.join("pretrain_log.jsonl"), &report)?;
    let out = out.unwrap_or_else(|| cfg.run_dir.join("teacher.ftlk"));
    save_net(&teacher, RoleTag::TeacherReal, &out)?;
    summary(serde_json::json!({
        "checkpoint": out,
        "steps": report.losses.len(),
        "final_loss": report.losses.last(),
    }));
    Ok(())
}

fn sft(
    config: &ConfigArg,
    teacher: Option<PathBuf>,
    buckets: Option<Vec<usize>>,
    steps: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(b) = buckets {
        cfg.train.buckets = b;
    }
    if let Some(s) = steps {
        cfg.train.sft.steps = s;
    }
    cfg.check()?;
    prepare_run_dir(&cfg)?;
    let teacher = load_net(&teacher.unwrap_or_else(|| cfg.run_dir.join("teacher.ftlk")))?;
    let world = World::new(cfg.world.clone())?;
    let data = Dataset::generate(&world, &cfg.data, cfg.seeds.data)?;
    let (adapted, report) =
        stage1_adapt(&teacher, &data, &cfg.train.buckets, cfg.data.motion_len, &cfg.train.sft, cfg.seeds.run)?;
    write_fit_log(&cfg.run_dir.join("sft_log.jsonl"), &report)?;
    let out = out.unwrap_or_else(|| cfg.run_dir.join("sft.ftlk"));
    save_net(&adapted, RoleTag::TeacherReal, &out)?;
    summary(serde_json::json!({
        "checkpoint": out,
        "steps": report.losses.len(),
        "buckets": cfg.train.buckets,
        "final_loss": report.losses.last(),
    }));
    Ok(())
}

fn distill_cmd(
    config: &ConfigArg,
    sft: Option<PathBuf>,
    schedule: Option<ScheduleArg>,
    k: Option<usize>,
    steps: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    let d = &mut cfg.distill;
    match (schedule, k) {
        (Some(ScheduleArg::Fixed), Some(k)) => {
            d.chunk_schedule = ChunkSchedule::Fixed(k);
            d.k_max = d.k_max.max(k);
        }
        (Some(ScheduleArg::Fixed), None) => d.chunk_schedule = ChunkSchedule::Fixed(d.k_max),
        (Some(ScheduleArg::Random), k) => {
            d.chunk_schedule = ChunkSchedule::RandomUniform;
            d.k_max = k.unwrap_or(d.k_max);
        }
        (None, Some(k)) => match d.chunk_schedule {
            ChunkSchedule::Fixed(_) => {
                d.chunk_schedule = ChunkSchedule::Fixed(k);
                d.k_max = d.k_max.max(k);
            }
            ChunkSchedule::RandomUniform => d.k_max = k,
        },
        (None, None) => {}
    }
    if let Some(s) = steps {
        d.steps = s;
    }
    cfg.check()?;
    prepare_run_dir(&cfg)?;
    let input = sft.unwrap_or_else(|| cfg.run_dir.join("sft.ftlk"));
    let out = out.unwrap_or_else(|| cfg.run_dir.join("generator.ftlk"));

    if cfg.distill.steps == 0 {
        let bytes = fs::read(&input).with_context(|| format!("reading checkpoint {}", input.display()))?;
        Checkpoint::from_bytes(&bytes)?;
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(&out, &bytes)?;
        summary(serde_json::json!({ "checkpoint": out, "generator_steps": 0, "copied_from": input }));
        return Ok(());
    }

    let sft_net = load_net(&input)?;
    let world = World::new(cfg.world.clone())?;
    let data = Dataset::generate(&world, &cfg.data, cfg.seeds.data)?;
    let mut log = JsonlLog::create(&cfg.run_dir.join("distill_log.jsonl"))?;
    let mut log_err = None;
    let outcome = distill(&sft_net, &data, &cfg.distill, cfg.seeds.run, |line| {
        if log_err.is_none() {
            log_err = log.line(line).err();
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    save_net(&outcome.generator, RoleTag::GeneratorStudent, &out)?;
    save_net(&outcome.fake_score, RoleTag::FakeScore, &cfg.run_dir.join("fake_score.ftlk"))?;
    summary(serde_json::json!({
        "checkpoint": out,
        "generator_steps": outcome.generator_steps,
        "fake_steps": outcome.fake_steps,
        "wall_ms": outcome.wall_ms,
    }));
    Ok(())
}

fn load_spec(path: &Path) -> Result<PipelineSpec> {
    if !path.exists() {
        match path.file_name().and_then(|n| n.to_str()) {
            Some("paper_h800.json") => return Ok(PipelineSpec::paper_h800()),
            Some("paper_h800_compiled.json") => return Ok(PipelineSpec::paper_h800_compiled()),
            _ => {}
        }
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading spec {}", path.display()))?;
    let spec: PipelineSpec = serde_json::from_str(&text).with_context(|| format!("parsing spec {}", path.display()))?;
    Ok(spec)
}

fn simulate(spec: &Path, gpus: Option<u32>, overlap: OverlapArg, cycles: usize, trace: Option<PathBuf>) -> Result<()> {
    let mut spec = load_spec(spec)?;
    if let Some(g) = gpus {
        spec = spec.with_gpus(g);
    }
    let report = predict(&spec)?;
    let overlap = match overlap {
        OverlapArg::None => Overlap::None,
        OverlapArg::DecodeOverlapsDenoise => Overlap::DecodeOverlapsDenoise,
    };
    let sim = simulate_pipeline(&spec, cycles, overlap)?;
    if let Some(path) = trace {
        fs::write(&path, sim.trace_csv()).with_context(|| format!("writing trace {}", path.display()))?;
    }
    let mut value = serde_json::to_value(&report)?;
    value["simulated_cycle_ms"] = serde_json::json!(sim.steady_cycle_ms);
    value["overlap"] = serde_json::to_value(sim.overlap)?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn ablate(which: AblationArg, config: &ConfigArg, sft: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config)?;
    prepare_run_dir(&cfg)?;
    let sft_net = load_net(&sft.unwrap_or_else(|| cfg.run_dir.join("sft.ftlk")))?;
    let world = World::new(cfg.world.clone())?;
    let data = Dataset::generate(&world, &cfg.data, cfg.seeds.data)?;
    let (name, table) = match which {
        AblationArg::Chunks => {
            ("ablate_chunks.json", serde_json::to_value(ablate_chunks(&world, &sft_net, &data, &cfg.distill, &cfg.ablation)?)?)
        }
        AblationArg::Motion => {
            ("ablate_motion.json", serde_json::to_value(ablate_motion(&world, &sft_net, &data, &cfg.distill, &cfg.ablation)?)?)
        }
    };
    let text = serde_json::to_string_pretty(&table)?;
    fs::write(cfg.run_dir.join(name), format!("{text}\n"))?;
    println!("{text}");
    Ok(())
}

fn eval(config: &ConfigArg, checkpoint: Option<PathBuf>, horizon: HorizonArg) -> Result<()> {
    let cfg = load_config(config)?;
    let world = World::new(cfg.world.clone())?;
    let horizon_s = match horizon {
        HorizonArg::Short => SHORT_HORIZON_S,
        HorizonArg::Long => LONG_HORIZON_S,
    };
    let spec = EvalSpec { horizon_s, ..cfg.eval.clone() };
    let net = checkpoint.as_deref().map(load_net).transpose()?;
    let source = match &net {
        Some(n) => FrameSource::Generator {
            denoiser: n,
            plan: cfg.sampler.clone(),
            chunk_len: cfg.stream.chunk_len,
            motion_len: cfg.stream.motion_len,
            seed: cfg.seeds.run,
        },
        None => FrameSource::Oracle,
    };
    let report = evaluate(&world, &source, &spec)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
