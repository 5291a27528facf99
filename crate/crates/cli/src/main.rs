mod commands;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Desk-scale chunked diffusion streaming lab.
#[derive(Debug, Parser)]
#[command(name = "ftlk", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct ConfigArg {
    /// Run configuration JSON; defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the teacher denoiser from its seeded initialisation.
    Pretrain {
        #[command(flatten)]
        config: ConfigArg,
        /// Override train.pretrain.steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Output checkpoint (default: <run_dir>/teacher.ftlk).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Adapt a teacher with chunk-length bucketing.
    Sft {
        #[command(flatten)]
        config: ConfigArg,
        /// Teacher checkpoint (default: <run_dir>/teacher.ftlk).
        #[arg(long, value_name = "FILE")]
        teacher: Option<PathBuf>,
        /// Comma-separated bucket lengths, e.g. 7,9,11.
        #[arg(long, value_delimiter = ',')]
        buckets: Option<Vec<usize>>,
        /// Override train.sft.steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Output checkpoint (default: <run_dir>/sft.ftlk).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Distil a few-step generator from an adapted checkpoint.
    Distill {
        #[command(flatten)]
        config: ConfigArg,
        /// Adapted checkpoint (default: <run_dir>/sft.ftlk).
        #[arg(long, value_name = "FILE")]
        sft: Option<PathBuf>,
        /// Rollout-length schedule.
        #[arg(long, value_enum)]
        schedule: Option<ScheduleArg>,
        /// Largest rollout length; the fixed length under --schedule fixed.
        #[arg(long = "K", value_name = "K")]
        k: Option<usize>,
        /// Override distill.steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Output checkpoint (default: <run_dir>/generator.ftlk).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Stream a scripted signal headlessly or serve the WebSocket protocol.
    Stream {
        #[command(flatten)]
        config: ConfigArg,
        /// Generator checkpoint.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Target frame rate.
        #[arg(long, default_value_t = 25.0)]
        fps: f64,
        /// JSONL driving script, one {"index": n, "value": v} per line.
        #[arg(long, value_name = "FILE", conflicts_with = "serve", required_unless_present = "serve")]
        script: Option<PathBuf>,
        /// Serve the WebSocket protocol instead of reading a script.
        #[arg(long)]
        serve: bool,
        /// Port to listen on (0 picks a free port).
        #[arg(long, default_value_t = 8765, requires = "serve")]
        port: u16,
        /// Exit after this many client sessions.
        #[arg(long, requires = "serve")]
        max_sessions: Option<usize>,
        /// Identity seed for scripted streams.
        #[arg(long, default_value_t = 0)]
        identity_seed: u64,
        /// Emit frames as fast as they are produced.
        #[arg(long)]
        unpaced: bool,
        /// Write frames here instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Predict multi-GPU pipeline latency from a spec.
    Simulate {
        /// Pipeline spec JSON.
        #[arg(long, value_name = "FILE")]
        spec: PathBuf,
        /// Override the spec's GPU count.
        #[arg(long)]
        gpus: Option<u32>,
        /// Stage overlap used by the event simulation.
        #[arg(long, value_enum, default_value_t = OverlapArg::None)]
        overlap: OverlapArg,
        /// Cycles to simulate.
        #[arg(long, default_value_t = 4)]
        cycles: usize,
        /// Write the event trace as CSV.
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
    },
    /// Run an ablation table.
    Ablate {
        /// Which ablation.
        #[arg(value_enum)]
        which: AblationArg,
        #[command(flatten)]
        config: ConfigArg,
        /// Adapted checkpoint (default: <run_dir>/sft.ftlk).
        #[arg(long, value_name = "FILE")]
        sft: Option<PathBuf>,
    },
    /// Score a generator (or the ground-truth oracle) on the evaluation streams.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        /// Generator checkpoint.
        #[arg(long, value_name = "FILE", required_unless_present = "oracle", conflicts_with = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Score ground-truth simulations instead of a checkpoint.
        #[arg(long)]
        oracle: bool,
        /// Stream length.
        #[arg(long, value_enum, default_value_t = HorizonArg::Short)]
        horizon: HorizonArg,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Random,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OverlapArg {
    None,
    DecodeOverlapsDenoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationArg {
    Chunks,
    Motion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HorizonArg {
    Short,
    Long,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    use ftlk_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::InvalidArgument(_) | E::SingularSchedule(_) | E::InsufficientData(_) => {
                    (EXIT_CONFIG, "config")
                }
                E::Numeric(_) => (EXIT_NUMERIC, "numeric"),
                E::Checkpoint(_) | E::Io(_) | E::Json(_) | E::SessionClosed => (EXIT_IO, "io"),
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return (EXIT_IO, "io");
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return (EXIT_CONFIG, "config");
        }
    }
    (1, "other")
}

fn report(kind: &str, message: String, details: Vec<String>) {
    let body = serde_json::json!({ "error": kind, "message": message, "details": details });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.kind().to_string(), vec![e.to_string()]);
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            let details = match err.chain().find_map(|c| c.downcast_ref::<ftlk_core::Error>()) {
                Some(ftlk_core::Error::Config(list)) => list.clone(),
                _ => err.chain().skip(1).map(|c| c.to_string()).collect(),
            };
            report(kind, err.to_string(), details);
            ExitCode::from(code)
        }
    }
}
