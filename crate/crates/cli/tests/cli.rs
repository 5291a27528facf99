use std::io::{BufRead, BufReader};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use ftlk_core::checkpoint::Checkpoint;
use ftlk_core::eval::{evaluate, EvalSpec, FrameSource};
use ftlk_core::net::{DenoiserNet, NetConfig, RoleTag};
use ftlk_core::world::{World, WorldSpec};
use serde_json::Value;
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

const BLESS_ENV: &str = "FTLK_BLESS";

fn ftlk() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ftlk"));
    c.env_remove("FTLK_RUN_DIR");
    c
}

fn run(args: &[&str], run_dir: Option<&Path>) -> Output {
    let mut c = ftlk();
    c.args(args);
    if let Some(d) = run_dir {
        c.env("FTLK_RUN_DIR", d);
    }
    c.output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().expect("stderr has a line")).expect("stderr is JSON")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

const SUBCOMMANDS: [(&str, &[&str]); 7] = [
    ("pretrain", &["--config", "--steps", "--out", "--help"]),
    ("sft", &["--config", "--teacher", "--buckets", "--steps", "--out", "--help"]),
    ("distill", &["--config", "--sft", "--schedule", "--K", "--steps", "--out", "--help"]),
    (
        "stream",
        &[
            "--config",
            "--checkpoint",
            "--fps",
            "--script",
            "--serve",
            "--port",
            "--max-sessions",
            "--identity-seed",
            "--unpaced",
            "--out",
            "--help",
        ],
    ),
    ("simulate", &["--spec", "--gpus", "--overlap", "--cycles", "--trace", "--help"]),
    ("ablate", &["--config", "--sft", "--help"]),
    ("eval", &["--config", "--checkpoint", "--oracle", "--horizon", "--help"]),
];

#[test]
fn help_output_matches_golden_files() {
    let bless = std::env::var_os(BLESS_ENV).is_some();
    let mut pages: Vec<(String, Vec<&str>)> = vec![("ftlk".into(), vec![])];
    pages.extend(SUBCOMMANDS.iter().map(|(s, _)| (format!("ftlk_{s}"), vec![*s])));
    for (name, prefix) in pages {
        let mut args = prefix.clone();
        args.push("--help");
        let out = run(&args, None);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let path = golden_dir().join(format!("{name}.help.txt"));
        if bless {
            std::fs::create_dir_all(golden_dir()).unwrap();
            std::fs::write(&path, &text).unwrap();
        } else {
            let want = std::fs::read_to_string(&path)
                .unwrap_or_else(|_| panic!("missing {}; rerun with {BLESS_ENV}=1", path.display()));
            assert_eq!(text, want, "{name} help drifted; rerun with {BLESS_ENV}=1 after review");
        }
    }
}

#[test]
fn help_enumerates_every_flag() {
    for (sub, flags) in SUBCOMMANDS {
        let out = run(&[sub, "--help"], None);
        let text = String::from_utf8(out.stdout).unwrap();
        for flag in flags {
            assert!(text.contains(flag), "{sub} --help is missing {flag}");
        }
        let listed = text.split_whitespace().filter(|w| w.starts_with("--")).count();
        assert!(listed >= flags.len(), "{sub}: {listed} flags listed");
    }
    let top = String::from_utf8(run(&["--help"], None).stdout).unwrap();
    for (sub, _) in SUBCOMMANDS {
        assert!(top.contains(sub), "top-level help is missing {sub}");
    }
}

#[test]
fn simulate_single_gpu_reports_the_measured_step() {
    let out = run(&["simulate", "--spec", "paper_h800.json", "--gpus", "1"], None);
    let r = stdout_json(&out);
    assert_eq!(r["dit_step_ms"].as_f64().unwrap(), 1070.0);
    assert_eq!(r["gpu_count"].as_u64().unwrap(), 1);
    assert_eq!(r["dit_speedup"].as_f64().unwrap(), 1.0);
    assert_eq!(r["simulated_cycle_ms"].as_f64().unwrap(), r["cycle_ms"].as_f64().unwrap());
}

#[test]
fn simulate_eight_gpus_and_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, ftlk_core::latency::PAPER_H800_COMPILED).unwrap();
    let out = run(
        &["simulate", "--spec", spec.to_str().unwrap(), "--cycles", "3", "--trace", trace.to_str().unwrap()],
        None,
    );
    let r = stdout_json(&out);
    assert!((r["cycle_ms"].as_f64().unwrap() - 876.0).abs() < 1e-9);
    let csv = std::fs::read_to_string(&trace).unwrap();
    assert!(csv.starts_with("cycle,stage,lane,start_ms,end_ms\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 8);
    let over = stdout_json(&run(&["simulate", "--spec", spec.to_str().unwrap(), "--overlap", "decode-overlaps-denoise"], None));
    assert!(over["simulated_cycle_ms"].as_f64().unwrap() < over["cycle_ms"].as_f64().unwrap());
}

fn write_checkpoint(path: &Path, seed: u64) {
    let net = DenoiserNet::new(NetConfig::default(), seed).unwrap();
    Checkpoint::from_net(&net, RoleTag::GeneratorStudent).save(path).unwrap();
}

#[test]
fn zero_step_distill_copies_the_checkpoint_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("sft.ftlk");
    Checkpoint::from_net(&DenoiserNet::new(NetConfig::default(), 9).unwrap(), RoleTag::TeacherReal)
        .save(&input)
        .unwrap();
    let out_path = dir.path().join("gen.ftlk");
    let out = run(
        &["distill", "--steps", "0", "--sft", input.to_str().unwrap(), "--out", out_path.to_str().unwrap()],
        Some(&dir.path().join("run")),
    );
    stdout_json(&out);
    assert_eq!(std::fs::read(&input).unwrap(), std::fs::read(&out_path).unwrap());
    assert!(dir.path().join("run").join("config.json").exists());
}

#[test]
fn pipeline_reruns_are_bit_exact_under_the_run_dir_override() {
    let dir = tempfile::tempdir().unwrap();
    let mut produced = Vec::new();
    for name in ["a", "b"] {
        let rd = dir.path().join(name);
        stdout_json(&run(&["pretrain", "--steps", "30"], Some(&rd)));
        stdout_json(&run(&["sft", "--steps", "10", "--buckets", "7,9,11"], Some(&rd)));
        stdout_json(&run(&["distill", "--steps", "3", "--schedule", "random", "--K", "3"], Some(&rd)));
        for f in ["config.json", "teacher.ftlk", "sft.ftlk", "generator.ftlk", "fake_score.ftlk", "distill_log.jsonl"] {
            assert!(rd.join(f).exists(), "{name}/{f} missing");
        }
        let log = std::fs::read_to_string(rd.join("distill_log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 3);
        let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert!(first["k"].as_u64().unwrap() <= 3);
        produced.push(rd);
    }
    for f in ["teacher.ftlk", "sft.ftlk", "generator.ftlk", "fake_score.ftlk"] {
        assert_eq!(std::fs::read(produced[0].join(f)).unwrap(), std::fs::read(produced[1].join(f)).unwrap(), "{f}");
    }
    let cfg: Value = serde_json::from_str(&std::fs::read_to_string(produced[0].join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["run_dir"].as_str().unwrap(), produced[0].to_str().unwrap());
    assert_eq!(cfg["distill"]["k_max"].as_u64().unwrap(), 3);
}

#[test]
fn config_errors_list_every_violation_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"data": {"batch_size": 0}, "distill": {"update_ratio": 0}, "eval": {"streams": 0}}"#).unwrap();
    let out = run(&["pretrain", "--config", bad.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "config");
    let details: Vec<&str> = err["details"].as_array().unwrap().iter().map(|d| d.as_str().unwrap()).collect();
    for needle in ["data.batch_size", "distill.update_ratio", "eval.streams"] {
        assert!(details.iter().any(|d| d.contains(needle)), "{needle} not in {details:?}");
    }

    std::fs::write(&bad, r#"{"unknown_section": 1}"#).unwrap();
    let out = run(&["eval", "--oracle", "--config", bad.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["details"].to_string().contains("unknown_section"));

    let out = run(&["distill", "--schedule", "fixed", "--K", "0"], Some(&dir.path().join("r")));
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["stream", "--checkpoint", "x.ftlk"], None);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");
}

#[test]
fn missing_files_exit_with_code_four_and_divergence_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["eval", "--checkpoint", dir.path().join("none.ftlk").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"], "io");

    let garbage = dir.path().join("garbage.ftlk");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = run(&["eval", "--checkpoint", garbage.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(4));

    let cfg = dir.path().join("diverge.json");
    std::fs::write(&cfg, r#"{"train": {"pretrain": {"lr": 1e300, "rule": "sgd", "steps": 20}}}"#).unwrap();
    let out = run(&["pretrain", "--config", cfg.to_str().unwrap()], Some(&dir.path().join("r")));
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "numeric");
}

#[test]
fn oracle_eval_matches_the_library_oracle() {
    let r = stdout_json(&run(&["eval", "--oracle"], None));
    let world = World::new(WorldSpec::default()).unwrap();
    let want = evaluate(&world, &FrameSource::Oracle, &EvalSpec::default()).unwrap();
    assert!((r["mean_sync"].as_f64().unwrap() - want.mean_sync.unwrap()).abs() < 1e-12);
    assert_eq!(r["streams"].as_array().unwrap().len(), want.streams.len());
    assert!(r["mean_sync"].as_f64().unwrap() > 0.9);
}

#[test]
fn scripted_stream_emits_frames_and_stats_as_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("g.ftlk");
    write_checkpoint(&ck, 4);
    let script = dir.path().join("signal.jsonl");
    let lines: Vec<String> = (0..30).map(|i| format!(r#"{{"index": {i}, "value": {}}}"#, (i as f64 / 4.0).sin())).collect();
    std::fs::write(&script, lines.join("\n")).unwrap();
    let out_path = dir.path().join("frames.jsonl");
    let args = ["stream", "--checkpoint", ck.to_str().unwrap(), "--script", script.to_str().unwrap(), "--unpaced"];
    let mut with_out = args.to_vec();
    with_out.extend(["--out", out_path.to_str().unwrap()]);
    let out = run(&with_out, None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let msgs: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let frames: Vec<&Value> = msgs.iter().filter(|m| m["type"] == "frame").collect();
    assert_eq!(frames.len(), 28);
    for (i, f) in frames.iter().enumerate() {
        assert_eq!(f["index"].as_u64().unwrap(), i as u64);
        assert_eq!(f["chunk"].as_u64().unwrap(), i as u64 / 7);
    }
    assert_eq!(msgs.iter().filter(|m| m["type"] == "stats").count(), 4);

    let again = run(&args, None);
    assert!(again.status.success());
    let frames_only = |t: &str| -> Vec<Value> {
        t.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()).filter(|m| m["type"] == "frame").collect()
    };
    assert_eq!(frames_only(&text), frames_only(&String::from_utf8(again.stdout).unwrap()));

    std::fs::write(&script, "{\"index\": 0, \"value\": 0.1}\n{\"index\": 2, \"value\": 0.1}\n").unwrap();
    let gap = run(&args, None);
    assert_eq!(gap.status.code(), Some(2));
}

fn recv_json(ws: &mut WebSocket<MaybeTlsStream<TcpStream>>) -> Value {
    loop {
        match ws.read().expect("server message") {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            Message::Close(_) => panic!("server closed"),
            _ => {}
        }
    }
}

#[test]
fn websocket_server_speaks_the_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("g.ftlk");
    write_checkpoint(&ck, 5);
    let mut child = ftlk()
        .args(["stream", "--checkpoint", ck.to_str().unwrap(), "--serve", "--port", "0", "--max-sessions", "1", "--unpaced"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut first).unwrap();
    let addr = serde_json::from_str::<Value>(&first).unwrap()["listening"].as_str().unwrap().to_string();

    let (mut ws, _) = tungstenite::connect(format!("ws://{addr}")).expect("connects");
    let send = |ws: &mut WebSocket<_>, v: Value| ws.send(Message::Text(v.to_string())).unwrap();

    send(&mut ws, serde_json::json!({"type": "drive", "index": 0, "value": 0.5}));
    let e = recv_json(&mut ws);
    assert_eq!(e["type"], "error");
    assert!(e["message"].as_str().unwrap().contains("before start"));

    send(&mut ws, serde_json::json!({"type": "hello"}));
    assert_eq!(recv_json(&mut ws)["type"], "error");

    let world = World::new(WorldSpec::default()).unwrap();
    let identity = world.sample_identity(3);
    send(&mut ws, serde_json::json!({"type": "start", "seed": 11, "identity": identity, "fps": 25.0}));
    for i in 0..14u64 {
        send(&mut ws, serde_json::json!({"type": "drive", "index": i, "value": (i as f64 / 3.0).sin()}));
    }
    let deadline = Instant::now() + Duration::from_secs(30);
    let (mut frames, mut stats) = (Vec::new(), 0);
    while frames.len() < 14 || stats < 2 {
        assert!(Instant::now() < deadline, "timed out with {} frames", frames.len());
        let m = recv_json(&mut ws);
        match m["type"].as_str().unwrap() {
            "frame" => frames.push(m["index"].as_u64().unwrap()),
            "stats" => {
                stats += 1;
                assert!(m["fps"].as_f64().unwrap() > 0.0);
                assert!(m["cycle"]["denoise_ms"].as_f64().unwrap() >= 0.0);
            }
            other => panic!("unexpected {other}: {m}"),
        }
    }
    assert_eq!(frames, (0..14).collect::<Vec<_>>());

    send(&mut ws, serde_json::json!({"type": "drive", "index": 3, "value": 0.0}));
    let e = recv_json(&mut ws);
    assert_eq!(e["type"], "error");

    send(&mut ws, serde_json::json!({"type": "stop"}));
    send(&mut ws, serde_json::json!({"type": "stop"}));
    assert_eq!(recv_json(&mut ws)["type"], "error");
    ws.close(None).unwrap();
    while ws.read().is_ok() {}

    let status = child.wait().unwrap();
    assert!(status.success());
}
