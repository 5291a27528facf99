use std::fs::{self, File};
use std::io::{self, BufWriter, ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use ftlk_core::config::RunConfig;
use ftlk_core::net::DenoiserNet;
use ftlk_core::stream::{ClientMessage, Pacing, ProtocolSession, ServerMessage, StreamConfig};
use ftlk_core::world::World;
use serde::Deserialize;
use tungstenite::{Message, WebSocket};

const READ_TIMEOUT: Duration = Duration::from_millis(5);
const DRAIN_TIMEOUT: Duration = Duration::from_secs(60);

pub struct StreamOpts {
    pub fps: f64,
    pub identity_seed: u64,
    pub unpaced: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    index: u64,
    value: f64,
}

fn template(cfg: &RunConfig, opts: &StreamOpts) -> StreamConfig {
    let pacing = if opts.unpaced { Pacing::Unpaced } else { Pacing::Realtime };
    StreamConfig { target_fps: opts.fps, pacing, ..cfg.stream.clone() }
}

fn read_script(path: &Path) -> Result<Vec<ScriptLine>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading script {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("script line {}", i + 1)))
        .collect()
}

/// Drives one stream from a JSONL script and writes server messages as JSONL.
pub fn run_script(cfg: &RunConfig, net: DenoiserNet, opts: &StreamOpts, script: &Path, out: Option<&Path>) -> Result<()> {
    let lines = read_script(script)?;
    let world = World::new(cfg.world.clone())?;
    let identity = world.sample_identity(opts.identity_seed);
    let stream_cfg = template(cfg, opts);
    let n_new = stream_cfg.new_frames();
    let mut session = ProtocolSession::new(net, world, stream_cfg.clone());
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut emit = |msgs: Vec<ServerMessage>, frames: &mut usize| -> Result<()> {
        for m in msgs {
            if let ServerMessage::Error { message } = &m {
                bail!(ftlk_core::Error::InvalidArgument(message.clone()));
            }
            if matches!(m, ServerMessage::Frame { .. }) {
                *frames += 1;
            }
            writeln!(sink, "{}", m.to_json())?;
        }
        sink.flush()?;
        Ok(())
    };

    let mut frames = 0;
    let start = ClientMessage::Start { seed: stream_cfg.seed, identity, fps: opts.fps };
    emit(session.handle(start), &mut frames)?;
    for l in &lines {
        emit(session.handle(ClientMessage::Drive { index: l.index, value: l.value }), &mut frames)?;
        emit(session.poll(), &mut frames)?;
    }
    let expected = lines.len() / n_new * n_new;
    let deadline = Instant::now() + DRAIN_TIMEOUT;
    while frames < expected {
        if Instant::now() > deadline {
            bail!("timed out after {frames} of {expected} frames");
        }
        std::thread::sleep(Duration::from_millis(1));
        emit(session.poll(), &mut frames)?;
    }
    emit(session.handle(ClientMessage::Stop), &mut frames)?;
    Ok(())
}

/// Serves the JSON protocol over WebSocket, one client at a time.
pub fn serve(cfg: &RunConfig, net: DenoiserNet, opts: &StreamOpts, port: u16, max_sessions: Option<usize>) -> Result<()> {
    let world = World::new(cfg.world.clone())?;
    let listener = TcpListener::bind(("127.0.0.1", port)).with_context(|| format!("binding port {port}"))?;
    let addr = listener.local_addr()?;
    println!("{}", serde_json::json!({ "listening": addr.to_string() }));
    io::stdout().flush()?;
    for (served, conn) in listener.incoming().enumerate() {
        let stream = conn?;
        let session = ProtocolSession::new(net.clone(), world.clone(), template(cfg, opts));
        if let Err(e) = handle_client(stream, session) {
            eprintln!("{}", serde_json::json!({ "warning": "client session ended", "message": e.to_string() }));
        }
        if max_sessions.is_some_and(|m| served + 1 >= m) {
            break;
        }
    }
    Ok(())
}

fn send_all(ws: &mut WebSocket<TcpStream>, msgs: Vec<ServerMessage>) -> Result<()> {
    for m in msgs {
        ws.write(Message::Text(m.to_json()))?;
    }
    ws.flush()?;
    Ok(())
}

fn handle_client(stream: TcpStream, mut session: ProtocolSession<DenoiserNet>) -> Result<()> {
    let mut ws = tungstenite::accept(stream).map_err(|e| anyhow::anyhow!("handshake failed: {e}"))?;
    ws.get_ref().set_read_timeout(Some(READ_TIMEOUT))?;
    loop {
        match ws.read() {
            Ok(Message::Text(text)) => {
                let replies = session.handle_text(&text);
                send_all(&mut ws, replies)?;
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
            Err(e) => return Err(e.into()),
        }
        let frames = session.poll();
        send_all(&mut ws, frames)?;
    }
    if session.is_streaming() {
        session.handle(ClientMessage::Stop);
    }
    Ok(())
}
