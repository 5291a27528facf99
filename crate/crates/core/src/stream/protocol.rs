//! JSON message protocol spoken by live clients, independent of transport.

use serde::{Deserialize, Serialize};

use super::engine::{CycleBreakdown, EmittedFrame, StreamConfig, StreamSession};
use crate::error::Result;
use crate::net::Denoiser;
use crate::world::World;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Start { seed: u64, identity: Vec<f64>, fps: f64 },
    Drive { index: u64, value: f64 },
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame { index: u64, mouth: f64, state: Vec<f64>, chunk: u64 },
    Stats { startup_ms: f64, fps: f64, cycle: CycleBreakdown },
    Error { message: String },
}

impl ServerMessage {
    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error { message: message.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialise")
    }
}

/// Per-connection state: idle until `start`, streaming until `stop`.
pub struct ProtocolSession<D> {
    denoiser: D,
    world: World,
    template: StreamConfig,
    stream: Option<StreamSession>,
}

impl<D: Denoiser + Clone + Send + 'static> ProtocolSession<D> {
    pub fn new(denoiser: D, world: World, template: StreamConfig) -> Self {
        Self { denoiser, world, template, stream: None }
    }

    pub fn is_streaming(&self) -> bool {
        self.stream.is_some()
    }

    /// Parses and handles one text frame; malformed input yields an error message.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match serde_json::from_str::<ClientMessage>(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => vec![ServerMessage::error(format!("malformed message: {e}"))],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        match msg {
            ClientMessage::Start { seed, identity, fps } => {
                if self.stream.is_some() {
                    return vec![ServerMessage::error("stream already started")];
                }
                match self.open(seed, &identity, fps) {
                    Ok(s) => {
                        self.stream = Some(s);
                        Vec::new()
                    }
                    Err(e) => vec![ServerMessage::error(e.to_string())],
                }
            }
            ClientMessage::Drive { index, value } => match self.stream.as_mut() {
                None => vec![ServerMessage::error("drive before start")],
                Some(s) => match s.push_signal(index, &[value]) {
                    Ok(()) => Vec::new(),
                    Err(e) => vec![ServerMessage::error(e.to_string())],
                },
            },
            ClientMessage::Stop => match self.stream.take() {
                None => vec![ServerMessage::error("stop without an active stream")],
                Some(mut s) => {
                    let out = Self::convert(s.next_frames().unwrap_or_default(), &s);
                    s.stop();
                    out
                }
            },
        }
    }

    /// Frames produced since the last poll, each chunk followed by a stats message.
    pub fn poll(&mut self) -> Vec<ServerMessage> {
        let Some(s) = self.stream.as_mut() else {
            return Vec::new();
        };
        match s.next_frames() {
            Ok(frames) => Self::convert(frames, s),
            Err(e) => {
                self.stream = None;
                vec![ServerMessage::error(e.to_string())]
            }
        }
    }

    fn open(&self, seed: u64, identity: &[f64], fps: f64) -> Result<StreamSession> {
        let reference = self.world.reference_frame(identity)?;
        let cfg = StreamConfig { seed, target_fps: fps, ..self.template.clone() };
        StreamSession::start(self.denoiser.clone(), &self.world, reference.as_slice().expect("contiguous"), cfg)
    }

    fn convert(frames: Vec<EmittedFrame>, s: &StreamSession) -> Vec<ServerMessage> {
        let n_new = s.config().new_frames() as u64;
        let stats = s.stats();
        let mut out = Vec::with_capacity(frames.len() + frames.len() / n_new.max(1) as usize);
        for f in frames {
            let last_of_chunk = (f.index + 1) % n_new == 0;
            out.push(ServerMessage::Frame { index: f.index, mouth: f.mouth, state: f.state, chunk: f.chunk });
            if last_of_chunk {
                out.push(ServerMessage::Stats {
                    startup_ms: stats.startup_ms.unwrap_or(0.0),
                    fps: stats.fps,
                    cycle: stats.cycle,
                });
            }
        }
        out
    }
}
