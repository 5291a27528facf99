//! Chunked autoregressive streaming: the serial generator, the threaded
//! engine, the client protocol and long-run metering.

mod engine;
mod generator;
mod longform;
mod protocol;

pub use engine::{
    CycleBreakdown, EmittedFrame, Pacing, SessionIntrospection, StatsCell, StatsSnapshot, StreamConfig, StreamSession,
    QUEUE_CHUNKS, ROLLING_CHUNKS,
};
pub use generator::ChunkGenerator;
pub use longform::{run_longform, LongRunReport};
pub use protocol::{ClientMessage, ProtocolSession, ServerMessage};
