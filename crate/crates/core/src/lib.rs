//! Block-synchronous streaming beam search for monotonic chunkwise attention
//! decoders, with CTC-driven state resets for long-form audio.

pub mod attention;
pub mod block;
pub mod config;
pub mod error;
pub mod eval;
pub mod events;
pub mod hypothesis;
pub mod scorer;
pub mod search;
pub mod session;
pub mod transcript;
pub mod vocab;

pub use block::EncoderBlock;
pub use config::DecodeConfig;
pub use error::{Error, Result};
pub use hypothesis::{BeamSets, Hypothesis};
pub use search::{decode_utterance, BlockSearch, SyncMode};
pub use session::{vad_free_decode, VadFreeSession};
pub use transcript::{ResetReason, Segment, SessionTranscript};
pub use vocab::{load_vocab, TokenId, Vocab};
