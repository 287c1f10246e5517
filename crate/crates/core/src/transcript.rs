use serde::{Deserialize, Serialize};

use crate::vocab::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetReason {
    BlankRun,
    Eos,
    EndOfStream,
}

impl ResetReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ResetReason::BlankRun => "blank_run",
            ResetReason::Eos => "eos",
            ResetReason::EndOfStream => "end_of_stream",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub tokens: Vec<TokenId>,
    /// Global encoder frame at which each token was committed.
    pub times: Vec<usize>,
    /// Global encoder frame of each token's boundary.
    pub boundaries: Vec<usize>,
    pub reason: ResetReason,
    /// Input frames consumed when the segment closed.
    pub end_input_frame: usize,
    pub end_encoder_frame: usize,
    pub score: f64,
}

/// Session output: one segment per reset plus one for the end of the stream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub segments: Vec<Segment>,
}

impl SessionTranscript {
    pub fn tokens(&self) -> Vec<TokenId> {
        self.segments.iter().flat_map(|s| s.tokens.iter().copied()).collect()
    }

    pub fn reasons(&self) -> Vec<ResetReason> {
        self.segments.iter().map(|s| s.reason).collect()
    }

    pub fn reset_count(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| s.reason != ResetReason::EndOfStream)
            .count()
    }
}
