//! Newline-delimited JSON event stream.
//!
//! Every record carries `kind`, `input_frame` (10 ms clock) and
//! `encoder_frame`. `token_commit` adds `token`, `text` and `boundary_frame`;
//! `reset` and `segment_end` add `reason`, `tokens`, `score`. Frames never
//! decrease along a stream.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::TokenTiming;
use crate::hypothesis::Hypothesis;
use crate::transcript::{ResetReason, Segment};
use crate::vocab::{TokenId, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TokenCommit,
    Reset,
    SegmentEnd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub kind: EventKind,
    pub segment: usize,
    pub input_frame: usize,
    pub encoder_frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<ResetReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Builds the segment record for `best` (or an empty one), dropping a trailing eos.
pub fn segment_from<D, L>(
    best: Option<&Hypothesis<D, L>>,
    eos: TokenId,
    reason: ResetReason,
    end_input_frame: usize,
    end_encoder_frame: usize,
) -> Segment {
    match best {
        Some(h) => {
            let tokens = h.tokens_without(eos).to_vec();
            let n = tokens.len();
            Segment {
                tokens,
                times: h.emit_times[..n].to_vec(),
                boundaries: h.boundaries[..n].to_vec(),
                reason,
                end_input_frame,
                end_encoder_frame,
                score: h.raw_log_score,
            }
        }
        None => Segment {
            tokens: Vec::new(),
            times: Vec::new(),
            boundaries: Vec::new(),
            reason,
            end_input_frame,
            end_encoder_frame,
            score: 0.0,
        },
    }
}

/// Token commits of `segment`, then a `reset` record (mid-stream resets) or a
/// `segment_end` record (end of stream).
pub fn segment_events(segment: &Segment, index: usize, vocab: &Vocab, subsample_factor: usize) -> Vec<EventRecord> {
    let mut out = Vec::with_capacity(segment.tokens.len() + 1);
    for ((&token, &commit), &boundary) in segment.tokens.iter().zip(&segment.times).zip(&segment.boundaries) {
        out.push(EventRecord {
            kind: EventKind::TokenCommit,
            segment: index,
            input_frame: ((commit + 1) * subsample_factor).min(segment.end_input_frame),
            encoder_frame: commit,
            token: Some(token),
            text: vocab.token(token).map(str::to_string),
            boundary_frame: Some(boundary),
            reason: None,
            tokens: None,
            score: None,
        });
    }
    out.push(EventRecord {
        kind: if segment.reason == ResetReason::EndOfStream {
            EventKind::SegmentEnd
        } else {
            EventKind::Reset
        },
        segment: index,
        input_frame: segment.end_input_frame,
        encoder_frame: segment.end_encoder_frame,
        token: None,
        text: None,
        boundary_frame: None,
        reason: Some(segment.reason),
        tokens: Some(segment.tokens.clone()),
        score: Some(segment.score),
    });
    out
}

pub fn timings(events: &[EventRecord]) -> Vec<TokenTiming> {
    events
        .iter()
        .filter(|e| e.kind == EventKind::TokenCommit)
        .map(|e| TokenTiming {
            boundary_frame: e.boundary_frame.unwrap_or(e.encoder_frame),
            commit_frame: e.encoder_frame,
        })
        .collect()
}

pub fn write_events<W: Write>(mut w: W, events: &[EventRecord]) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_events(path: impl AsRef<Path>, events: &[EventRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_events(std::io::BufWriter::new(file), events).map_err(|e| Error::io(path, e))
}

pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<EventRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::parse(path, Some(i + 1), e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}
