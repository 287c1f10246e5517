//! Error rates, display latency and work counters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EditStats {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
    pub wer: f64,
}

impl EditStats {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    fn from_counts(s: usize, d: usize, i: usize, ref_len: usize) -> Self {
        Self {
            substitutions: s,
            deletions: d,
            insertions: i,
            ref_len,
            wer: (s + d + i) as f64 / ref_len.max(1) as f64,
        }
    }
}

impl std::ops::Add for EditStats {
    type Output = EditStats;
    fn add(self, o: EditStats) -> EditStats {
        EditStats::from_counts(
            self.substitutions + o.substitutions,
            self.deletions + o.deletions,
            self.insertions + o.insertions,
            self.ref_len + o.ref_len,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EditOp {
    Match,
    Substitute,
    Delete,
    Insert,
}

/// Minimal unit-cost alignment of `hyp` against `reference`. On ties the
/// traceback prefers the diagonal, then deletion, then insertion.
pub fn align<T: PartialEq>(reference: &[T], hyp: &[T]) -> Vec<EditOp> {
    let (n, m) = (reference.len(), hyp.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, v) in d[0].iter_mut().enumerate() {
        *v = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(reference[i - 1] != hyp[j - 1]);
            d[i][j] = (d[i - 1][j - 1] + cost).min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                ops.push(if same { EditOp::Match } else { EditOp::Substitute });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(EditOp::Delete);
            i -= 1;
        } else {
            ops.push(EditOp::Insert);
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

fn count(ops: &[EditOp], ref_len: usize) -> EditStats {
    let c = |k| ops.iter().filter(|&&o| o == k).count();
    EditStats::from_counts(c(EditOp::Substitute), c(EditOp::Delete), c(EditOp::Insert), ref_len)
}

pub fn wer<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditStats {
    count(&align(reference, hyp), reference.len())
}

/// Global alignment of a session hypothesis against concatenated reference
/// segments, with errors attributed back to the segments. Insertions belong to
/// the segment of the most recent reference token (the first segment if none).
pub fn session_wer<T: PartialEq + Clone>(references: &[Vec<T>], hyp: &[T]) -> (EditStats, Vec<EditStats>) {
    let flat: Vec<T> = references.iter().flatten().cloned().collect();
    let ops = align(&flat, hyp);
    let mut owner = Vec::with_capacity(flat.len());
    for (k, seg) in references.iter().enumerate() {
        owner.extend(std::iter::repeat_n(k, seg.len()));
    }
    let mut per = vec![(0usize, 0usize, 0usize); references.len()];
    let mut r = 0usize;
    for op in &ops {
        let seg = if r < owner.len() {
            owner[r]
        } else {
            owner.last().copied().unwrap_or(0)
        };
        let prev_seg = r.checked_sub(1).map(|p| owner[p]).unwrap_or(0);
        match op {
            EditOp::Match => r += 1,
            EditOp::Substitute => {
                per[seg].0 += 1;
                r += 1;
            }
            EditOp::Delete => {
                per[seg].1 += 1;
                r += 1;
            }
            EditOp::Insert => {
                if let Some(slot) = per.get_mut(prev_seg) {
                    slot.2 += 1;
                }
            }
        }
    }
    let segments = per
        .into_iter()
        .zip(references)
        .map(|((s, d, i), seg)| EditStats::from_counts(s, d, i, seg.len()))
        .collect();
    (count(&ops, flat.len()), segments)
}

/// Joins subword pieces into words. A piece starting with `marker` opens a
/// new word; the marker itself is dropped.
pub fn detokenize<S: AsRef<str>>(pieces: &[S], marker: &str) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for piece in pieces {
        let piece = piece.as_ref();
        match piece.strip_prefix(marker) {
            Some(rest) if !marker.is_empty() => {
                if !rest.is_empty() {
                    words.push(rest.to_string());
                } else {
                    words.push(String::new());
                }
            }
            _ => match words.last_mut() {
                Some(w) => w.push_str(piece),
                None => words.push(piece.to_string()),
            },
        }
    }
    words.retain(|w| !w.is_empty());
    words
}

/// One committed token: where its boundary fired and when it entered the beam,
/// both in global encoder frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTiming {
    pub boundary_frame: usize,
    pub commit_frame: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    /// Display latency per token, in encoder frames.
    pub samples: Vec<usize>,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub p95: Option<f64>,
}

pub fn latency_stats(timings: &[TokenTiming]) -> Result<LatencyStats> {
    let mut samples = Vec::with_capacity(timings.len());
    for t in timings {
        let lat = t.commit_frame.checked_sub(t.boundary_frame).ok_or_else(|| {
            Error::InvalidInput(format!(
                "token committed at frame {} before its boundary at {}",
                t.commit_frame, t.boundary_frame
            ))
        })?;
        samples.push(lat);
    }
    if samples.is_empty() {
        return Ok(LatencyStats::default());
    }
    let mut sorted = samples.clone();
    sorted.sort_unstable();
    let n = sorted.len();
    let mean = sorted.iter().sum::<usize>() as f64 / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    // nearest rank
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Ok(LatencyStats {
        samples,
        mean: Some(mean),
        median: Some(median),
        p95: Some(sorted[rank - 1] as f64),
    })
}

/// Instrumentation filled in by the search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkCounters {
    pub blocks: usize,
    pub output_steps: usize,
    pub frames_scanned: usize,
    pub selection_queries: usize,
    pub distribution_queries: usize,
    pub state_advances: usize,
    /// Hypotheses expanded at a detected boundary.
    pub expansions: usize,
    /// Sum over processed blocks of `U_max * B * T'_block`.
    pub work_bound: usize,
}

impl WorkCounters {
    /// Selection plus token-distribution queries.
    pub fn decoder_calls(&self) -> usize {
        self.selection_queries + self.distribution_queries
    }

    pub fn merge(&mut self, o: &WorkCounters) {
        self.blocks += o.blocks;
        self.output_steps += o.output_steps;
        self.frames_scanned += o.frames_scanned;
        self.selection_queries += o.selection_queries;
        self.distribution_queries += o.distribution_queries;
        self.state_advances += o.state_advances;
        self.expansions += o.expansions;
        self.work_bound += o.work_bound;
    }
}

pub fn work_counter_report(counters: &WorkCounters) -> WorkCounters {
    *counters
}
