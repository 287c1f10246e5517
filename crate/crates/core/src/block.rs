use std::ops::RangeInclusive;

use ndarray::{Array2, ArrayView1};

/// Encoder output for one input block, plus the last `w - 1` frames of
/// history that chunk windows may reach back into.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock {
    pub frames: Array2<f64>,
    /// Global encoder-frame index of `frames[0]`.
    pub global_offset: usize,
    /// Frames immediately preceding `frames[0]`; may be shorter than `w - 1`
    /// near the stream start, and is all zeros right after a reset.
    pub prev_tail: Array2<f64>,
}

impl EncoderBlock {
    pub fn new(frames: Array2<f64>, global_offset: usize, prev_tail: Array2<f64>) -> Self {
        debug_assert!(prev_tail.nrows() <= global_offset);
        debug_assert!(prev_tail.nrows() == 0 || prev_tail.ncols() == frames.ncols());
        Self {
            frames,
            global_offset,
            prev_tail,
        }
    }

    /// Block without history.
    pub fn standalone(frames: Array2<f64>, global_offset: usize) -> Self {
        let dim = frames.ncols();
        Self::new(frames, global_offset, Array2::zeros((0, dim)))
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    /// One past the last global frame of the block.
    pub fn end(&self) -> usize {
        self.global_offset + self.len()
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.end().checked_sub(1).filter(|_| !self.is_empty())
    }

    /// First global frame reachable through the tail.
    pub fn history_start(&self) -> usize {
        self.global_offset - self.prev_tail.nrows()
    }

    /// Every global frame this block exposes, tail included.
    pub fn available(&self) -> RangeInclusive<usize> {
        self.history_start()..=self.end().saturating_sub(1)
    }

    pub fn frame(&self, global: usize) -> Option<ArrayView1<'_, f64>> {
        if global >= self.global_offset {
            let i = global - self.global_offset;
            (i < self.len()).then(|| self.frames.row(i))
        } else if global >= self.history_start() {
            Some(self.prev_tail.row(global - self.history_start()))
        } else {
            None
        }
    }

    /// The last `n` frames of the tail followed by this block, as the tail for
    /// the next block.
    pub fn next_tail(&self, n: usize) -> Array2<f64> {
        let total = self.prev_tail.nrows() + self.len();
        let take = n.min(total);
        let dim = self.dim();
        let mut out = Array2::zeros((take, dim));
        let start = self.end() - take;
        for (k, g) in (start..self.end()).enumerate() {
            out.row_mut(k).assign(&self.frame(g).expect("in range"));
        }
        out
    }
}
