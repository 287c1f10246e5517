//! Scorer interfaces consumed by search and session, and deterministic
//! implementations of them.

mod encoders;
mod features;
pub mod synth;
mod table;
mod vad;

use ndarray::{Array1, Array2, ArrayView2};

use crate::block::EncoderBlock;
use crate::error::{Error, Result};
use crate::vocab::TokenId;

pub use encoders::{toy_recurrent_encode, MeanPoolEncoder, ToyRecurrentEncoder};
pub use features::{load_features, save_features};
pub use synth::{long_form_scenario, random_scenario, token_names, SynthParams, UtteranceSpan};
pub use table::{load_table_model, LmHistory, ScenarioDoc, TableModel};
pub use vad::{energy_vad_segment, frame_energies};

/// Turns input frames into encoder frames. Output length for `n` input frames
/// must be `ceil(n / subsample_factor)`.
pub trait Encoder {
    fn subsample_factor(&self) -> usize;

    /// Whether the encoder carries state across blocks.
    fn is_stateful(&self) -> bool;

    /// Encodes one block; `is_reset` reinitializes internal state first.
    fn encode(&mut self, x: ArrayView2<'_, f64>, is_reset: bool) -> Result<Array2<f64>>;
}

impl<E: Encoder + ?Sized> Encoder for Box<E> {
    fn subsample_factor(&self) -> usize {
        (**self).subsample_factor()
    }
    fn is_stateful(&self) -> bool {
        (**self).is_stateful()
    }
    fn encode(&mut self, x: ArrayView2<'_, f64>, is_reset: bool) -> Result<Array2<f64>> {
        (**self).encode(x, is_reset)
    }
}

/// Monotonic (MoChA) decoder. States are value-like: advancing never touches
/// the state it was derived from.
pub trait MonotonicDecoder {
    type State: Clone;

    fn initial_state(&self) -> Self::State;

    /// Probability of stopping the next token at global encoder frame `frame`.
    fn selection_prob(
        &self,
        state: &Self::State,
        prefix: &[TokenId],
        frame: usize,
        block: &EncoderBlock,
    ) -> Result<f64>;

    /// Chunk energies over the window frames. Uniform by default.
    fn chunk_energies(
        &self,
        _state: &Self::State,
        _prefix: &[TokenId],
        window: &[ndarray::ArrayView1<'_, f64>],
    ) -> Result<Vec<f64>> {
        Ok(vec![0.0; window.len()])
    }

    /// Log-probabilities over the whole vocabulary for the next token, given
    /// the boundary frame and its context. Both are `None` when no boundary
    /// was found (zero context).
    fn token_log_probs(
        &self,
        state: &Self::State,
        prefix: &[TokenId],
        boundary: Option<usize>,
        context: Option<&Array1<f64>>,
    ) -> Result<Vec<f64>>;

    fn advance(
        &self,
        state: &Self::State,
        prefix: &[TokenId],
        token: TokenId,
        context: Option<&Array1<f64>>,
    ) -> Result<Self::State>;
}

/// CTC branch on top of the encoder.
pub trait CtcScorer {
    /// One row per encoder frame of `block`, including the blank column.
    fn posteriors(&self, block: &EncoderBlock) -> Result<Array2<f64>>;
}

pub trait LanguageModel {
    type State: Clone;

    fn initial_state(&self) -> Self::State;

    /// Log-probabilities over the whole vocabulary.
    fn log_probs(&self, state: &Self::State) -> Result<Vec<f64>>;

    fn advance(&self, state: &Self::State, token: TokenId) -> Self::State;
}

impl<T: MonotonicDecoder + ?Sized> MonotonicDecoder for &T {
    type State = T::State;
    fn initial_state(&self) -> Self::State {
        (**self).initial_state()
    }
    fn selection_prob(&self, s: &Self::State, p: &[TokenId], f: usize, b: &EncoderBlock) -> Result<f64> {
        (**self).selection_prob(s, p, f, b)
    }
    fn chunk_energies(&self, s: &Self::State, p: &[TokenId], w: &[ndarray::ArrayView1<'_, f64>]) -> Result<Vec<f64>> {
        (**self).chunk_energies(s, p, w)
    }
    fn token_log_probs(
        &self,
        s: &Self::State,
        p: &[TokenId],
        b: Option<usize>,
        c: Option<&Array1<f64>>,
    ) -> Result<Vec<f64>> {
        (**self).token_log_probs(s, p, b, c)
    }
    fn advance(&self, s: &Self::State, p: &[TokenId], t: TokenId, c: Option<&Array1<f64>>) -> Result<Self::State> {
        (**self).advance(s, p, t, c)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    type State = T::State;
    fn initial_state(&self) -> Self::State {
        (**self).initial_state()
    }
    fn log_probs(&self, s: &Self::State) -> Result<Vec<f64>> {
        (**self).log_probs(s)
    }
    fn advance(&self, s: &Self::State, t: TokenId) -> Self::State {
        (**self).advance(s, t)
    }
}

impl<T: CtcScorer + ?Sized> CtcScorer for &T {
    fn posteriors(&self, block: &EncoderBlock) -> Result<Array2<f64>> {
        (**self).posteriors(block)
    }
}

/// Uniform distribution over `size` tokens, excluding `blank`.
#[derive(Clone, Debug)]
pub struct UniformLm {
    logp: Vec<f64>,
}

impl UniformLm {
    pub fn new(size: usize, blank: TokenId) -> Self {
        let n = size.saturating_sub(1).max(1) as f64;
        let logp = (0..size)
            .map(|i| if i == blank.index() { f64::NEG_INFINITY } else { -n.ln() })
            .collect();
        Self { logp }
    }
}

impl LanguageModel for UniformLm {
    type State = ();
    fn initial_state(&self) {}
    fn log_probs(&self, _: &()) -> Result<Vec<f64>> {
        Ok(self.logp.clone())
    }
    fn advance(&self, _: &(), _: TokenId) {}
}

/// Wraps an [`Encoder`] and assembles [`EncoderBlock`]s: global offsets and the
/// `w - 1` frame tail carried between blocks.
pub struct BlockEncoder<E> {
    inner: E,
    tail_len: usize,
    next_offset: usize,
    tail: Option<Array2<f64>>,
    zero_tail: bool,
    pending_reset: bool,
}

impl<E: Encoder> BlockEncoder<E> {
    pub fn new(inner: E, chunk_width: usize) -> Self {
        Self::starting_at(inner, chunk_width, 0)
    }

    /// Encoder whose first frame carries global index `offset`.
    pub fn starting_at(inner: E, chunk_width: usize, offset: usize) -> Self {
        Self {
            inner,
            tail_len: chunk_width.saturating_sub(1),
            next_offset: offset,
            tail: None,
            zero_tail: false,
            pending_reset: false,
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut E {
        &mut self.inner
    }

    pub fn next_offset(&self) -> usize {
        self.next_offset
    }

    /// Reset at a block boundary. With `backoff`, the given input frames are
    /// re-encoded from a fresh state and the result is discarded, leaving the
    /// encoder warmed up for the next block. The next block's tail is zeroed.
    pub fn reset(&mut self, backoff: Option<ArrayView2<'_, f64>>) -> Result<()> {
        self.zero_tail = true;
        if !self.inner.is_stateful() {
            return Ok(());
        }
        match backoff {
            Some(prev) => {
                self.inner.encode(prev, true)?;
                self.pending_reset = false;
            }
            None => self.pending_reset = true,
        }
        Ok(())
    }

    /// Encodes the next block. `is_reset` performs a plain reset first.
    pub fn encode_block(&mut self, x: ArrayView2<'_, f64>, is_reset: bool) -> Result<EncoderBlock> {
        if is_reset {
            self.reset(None)?;
        }
        let reset_now = std::mem::take(&mut self.pending_reset);
        let frames = self.inner.encode(x, reset_now)?;
        let expected = x.nrows().div_ceil(self.inner.subsample_factor());
        if frames.nrows() != expected {
            return Err(Error::Scorer(format!(
                "encoder produced {} frames for {} inputs, expected {expected}",
                frames.nrows(),
                x.nrows()
            )));
        }
        let dim = frames.ncols();
        let offset = self.next_offset;
        let prev_tail = if std::mem::take(&mut self.zero_tail) {
            Array2::zeros((self.tail_len.min(offset), dim))
        } else {
            match self.tail.take() {
                Some(t) if t.ncols() == dim => t,
                _ => Array2::zeros((0, dim)),
            }
        };
        let block = EncoderBlock::new(frames, offset, prev_tail);
        self.tail = Some(block.next_tail(self.tail_len));
        self.next_offset = block.end();
        Ok(block)
    }
}
