//! Block-synchronous beam search over a monotonic chunkwise attention decoder.
//!
//! Each block runs up to `U_max = floor(T'_block * R_len)` output steps. In a
//! step every active hypothesis scans from its head (inclusive) to the end of
//! the block; the first frame whose selection probability clears the threshold
//! becomes its next boundary. Hypotheses without a boundary are parked for the
//! rest of the block (optionally completing with eos), the others are
//! expanded by every output token. Only the expansions are pruned to the beam
//! width; parked hypotheses rejoin the beam when the block ends. A block the
//! size of the whole stream gives label-synchronous decoding, a one-frame
//! block frame-synchronous decoding.

use std::cmp::Ordering;

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::attention::{chunk_attention, chunk_context, chunk_window, detect_boundary};
use crate::block::EncoderBlock;
use crate::config::DecodeConfig;
use crate::error::{Error, Result};
use crate::eval::WorkCounters;
use crate::hypothesis::{BeamSets, Hypothesis};
use crate::scorer::{BlockEncoder, Encoder, LanguageModel, MonotonicDecoder};
use crate::vocab::{TokenId, Vocab};

/// Output synchronization granularity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    /// One block spanning the whole stream.
    Label,
    /// Fixed blocks of `block_size` input frames.
    Block,
    /// One encoder frame per block.
    Frame,
}

impl SyncMode {
    /// Block size in input frames for a stream of `input_frames` frames.
    pub fn block_size(self, cfg: &DecodeConfig, input_frames: usize) -> usize {
        match self {
            SyncMode::Label => input_frames.max(1),
            SyncMode::Block => cfg.block_size,
            SyncMode::Frame => cfg.subsample_factor,
        }
    }

    /// `cfg` with its block size replaced for this mode.
    pub fn configure(self, cfg: &DecodeConfig, input_frames: usize) -> DecodeConfig {
        DecodeConfig {
            block_size: self.block_size(cfg, input_frames),
            ..cfg.clone()
        }
    }
}

impl std::str::FromStr for SyncMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label" => Ok(SyncMode::Label),
            "block" => Ok(SyncMode::Block),
            "frame" => Ok(SyncMode::Frame),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Ranking key. Keys compare ascending from best to worst: higher (optionally
/// length-normalized) score first, then shorter prefix, then lexicographically
/// smaller token ids.
#[derive(Clone, Copy, Debug)]
pub struct OrderingKey<'a> {
    pub score: f64,
    pub prefix: &'a [TokenId],
}

impl OrderingKey<'_> {
    pub fn normalized(raw_log_score: f64, len: usize, cfg: &DecodeConfig) -> f64 {
        if cfg.enable_length_norm {
            raw_log_score / len.max(1) as f64
        } else {
            raw_log_score
        }
    }
}

impl Ord for OrderingKey<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.prefix.len().cmp(&other.prefix.len()))
            .then_with(|| self.prefix.cmp(other.prefix))
    }
}

impl PartialOrd for OrderingKey<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for OrderingKey<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OrderingKey<'_> {}

pub fn ordering_key<'a, D, L>(h: &'a Hypothesis<D, L>, cfg: &DecodeConfig) -> OrderingKey<'a> {
    OrderingKey {
        score: OrderingKey::normalized(h.raw_log_score, h.prefix.len(), cfg),
        prefix: &h.prefix,
    }
}

/// Best hypothesis under [`ordering_key`].
pub fn best_of<'a, D: 'a, L: 'a>(
    hyps: impl IntoIterator<Item = &'a Hypothesis<D, L>>,
    cfg: &DecodeConfig,
) -> Option<&'a Hypothesis<D, L>> {
    hyps.into_iter()
        .min_by(|a, b| ordering_key(a, cfg).cmp(&ordering_key(b, cfg)))
}

/// Shallow fusion of a decoder token log-probability with the LM.
#[inline]
pub fn fuse_score(token_logp: f64, lm_logp: f64, cfg: &DecodeConfig) -> f64 {
    if cfg.lm_weight == 0.0 {
        token_logp
    } else {
        token_logp + cfg.lm_weight * lm_logp
    }
}

/// Per-call summary of [`BlockSearch::step`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepReport {
    pub u_max: usize,
    /// Output steps executed; never exceeds `u_max`.
    pub steps: usize,
    pub expansions: usize,
    /// Largest active set right after a pruning call.
    pub max_pruned_active: usize,
}

/// The search engine for one stream. Owns nothing but its counters; beams are
/// passed in and out so callers (utterance decoding, sessions) control their
/// lifetime.
pub struct BlockSearch<'a, D, L> {
    decoder: &'a D,
    lm: &'a L,
    vocab: &'a Vocab,
    cfg: &'a DecodeConfig,
    counters: WorkCounters,
}

impl<'a, D, L> BlockSearch<'a, D, L>
where
    D: MonotonicDecoder,
    L: LanguageModel,
{
    pub fn new(decoder: &'a D, lm: &'a L, vocab: &'a Vocab, cfg: &'a DecodeConfig) -> Self {
        Self {
            decoder,
            lm,
            vocab,
            cfg,
            counters: WorkCounters::default(),
        }
    }

    pub fn config(&self) -> &DecodeConfig {
        self.cfg
    }

    pub fn counters(&self) -> &WorkCounters {
        &self.counters
    }

    /// Empty-prefix hypothesis whose first scan starts at `head`.
    pub fn seed(&self, head: usize, lm_state: L::State) -> Hypothesis<D::State, L::State> {
        Hypothesis::seed(head, self.decoder.initial_state(), lm_state)
    }

    /// First frame at or after the head (within the block's reachable history)
    /// whose selection probability clears the threshold.
    fn scan(&mut self, hyp: &Hypothesis<D::State, L::State>, block: &EncoderBlock) -> Result<Option<usize>> {
        let start = hyp.head.max(block.history_start());
        for frame in start..block.end() {
            self.counters.frames_scanned += 1;
            self.counters.selection_queries += 1;
            let p = self
                .decoder
                .selection_prob(&hyp.decoder_state, &hyp.prefix, frame, block)?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Scorer(format!("selection probability {p} at frame {frame}")));
            }
            if detect_boundary(p, self.cfg.boundary_threshold) {
                return Ok(Some(frame));
            }
        }
        Ok(None)
    }

    fn context(
        &self,
        hyp: &Hypothesis<D::State, L::State>,
        boundary: usize,
        block: &EncoderBlock,
    ) -> Result<Array1<f64>> {
        let window = chunk_window(boundary, self.cfg.chunk_width, block)?;
        let frames: Vec<_> = window.clone().filter_map(|g| block.frame(g)).collect();
        let energies = self.decoder.chunk_energies(&hyp.decoder_state, &hyp.prefix, &frames)?;
        if energies.len() != frames.len() {
            return Err(Error::Scorer(format!(
                "{} chunk energies for a {}-frame window",
                energies.len(),
                frames.len()
            )));
        }
        let weights = chunk_attention(&energies)?;
        Ok(chunk_context(block, window, &weights))
    }

    fn scores(
        &mut self,
        hyp: &Hypothesis<D::State, L::State>,
        boundary: Option<(usize, &Array1<f64>)>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.counters.distribution_queries += 1;
        let token = self.decoder.token_log_probs(
            &hyp.decoder_state,
            &hyp.prefix,
            boundary.map(|b| b.0),
            boundary.map(|b| b.1),
        )?;
        let lm = self.lm.log_probs(&hyp.lm_state)?;
        if token.len() != self.vocab.len() || lm.len() != self.vocab.len() {
            return Err(Error::Scorer(format!(
                "distribution sizes {}/{} do not match vocabulary size {}",
                token.len(),
                lm.len(),
                self.vocab.len()
            )));
        }
        Ok((token, lm))
    }

    fn finish_with_eos(
        &self,
        hyp: &Hypothesis<D::State, L::State>,
        score: f64,
        boundary: usize,
        commit: usize,
    ) -> Hypothesis<D::State, L::State> {
        let eos = self.vocab.eos_id();
        let mut done = hyp.clone();
        done.prefix.push(eos);
        done.raw_log_score = score;
        done.lm_state = self.lm.advance(&hyp.lm_state, eos);
        done.emit_times.push(commit);
        done.boundaries.push(boundary);
        done
    }

    fn offer_finished(&self, slot: &mut Option<Hypothesis<D::State, L::State>>, cand: Hypothesis<D::State, L::State>) {
        if cand.raw_log_score == f64::NEG_INFINITY {
            return;
        }
        let better = match slot {
            None => true,
            Some(cur) => ordering_key(&cand, self.cfg) < ordering_key(cur, self.cfg),
        };
        if better {
            *slot = Some(cand);
        }
    }

    /// One block of search. On return `beams.active` holds the pruned beam
    /// plus every hypothesis parked during the block; `beams.expanded` holds
    /// the unpruned expansion set of the last output step.
    pub fn step(&mut self, block: &EncoderBlock, beams: &mut BeamSets<D::State, L::State>) -> Result<StepReport> {
        if self.vocab.is_empty() {
            return Err(Error::Search("empty vocabulary".into()));
        }
        let mut report = StepReport {
            u_max: self.cfg.max_steps(block.len()),
            ..StepReport::default()
        };
        let Some(commit) = block.last_frame() else {
            return Ok(report);
        };
        self.counters.blocks += 1;
        self.counters.work_bound += report.u_max * self.cfg.beam_width * block.len();

        let eos = self.vocab.eos_id();
        let mut parked = std::mem::take(&mut beams.parked);
        for _ in 0..report.u_max {
            if beams.active.is_empty() {
                break;
            }
            report.steps += 1;
            self.counters.output_steps += 1;

            let active = std::mem::take(&mut beams.active);
            let mut expanded = Vec::new();
            let mut expanded_parents = Vec::new();
            for hyp in active {
                let Some(boundary) = self.scan(&hyp, block)? else {
                    if self.cfg.enable_parked_eos {
                        let (token, lm) = self.scores(&hyp, None)?;
                        let score = hyp.raw_log_score + fuse_score(token[eos.index()], lm[eos.index()], self.cfg);
                        let done = self.finish_with_eos(&hyp, score, commit, commit);
                        self.offer_finished(&mut beams.finished, done);
                    }
                    parked.push(hyp);
                    continue;
                };
                report.expansions += 1;
                self.counters.expansions += 1;
                let context = self.context(&hyp, boundary, block)?;
                let (token, lm) = self.scores(&hyp, Some((boundary, &context)))?;
                for k in self.vocab.output_ids() {
                    let score = hyp.raw_log_score + fuse_score(token[k.index()], lm[k.index()], self.cfg);
                    if k == eos {
                        let done = self.finish_with_eos(&hyp, score, boundary, commit);
                        self.offer_finished(&mut beams.finished, done);
                        continue;
                    }
                    if score == f64::NEG_INFINITY || score.is_nan() {
                        continue;
                    }
                    self.counters.state_advances += 1;
                    let decoder_state = self
                        .decoder
                        .advance(&hyp.decoder_state, &hyp.prefix, k, Some(&context))?;
                    let mut child = Hypothesis {
                        prefix: hyp.prefix.clone(),
                        raw_log_score: score,
                        head: boundary,
                        decoder_state,
                        lm_state: self.lm.advance(&hyp.lm_state, k),
                        emit_times: hyp.emit_times.clone(),
                        boundaries: hyp.boundaries.clone(),
                    };
                    child.prefix.push(k);
                    child.emit_times.push(commit);
                    child.boundaries.push(boundary);
                    expanded.push(child);
                }
                expanded_parents.push(hyp);
            }

            expanded.sort_by(|a, b| ordering_key(a, self.cfg).cmp(&ordering_key(b, self.cfg)));
            beams.active = expanded.iter().take(self.cfg.beam_width).cloned().collect();
            beams.expanded = expanded;
            report.max_pruned_active = report.max_pruned_active.max(beams.active.len());

            // Keep the beam alive when every continuation was impossible.
            if beams.active.is_empty() && parked.is_empty() && beams.finished.is_none() {
                if let Some(best) = best_of(&expanded_parents, self.cfg) {
                    parked.push(best.clone());
                }
            }
        }
        beams.active.append(&mut parked);
        Ok(report)
    }
}

/// Result of decoding one utterance.
#[derive(Clone, Debug)]
pub struct Decoded<D, L> {
    pub best: Hypothesis<D, L>,
    pub counters: WorkCounters,
    pub input_frames: usize,
    pub encoder_frames: usize,
}

/// Streaming utterance decoder: feed input blocks, then [`finish`](Self::finish).
pub struct UtteranceDecoder<'a, E, D, L>
where
    D: MonotonicDecoder,
    L: LanguageModel,
{
    encoder: BlockEncoder<E>,
    search: BlockSearch<'a, D, L>,
    beams: BeamSets<D::State, L::State>,
    last_block: Option<EncoderBlock>,
    input_frames: usize,
    seeded: bool,
    lm_seed: Option<L::State>,
}

impl<'a, E, D, L> UtteranceDecoder<'a, E, D, L>
where
    E: Encoder,
    D: MonotonicDecoder,
    L: LanguageModel,
{
    pub fn new(encoder: E, decoder: &'a D, lm: &'a L, vocab: &'a Vocab, cfg: &'a DecodeConfig) -> Self {
        Self::starting_at(encoder, decoder, lm, vocab, cfg, 0)
    }

    /// Decoder whose first encoder frame has global index `offset`.
    pub fn starting_at(
        encoder: E,
        decoder: &'a D,
        lm: &'a L,
        vocab: &'a Vocab,
        cfg: &'a DecodeConfig,
        offset: usize,
    ) -> Self {
        Self {
            encoder: BlockEncoder::starting_at(encoder, cfg.chunk_width, offset),
            search: BlockSearch::new(decoder, lm, vocab, cfg),
            beams: BeamSets::default(),
            last_block: None,
            input_frames: 0,
            seeded: false,
            lm_seed: None,
        }
    }

    /// Initial LM state for the seed hypothesis (defaults to the LM's own).
    pub fn with_lm_state(mut self, state: L::State) -> Self {
        self.lm_seed = Some(state);
        self
    }

    pub fn beams(&self) -> &BeamSets<D::State, L::State> {
        &self.beams
    }

    pub fn push_block(&mut self, x: ArrayView2<'_, f64>) -> Result<StepReport> {
        let block = self.encoder.encode_block(x, false)?;
        self.input_frames += x.nrows();
        if !self.seeded {
            let lm_state = self.lm_seed.take().unwrap_or_else(|| self.search.lm.initial_state());
            self.beams = BeamSets::seeded(self.search.seed(block.global_offset, lm_state));
            self.seeded = true;
        }
        let report = self.search.step(&block, &mut self.beams)?;
        if !block.is_empty() {
            self.last_block = Some(block);
        }
        Ok(report)
    }

    /// Re-runs the final block until no active hypothesis can advance, then
    /// returns the best of the active and finished hypotheses.
    pub fn finish(mut self) -> Result<Decoded<D::State, L::State>> {
        if let Some(block) = self.last_block.take() {
            let total = self.encoder.next_offset();
            let cap = self.search.cfg.max_steps(total);
            for _ in 0..cap {
                let report = self.search.step(&block, &mut self.beams)?;
                if report.expansions == 0 {
                    break;
                }
            }
        }
        let encoder_frames = self.encoder.next_offset();
        let best = best_of(self.beams.candidates(), self.search.cfg)
            .cloned()
            .ok_or_else(|| Error::Search("no hypothesis survived decoding".into()))?;
        Ok(Decoded {
            best,
            counters: *self.search.counters(),
            input_frames: self.input_frames,
            encoder_frames,
        })
    }
}

/// Splits `features` into blocks of `cfg.block_size` input frames and decodes them.
pub fn decode_utterance<E, D, L>(
    features: ArrayView2<'_, f64>,
    encoder: E,
    decoder: &D,
    lm: &L,
    vocab: &Vocab,
    cfg: &DecodeConfig,
) -> Result<Decoded<D::State, L::State>>
where
    E: Encoder,
    D: MonotonicDecoder,
    L: LanguageModel,
{
    decode_utterance_at(features, encoder, decoder, lm, vocab, cfg, 0)
}

/// [`decode_utterance`] for a stream whose first encoder frame is `offset`.
pub fn decode_utterance_at<E, D, L>(
    features: ArrayView2<'_, f64>,
    encoder: E,
    decoder: &D,
    lm: &L,
    vocab: &Vocab,
    cfg: &DecodeConfig,
    offset: usize,
) -> Result<Decoded<D::State, L::State>>
where
    E: Encoder,
    D: MonotonicDecoder,
    L: LanguageModel,
{
    cfg.validate()?;
    if features.nrows() == 0 {
        return Err(Error::InvalidInput("empty feature stream".into()));
    }
    let mut dec = UtteranceDecoder::starting_at(encoder, decoder, lm, vocab, cfg, offset);
    for block in features.axis_chunks_iter(ndarray::Axis(0), cfg.block_size) {
        dec.push_block(block)?;
    }
    dec.finish()
}
