//! Long-form decoding without a VAD front end.
//!
//! The stream is decoded block by block with the block-synchronous search.
//! Once the safeguard allows it, two conditions mark a reset point: a run of
//! blank-equivalent CTC frames (argmax blank, or a non-blank peak below the
//! spike threshold) reaching the blank threshold, or the best hypothesis
//! ending in eos. Resets take effect at the end of the block: the best
//! hypothesis is pushed to the session, beams and decoder state are cleared,
//! a stateful encoder is restarted (optionally warmed up on the previous
//! block), and the LM state is carried over or restarted.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::block::EncoderBlock;
use crate::config::DecodeConfig;
use crate::error::{Error, Result};
use crate::eval::WorkCounters;
use crate::events::{segment_events, segment_from, EventRecord};
use crate::hypothesis::BeamSets;
use crate::scorer::{BlockEncoder, CtcScorer, Encoder, LanguageModel, MonotonicDecoder};
use crate::search::{best_of, BlockSearch};
use crate::transcript::{ResetReason, SessionTranscript};
use crate::vocab::{TokenId, Vocab};

/// Reset bookkeeping. `t` counts input frames since the last reset, `n_blank`
/// consecutive blank-equivalent encoder frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ResetTracker {
    pub t: usize,
    pub n_blank: usize,
    pub is_reset_pending: bool,
    /// Global encoder frame at which the blank run first reached the threshold.
    pub fired_at: Option<usize>,
}

impl ResetTracker {
    pub fn safeguard_satisfied(&self, cfg: &DecodeConfig) -> bool {
        !cfg.enable_safeguard || self.t >= cfg.safeguard
    }

    /// Counts one CTC frame.
    pub fn blank_run_update(
        &mut self,
        posterior: ArrayView1<'_, f64>,
        frame: usize,
        blank: TokenId,
        cfg: &DecodeConfig,
    ) -> Result<()> {
        let total: f64 = posterior.sum();
        if posterior.is_empty()
            || blank.index() >= posterior.len()
            || (total - 1.0).abs() > 1e-9
            || posterior.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::InvalidInput(format!(
                "malformed CTC posterior at frame {frame} (sum {total})"
            )));
        }
        let (argmax, max) =
            posterior.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |best, (k, &p)| if p > best.1 { (k, p) } else { best },
            );
        if argmax == blank.index() || max < cfg.spike_threshold {
            self.n_blank += 1;
        } else {
            self.n_blank = 0;
        }
        if self.n_blank >= cfg.blank_threshold && self.safeguard_satisfied(cfg) && !self.is_reset_pending {
            self.is_reset_pending = true;
            self.fired_at = Some(frame);
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }
}

/// True when the best of active and finished ends with eos, the safeguard is
/// satisfied and the eos condition is enabled.
pub fn check_condition2<D, L>(
    beams: &BeamSets<D, L>,
    tracker: &ResetTracker,
    eos: TokenId,
    cfg: &DecodeConfig,
) -> bool {
    cfg.enable_condition2
        && tracker.safeguard_satisfied(cfg)
        && best_of(beams.candidates(), cfg).is_some_and(|h| h.ends_with(eos))
}

#[derive(Clone, Debug)]
pub struct SessionOutput {
    pub transcript: SessionTranscript,
    pub events: Vec<EventRecord>,
    pub counters: WorkCounters,
}

pub struct VadFreeSession<'a, E, C, D, L>
where
    D: MonotonicDecoder,
    L: LanguageModel,
{
    cfg: &'a DecodeConfig,
    vocab: &'a Vocab,
    lm: &'a L,
    ctc: &'a C,
    encoder: BlockEncoder<E>,
    search: BlockSearch<'a, D, L>,
    beams: BeamSets<D::State, L::State>,
    tracker: ResetTracker,
    lm_seed: L::State,
    segment_lm_seeds: Vec<L::State>,
    needs_seed: bool,
    segment_start: usize,
    input_frames: usize,
    last_block: Option<EncoderBlock>,
    transcript: SessionTranscript,
    events: Vec<EventRecord>,
}

impl<'a, E, C, D, L> VadFreeSession<'a, E, C, D, L>
where
    E: Encoder,
    C: CtcScorer,
    D: MonotonicDecoder,
    L: LanguageModel,
{
    pub fn new(
        encoder: E,
        ctc: &'a C,
        decoder: &'a D,
        lm: &'a L,
        vocab: &'a Vocab,
        cfg: &'a DecodeConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            vocab,
            lm,
            ctc,
            encoder: BlockEncoder::new(encoder, cfg.chunk_width),
            search: BlockSearch::new(decoder, lm, vocab, cfg),
            beams: BeamSets::default(),
            tracker: ResetTracker::default(),
            lm_seed: lm.initial_state(),
            segment_lm_seeds: Vec::new(),
            needs_seed: true,
            segment_start: 0,
            input_frames: 0,
            last_block: None,
            transcript: SessionTranscript::default(),
            events: Vec::new(),
        })
    }

    pub fn tracker(&self) -> &ResetTracker {
        &self.tracker
    }

    pub fn beams(&self) -> &BeamSets<D::State, L::State> {
        &self.beams
    }

    pub fn transcript(&self) -> &SessionTranscript {
        &self.transcript
    }

    pub fn encoder(&self) -> &E {
        self.encoder.inner()
    }

    /// The most recent encoder block.
    pub fn last_block(&self) -> Option<&EncoderBlock> {
        self.last_block.as_ref()
    }

    /// Initial LM state of every segment started so far.
    pub fn segment_lm_seeds(&self) -> &[L::State] {
        &self.segment_lm_seeds
    }

    /// Decodes one input block and resets at its end if a condition fired.
    /// Returns the reset reason, if any.
    pub fn push_block(&mut self, x: ArrayView2<'_, f64>) -> Result<Option<ResetReason>> {
        let block = self.encoder.encode_block(x, false)?;
        self.input_frames += x.nrows();
        if self.needs_seed {
            self.segment_start = block.global_offset;
            self.beams = BeamSets {
                session: std::mem::take(&mut self.beams.session),
                ..BeamSets::seeded(self.search.seed(block.global_offset, self.lm_seed.clone()))
            };
            self.segment_lm_seeds.push(self.lm_seed.clone());
            self.needs_seed = false;
        }
        self.search.step(&block, &mut self.beams)?;
        self.tracker.t += x.nrows();

        let mut reason = None;
        if self.tracker.safeguard_satisfied(self.cfg) {
            let post = self.ctc.posteriors(&block)?;
            if post.nrows() != block.len() {
                return Err(Error::Scorer(format!(
                    "{} CTC rows for a {}-frame block",
                    post.nrows(),
                    block.len()
                )));
            }
            for (k, row) in post.rows().into_iter().enumerate() {
                self.tracker
                    .blank_run_update(row, block.global_offset + k, self.vocab.blank_id(), self.cfg)?;
            }
            if self.tracker.is_reset_pending {
                reason = Some(ResetReason::BlankRun);
            } else if check_condition2(&self.beams, &self.tracker, self.vocab.eos_id(), self.cfg) {
                reason = Some(ResetReason::Eos);
            }
        }
        self.last_block = Some(block);
        if let Some(r) = reason {
            self.perform_reset(r, Some(x))?;
        }
        Ok(reason)
    }

    fn push_segment(&mut self, reason: ResetReason) {
        let best = best_of(self.beams.candidates(), self.cfg).cloned();
        let segment = segment_from(
            best.as_ref(),
            self.vocab.eos_id(),
            reason,
            self.input_frames,
            self.encoder.next_offset(),
        );
        let index = self.transcript.segments.len();
        self.events
            .extend(segment_events(&segment, index, self.vocab, self.cfg.subsample_factor));
        self.transcript.segments.push(segment);
        self.lm_seed = match &best {
            Some(h) if self.cfg.enable_lm_carryover => h.lm_state.clone(),
            _ => self.lm.initial_state(),
        };
        if let Some(h) = best {
            self.beams.session.push(h);
        }
    }

    /// Commits the best hypothesis and clears search, decoder, encoder and
    /// tracker state. `prev_block` is the input of the block just decoded,
    /// used for back-off initialization of a stateful encoder.
    pub fn perform_reset(&mut self, reason: ResetReason, prev_block: Option<ArrayView2<'_, f64>>) -> Result<()> {
        self.push_segment(reason);
        self.beams.clear_search();
        let backoff = if self.cfg.enable_backoff_init { prev_block } else { None };
        self.encoder.reset(backoff)?;
        self.tracker.clear();
        self.needs_seed = true;
        Ok(())
    }

    /// Flushes the search on the final block and closes the last segment.
    pub fn finish(mut self) -> Result<SessionOutput> {
        if self.input_frames == 0 {
            return Err(Error::InvalidInput("empty stream".into()));
        }
        if !self.needs_seed {
            if let Some(block) = self.last_block.clone() {
                let cap = self.cfg.max_steps(self.encoder.next_offset() - self.segment_start);
                for _ in 0..cap {
                    if self.search.step(&block, &mut self.beams)?.expansions == 0 {
                        break;
                    }
                }
            }
        }
        self.push_segment(ResetReason::EndOfStream);
        Ok(SessionOutput {
            transcript: self.transcript,
            events: self.events,
            counters: *self.search.counters(),
        })
    }
}

/// Decodes a whole feature stream in blocks of `cfg.block_size` input frames.
pub fn vad_free_decode<E, C, D, L>(
    features: ArrayView2<'_, f64>,
    encoder: E,
    ctc: &C,
    decoder: &D,
    lm: &L,
    vocab: &Vocab,
    cfg: &DecodeConfig,
) -> Result<SessionOutput>
where
    E: Encoder,
    C: CtcScorer,
    D: MonotonicDecoder,
    L: LanguageModel,
{
    let mut session = VadFreeSession::new(encoder, ctc, decoder, lm, vocab, cfg)?;
    for block in features.axis_chunks_iter(ndarray::Axis(0), cfg.block_size) {
        session.push_block(block)?;
    }
    session.finish()
}

/// Zero feature frames, handy for silence padding.
pub fn silence(frames: usize, dim: usize) -> Array2<f64> {
    Array2::zeros((frames, dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::Hypothesis;
    use crate::scorer::{long_form_scenario, TableModel, ToyRecurrentEncoder, UniformLm};
    use ndarray::{array, Array1};

    fn cfg() -> DecodeConfig {
        DecodeConfig::default()
    }

    fn blank_row() -> Array1<f64> {
        array![1.0, 0.0, 0.0]
    }

    #[test]
    fn forty_blanks_after_safeguard_set_pending() {
        let c = cfg();
        let mut tr = ResetTracker {
            t: 1600,
            ..Default::default()
        };
        for f in 0..39 {
            tr.blank_run_update(blank_row().view(), f, TokenId(0), &c).unwrap();
            assert!(!tr.is_reset_pending);
        }
        tr.blank_run_update(blank_row().view(), 39, TokenId(0), &c).unwrap();
        assert!(tr.is_reset_pending);
        assert_eq!(tr.fired_at, Some(39));
    }

    #[test]
    fn strong_token_clears_run() {
        let c = cfg();
        let mut tr = ResetTracker {
            t: 1600,
            ..Default::default()
        };
        for f in 0..39 {
            tr.blank_run_update(blank_row().view(), f, TokenId(0), &c).unwrap();
        }
        tr.blank_run_update(array![0.1, 0.0, 0.9].view(), 39, TokenId(0), &c)
            .unwrap();
        assert_eq!(tr.n_blank, 0);
        assert!(!tr.is_reset_pending);
    }

    #[test]
    fn weak_spike_counts_as_blank() {
        let c = cfg();
        let mut tr = ResetTracker::default();
        let mut row = vec![0.05; 21];
        row[0] = 0.0;
        let row = Array1::from(row);
        assert!(row.iter().cloned().fold(0.0, f64::max) < 0.1);
        tr.blank_run_update(row.view(), 0, TokenId(0), &c).unwrap();
        assert_eq!(tr.n_blank, 1);
    }

    #[test]
    fn safeguard_blocks_pending() {
        let c = cfg();
        let mut tr = ResetTracker {
            t: 800,
            ..Default::default()
        };
        for f in 0..40 {
            tr.blank_run_update(blank_row().view(), f, TokenId(0), &c).unwrap();
        }
        assert_eq!(tr.n_blank, 40);
        assert!(!tr.is_reset_pending);
    }

    #[test]
    fn malformed_posterior_rejected() {
        let c = cfg();
        let mut tr = ResetTracker::default();
        assert!(tr.blank_run_update(array![0.5, 0.4].view(), 0, TokenId(0), &c).is_err());
        assert!(tr.blank_run_update(array![1.0].view(), 0, TokenId(3), &c).is_err());
    }

    fn hyp(prefix: &[u32], score: f64) -> Hypothesis<(), ()> {
        Hypothesis {
            prefix: prefix.iter().map(|&t| TokenId(t)).collect(),
            raw_log_score: score,
            ..Hypothesis::seed(0, (), ())
        }
    }

    #[test]
    fn condition2_cases() {
        let eos = TokenId(1);
        let c = DecodeConfig { safeguard: 0, ..cfg() };
        let tr = ResetTracker::default();
        let mut beams: BeamSets<(), ()> = BeamSets::default();
        beams.active.push(hyp(&[2], -1.0));
        beams.finished = Some(hyp(&[2, 1], -0.5));
        assert!(check_condition2(&beams, &tr, eos, &c));
        beams.finished = Some(hyp(&[2, 1], -5.0));
        assert!(!check_condition2(&beams, &tr, eos, &c));
        beams.finished = Some(hyp(&[2, 1], -0.5));
        let off = DecodeConfig {
            enable_condition2: false,
            ..c.clone()
        };
        assert!(!check_condition2(&beams, &tr, eos, &off));
        let guarded = DecodeConfig { safeguard: 10, ..c };
        assert!(!check_condition2(&beams, &tr, eos, &guarded));
    }

    fn two_utterance_model() -> (TableModel, Vec<crate::scorer::UtteranceSpan>) {
        let (doc, spans) = long_form_scenario(3, &[vec![0, 1, 2], vec![2, 0]], 2, 3, 48).unwrap();
        (TableModel::from_doc(&doc, None).unwrap(), spans)
    }

    fn features(enc_frames: usize, sub: usize) -> Array2<f64> {
        Array2::zeros((enc_frames * sub, 1))
    }

    #[test]
    fn two_utterances_two_segments() {
        let (m, spans) = two_utterance_model();
        let c = DecodeConfig { safeguard: 0, ..cfg() };
        let lm = UniformLm::new(m.vocab().len(), m.vocab().blank_id());
        let total = spans.last().unwrap().end + 4;
        let x = features(total, c.subsample_factor);
        let out = vad_free_decode(x.view(), m.encoder(4), &m, &m, &lm, m.vocab(), &c).unwrap();
        assert_eq!(
            out.transcript.reasons(),
            vec![ResetReason::BlankRun, ResetReason::EndOfStream]
        );
        let names: Vec<Vec<&str>> = out
            .transcript
            .segments
            .iter()
            .map(|s| s.tokens.iter().map(|&t| m.vocab().token(t).unwrap()).collect())
            .collect();
        assert_eq!(names, vec![vec!["t0", "t1", "t2"], vec!["t2", "t0"]]);
        for (seg, span) in out.transcript.segments.iter().zip(&spans) {
            assert_eq!(seg.boundaries, span.boundaries);
        }
    }

    #[test]
    fn short_stream_single_segment() {
        let (m, spans) = two_utterance_model();
        let c = cfg();
        let lm = UniformLm::new(m.vocab().len(), m.vocab().blank_id());
        let total = spans.last().unwrap().end + 60;
        assert!(total * c.subsample_factor < c.safeguard);
        let x = features(total, c.subsample_factor);
        let out = vad_free_decode(x.view(), m.encoder(4), &m, &m, &lm, m.vocab(), &c).unwrap();
        assert_eq!(out.transcript.reasons(), vec![ResetReason::EndOfStream]);
    }

    #[test]
    fn reset_pushes_best_and_clears() {
        let (m, _) = two_utterance_model();
        let c = DecodeConfig { safeguard: 0, ..cfg() };
        let lm = UniformLm::new(m.vocab().len(), m.vocab().blank_id());
        let mut s = VadFreeSession::new(m.encoder(4), &m, &m, &lm, m.vocab(), &c).unwrap();
        let x = features(8, 4);
        s.push_block(x.view()).unwrap();
        let best = best_of(s.beams().candidates(), &c).cloned().unwrap();
        s.perform_reset(ResetReason::Eos, Some(x.view())).unwrap();
        assert_eq!(s.beams().session.len(), 1);
        assert_eq!(s.beams().session[0].prefix, best.prefix);
        assert!(s.beams().active.is_empty() && s.beams().parked.is_empty());
        assert!(s.beams().finished.is_none());
        assert_eq!(*s.tracker(), ResetTracker::default());
    }

    fn toy_session_second_block(backoff: bool) -> Array2<f64> {
        let (m, _) = two_utterance_model();
        let c = DecodeConfig {
            safeguard: 0,
            enable_backoff_init: backoff,
            ..cfg()
        };
        let lm = UniformLm::new(m.vocab().len(), m.vocab().blank_id());
        let enc = ToyRecurrentEncoder::new(0.5, 4).unwrap();
        let mut s = VadFreeSession::new(enc, &m, &m, &lm, m.vocab(), &c).unwrap();
        let x = Array2::from_elem((32, 1), 1.0);
        s.push_block(x.view()).unwrap();
        s.perform_reset(ResetReason::BlankRun, Some(x.view())).unwrap();
        s.push_block(x.view()).unwrap();
        s.last_block().unwrap().frames.clone()
    }

    #[test]
    fn backoff_changes_post_reset_encoding() {
        let with = toy_session_second_block(true);
        let without = toy_session_second_block(false);
        let mut fresh = ToyRecurrentEncoder::new(0.5, 4).unwrap();
        let expected = fresh.encode(Array2::from_elem((32, 1), 1.0).view(), true).unwrap();
        assert_eq!(without, expected);
        assert_ne!(with, without);
        assert!(with.iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn lm_carryover_toggle() {
        let (doc, _) = long_form_scenario(3, &[vec![0, 1, 2], vec![2, 0]], 2, 3, 48).unwrap();
        let doc = doc.lm_entry(2, &[], &[("t0", 0.4), ("t1", 0.3), ("t2", 0.2), ("<eos>", 0.1)]);
        let m = TableModel::from_doc(&doc, None).unwrap();
        let run = |carry: bool| {
            let c = DecodeConfig {
                safeguard: 0,
                enable_lm_carryover: carry,
                lm_weight: 0.1,
                ..cfg()
            };
            let mut s = VadFreeSession::new(m.encoder(4), &m, &m, &m, m.vocab(), &c).unwrap();
            let x = features(8, 4);
            s.push_block(x.view()).unwrap();
            s.perform_reset(ResetReason::Eos, Some(x.view())).unwrap();
            s.push_block(x.view()).unwrap();
            s.segment_lm_seeds().to_vec()
        };
        let on = run(true);
        let off = run(false);
        assert_eq!(off[1], LanguageModel::initial_state(&m));
        assert_ne!(on[1], off[1]);
    }
}
