use crate::vocab::TokenId;

/// One partial or complete output sequence in the beam.
///
/// `head` is the global encoder frame of the most recent boundary; for a
/// freshly seeded hypothesis it is the first frame of the segment, which the
/// next scan includes. Scorer states are value-like handles.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis<D, L> {
    pub prefix: Vec<TokenId>,
    /// Sum of fused token log probabilities.
    pub raw_log_score: f64,
    pub head: usize,
    pub decoder_state: D,
    pub lm_state: L,
    /// Per token: last encoder frame processed when the token entered the beam.
    pub emit_times: Vec<usize>,
    /// Per token: encoder frame at which its boundary fired.
    pub boundaries: Vec<usize>,
}

impl<D, L> Hypothesis<D, L> {
    pub fn seed(head: usize, decoder_state: D, lm_state: L) -> Self {
        Self {
            prefix: Vec::new(),
            raw_log_score: 0.0,
            head,
            decoder_state,
            lm_state,
            emit_times: Vec::new(),
            boundaries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefix.is_empty()
    }

    pub fn last_token(&self) -> Option<TokenId> {
        self.prefix.last().copied()
    }

    pub fn ends_with(&self, token: TokenId) -> bool {
        self.last_token() == Some(token)
    }

    /// Prefix with a trailing `eos` removed.
    pub fn tokens_without(&self, eos: TokenId) -> &[TokenId] {
        match self.prefix.split_last() {
            Some((&last, rest)) if last == eos => rest,
            _ => &self.prefix,
        }
    }
}

/// The working sets of block-synchronous search plus the session list.
///
/// `finished` keeps only the best complete hypothesis seen so far; nothing
/// else from the complete set is ever read.
#[derive(Clone, Debug)]
pub struct BeamSets<D, L> {
    pub active: Vec<Hypothesis<D, L>>,
    pub parked: Vec<Hypothesis<D, L>>,
    pub expanded: Vec<Hypothesis<D, L>>,
    pub finished: Option<Hypothesis<D, L>>,
    pub session: Vec<Hypothesis<D, L>>,
}

impl<D, L> Default for BeamSets<D, L> {
    fn default() -> Self {
        Self {
            active: Vec::new(),
            parked: Vec::new(),
            expanded: Vec::new(),
            finished: None,
            session: Vec::new(),
        }
    }
}

impl<D, L> BeamSets<D, L> {
    pub fn seeded(seed: Hypothesis<D, L>) -> Self {
        Self {
            active: vec![seed],
            ..Self::default()
        }
    }

    /// True when no hypothesis is held in active, parked or finished.
    pub fn is_empty(&self) -> bool {
        self.active.is_empty() && self.parked.is_empty() && self.finished.is_none()
    }

    /// Active hypotheses followed by the finished one, the candidate pool for
    /// the best-hypothesis queries.
    pub fn candidates(&self) -> impl Iterator<Item = &Hypothesis<D, L>> {
        self.active.iter().chain(self.finished.iter())
    }

    /// Drops active, parked, expanded and finished; the session list survives.
    pub fn clear_search(&mut self) {
        self.active.clear();
        self.parked.clear();
        self.expanded.clear();
        self.finished = None;
    }
}
