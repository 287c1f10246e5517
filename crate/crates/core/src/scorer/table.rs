//! Table-driven scorer scripted from a scenario document.
//!
//! Selection probabilities are keyed by (exact prefix, global encoder frame)
//! with a declared default; token distributions by prefix; CTC posteriors are
//! a dense row-per-encoder-frame matrix (frames past its end are pure blank);
//! the LM is an n-gram table that backs off to shorter histories and finally
//! to a uniform distribution.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{CtcScorer, LanguageModel, MeanPoolEncoder, MonotonicDecoder};
use crate::block::EncoderBlock;
use crate::error::{Error, Result};
use crate::vocab::{load_vocab, TokenId, Vocab};

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    /// Inline token list (blank marker first, eos marker second).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vec<String>>,
    /// Vocab file, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_file: Option<String>,
    pub default_selection: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selection: Vec<SelectionEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distribution: Vec<DistributionEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ctc: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lm: Option<LmDoc>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionEntry {
    pub prefix: Vec<String>,
    pub frames: Vec<usize>,
    pub p: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionEntry {
    pub prefix: Vec<String>,
    /// Boundary frames this entry applies to; empty means any frame,
    /// including the no-boundary eos completion.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<usize>,
    pub probs: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmDoc {
    pub order: usize,
    #[serde(default, rename = "entry", skip_serializing_if = "Vec::is_empty")]
    pub entries: Vec<LmEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmEntry {
    pub history: Vec<String>,
    pub probs: BTreeMap<String, f64>,
}

fn strings(tokens: &[&str]) -> Vec<String> {
    tokens.iter().map(|s| s.to_string()).collect()
}

impl ScenarioDoc {
    pub fn new(tokens: &[&str], default_selection: f64) -> Self {
        Self {
            vocab: Some(strings(tokens)),
            default_selection,
            ..Self::default()
        }
    }

    pub fn select(mut self, prefix: &[&str], frames: &[usize], p: f64) -> Self {
        self.selection.push(SelectionEntry {
            prefix: strings(prefix),
            frames: frames.to_vec(),
            p,
        });
        self
    }

    pub fn dist(self, prefix: &[&str], probs: &[(&str, f64)]) -> Self {
        self.dist_at(prefix, &[], probs)
    }

    /// Distribution for `prefix` when the boundary falls on one of `frames`.
    pub fn dist_at(mut self, prefix: &[&str], frames: &[usize], probs: &[(&str, f64)]) -> Self {
        self.distribution.push(DistributionEntry {
            prefix: strings(prefix),
            frames: frames.to_vec(),
            probs: probs.iter().map(|&(t, p)| (t.to_string(), p)).collect(),
        });
        self
    }

    pub fn ctc_rows(mut self, rows: Vec<Vec<f64>>) -> Self {
        self.ctc.extend(rows);
        self
    }

    pub fn lm_entry(mut self, order: usize, history: &[&str], probs: &[(&str, f64)]) -> Self {
        let lm = self.lm.get_or_insert_with(|| LmDoc {
            order,
            entries: Vec::new(),
        });
        lm.order = order;
        lm.entries.push(LmEntry {
            history: strings(history),
            probs: probs.iter().map(|&(t, p)| (t.to_string(), p)).collect(),
        });
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scenario(e.to_string()))
    }
}

/// LM state of the table model: the last `order - 1` tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct LmHistory(pub Vec<TokenId>);

#[derive(Clone, Debug)]
pub struct TableModel {
    vocab: Vocab,
    default_selection: f64,
    selection: HashMap<Vec<TokenId>, HashMap<usize, f64>>,
    distributions: HashMap<Vec<TokenId>, Vec<f64>>,
    framed_distributions: HashMap<(Vec<TokenId>, usize), Vec<f64>>,
    default_distribution: Vec<f64>,
    ctc: Array2<f64>,
    lm_order: usize,
    lm_table: HashMap<Vec<TokenId>, Vec<f64>>,
}

pub fn load_table_model(path: impl AsRef<Path>) -> Result<TableModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ScenarioDoc = toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].lines().count().max(1));
        Error::parse(path, line, e.message().to_string())
    })?;
    TableModel::from_doc(&doc, path.parent()).map_err(|e| match e {
        Error::Scenario(m) => Error::parse(path, None, m),
        other => other,
    })
}

impl TableModel {
    pub fn from_doc(doc: &ScenarioDoc, base_dir: Option<&Path>) -> Result<Self> {
        let vocab = match (&doc.vocab, &doc.vocab_file) {
            (Some(tokens), None) => Vocab::from_lines(tokens.iter().cloned())?,
            (None, Some(file)) => {
                let p = base_dir.map(|d| d.join(file)).unwrap_or_else(|| file.into());
                load_vocab(p)?
            }
            (Some(_), Some(_)) => return Err(Error::Scenario("give either vocab or vocab_file, not both".into())),
            (None, None) => return Err(Error::Scenario("missing vocab".into())),
        };
        if !(0.0..=1.0).contains(&doc.default_selection) {
            return Err(Error::Scenario(format!(
                "default_selection {} outside [0, 1]",
                doc.default_selection
            )));
        }
        let ids = |toks: &[String]| -> Result<Vec<TokenId>> {
            toks.iter()
                .map(|t| {
                    vocab
                        .id(t)
                        .ok_or_else(|| Error::Scenario(format!("unknown token {t:?}")))
                })
                .collect()
        };

        let mut selection: HashMap<Vec<TokenId>, HashMap<usize, f64>> = HashMap::new();
        for e in &doc.selection {
            if !(0.0..=1.0).contains(&e.p) {
                return Err(Error::Scenario(format!("selection probability {} outside [0, 1]", e.p)));
            }
            let prefix = ids(&e.prefix)?;
            let slot = selection.entry(prefix).or_default();
            for &f in &e.frames {
                slot.insert(f, e.p);
            }
        }

        let mut distributions = HashMap::new();
        let mut framed_distributions = HashMap::new();
        for e in &doc.distribution {
            let prefix = ids(&e.prefix)?;
            let logp = normalized_log_probs(&vocab, &e.probs)
                .map_err(|m| Error::Scenario(format!("distribution for prefix {:?}: {m}", e.prefix)))?;
            let duplicate = if e.frames.is_empty() {
                distributions.insert(prefix, logp).is_some()
            } else {
                e.frames
                    .iter()
                    .any(|&f| framed_distributions.insert((prefix.clone(), f), logp.clone()).is_some())
            };
            if duplicate {
                return Err(Error::Scenario(format!(
                    "duplicate distribution for prefix {:?}",
                    e.prefix
                )));
            }
        }

        let width = vocab.len();
        let mut ctc = Array2::zeros((doc.ctc.len(), width));
        for (j, row) in doc.ctc.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Scenario(format!(
                    "ctc row {j} has {} columns, vocab has {width}",
                    row.len()
                )));
            }
            let total: f64 = row.iter().sum();
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (total - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Scenario(format!(
                    "ctc row {j} is not a distribution (sum {total})"
                )));
            }
            for (k, &v) in row.iter().enumerate() {
                ctc[[j, k]] = v / total;
            }
        }

        let (lm_order, mut lm_table) = match &doc.lm {
            Some(lm) => {
                if lm.order == 0 {
                    return Err(Error::Scenario("lm order must be positive".into()));
                }
                let mut table = HashMap::new();
                for e in &lm.entries {
                    if e.history.len() >= lm.order {
                        return Err(Error::Scenario(format!(
                            "lm history {:?} too long for order {}",
                            e.history, lm.order
                        )));
                    }
                    let h = ids(&e.history)?;
                    let logp = normalized_log_probs(&vocab, &e.probs)
                        .map_err(|m| Error::Scenario(format!("lm entry {:?}: {m}", e.history)))?;
                    table.insert(h, logp);
                }
                (lm.order, table)
            }
            None => (1, HashMap::new()),
        };
        let default_distribution = uniform_log_probs(&vocab);
        lm_table
            .entry(Vec::new())
            .or_insert_with(|| default_distribution.clone());

        Ok(Self {
            vocab,
            default_selection: doc.default_selection,
            selection,
            distributions,
            framed_distributions,
            default_distribution,
            ctc,
            lm_order,
            lm_table,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// The stateless encoder paired with this model.
    pub fn encoder(&self, subsample_factor: usize) -> MeanPoolEncoder {
        MeanPoolEncoder::new(subsample_factor)
    }

    pub fn scripted_ctc_frames(&self) -> usize {
        self.ctc.nrows()
    }

    pub fn selection_at(&self, prefix: &[TokenId], frame: usize) -> f64 {
        self.selection
            .get(prefix)
            .and_then(|m| m.get(&frame))
            .copied()
            .unwrap_or(self.default_selection)
    }

    /// Next-token log-probabilities after `prefix`. A frame-specific entry
    /// for `boundary` wins over the prefix-wide one.
    pub fn distribution(&self, prefix: &[TokenId], boundary: Option<usize>) -> &[f64] {
        boundary
            .and_then(|f| self.framed_distributions.get(&(prefix.to_vec(), f)))
            .or_else(|| self.distributions.get(prefix))
            .map(Vec::as_slice)
            .unwrap_or(&self.default_distribution)
    }

    pub fn ctc_row(&self, frame: usize) -> Array1<f64> {
        if frame < self.ctc.nrows() {
            self.ctc.row(frame).to_owned()
        } else {
            let mut row = Array1::zeros(self.vocab.len());
            row[self.vocab.blank_id().index()] = 1.0;
            row
        }
    }
}

fn normalized_log_probs(vocab: &Vocab, probs: &BTreeMap<String, f64>) -> std::result::Result<Vec<f64>, String> {
    let mut p = vec![0.0; vocab.len()];
    for (tok, &v) in probs {
        let id = vocab.id(tok).ok_or_else(|| format!("unknown token {tok:?}"))?;
        if id == vocab.blank_id() && v > 0.0 {
            return Err("the blank token cannot be emitted".into());
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("probability {v} for {tok:?} outside [0, 1]"));
        }
        p[id.index()] = v;
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORM_TOLERANCE {
        return Err(format!("probabilities sum to {total}, not 1"));
    }
    Ok(p.into_iter().map(|v| (v / total).ln()).collect())
}

fn uniform_log_probs(vocab: &Vocab) -> Vec<f64> {
    let n = (vocab.len() - 1) as f64;
    (0..vocab.len())
        .map(|i| {
            if TokenId::from(i) == vocab.blank_id() {
                f64::NEG_INFINITY
            } else {
                -n.ln()
            }
        })
        .collect()
}

impl MonotonicDecoder for TableModel {
    type State = ();

    fn initial_state(&self) {}

    fn selection_prob(&self, _: &(), prefix: &[TokenId], frame: usize, _: &EncoderBlock) -> Result<f64> {
        Ok(self.selection_at(prefix, frame))
    }

    fn token_log_probs(
        &self,
        _: &(),
        prefix: &[TokenId],
        boundary: Option<usize>,
        _: Option<&Array1<f64>>,
    ) -> Result<Vec<f64>> {
        Ok(self.distribution(prefix, boundary).to_vec())
    }

    fn advance(&self, _: &(), _: &[TokenId], token: TokenId, _: Option<&Array1<f64>>) -> Result<()> {
        if token.index() >= self.vocab.len() {
            return Err(Error::Scorer(format!("token {token} outside vocabulary")));
        }
        Ok(())
    }
}

impl CtcScorer for TableModel {
    fn posteriors(&self, block: &EncoderBlock) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((block.len(), self.vocab.len()));
        for (k, mut row) in out.rows_mut().into_iter().enumerate() {
            row.assign(&self.ctc_row(block.global_offset + k));
        }
        Ok(out)
    }
}

impl LanguageModel for TableModel {
    type State = LmHistory;

    fn initial_state(&self) -> LmHistory {
        LmHistory::default()
    }

    fn log_probs(&self, state: &LmHistory) -> Result<Vec<f64>> {
        let h = &state.0;
        for start in 0..=h.len() {
            if let Some(p) = self.lm_table.get(&h[start..]) {
                return Ok(p.clone());
            }
        }
        Ok(self.default_distribution.clone())
    }

    fn advance(&self, state: &LmHistory, token: TokenId) -> LmHistory {
        let keep = self.lm_order - 1;
        let mut h = state.0.clone();
        h.push(token);
        if h.len() > keep {
            h.drain(..h.len() - keep);
        }
        LmHistory(h)
    }
}
