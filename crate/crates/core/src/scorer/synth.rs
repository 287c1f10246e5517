//! Seeded random scenarios for property tests and the `generate` command.

use std::collections::BTreeMap;

use rand::Rng;

use super::table::{DistributionEntry, LmDoc, LmEntry, ScenarioDoc, SelectionEntry};
use crate::error::{Error, Result};
use crate::vocab::{DEFAULT_BLANK, DEFAULT_EOS};

#[derive(Clone, Debug)]
pub struct SynthParams {
    /// Ordinary tokens, excluding blank and eos.
    pub output_tokens: usize,
    pub encoder_frames: usize,
    /// Prefixes of this length can only be followed by eos.
    pub max_len: usize,
    /// Fraction of (prefix, frame) pairs given an explicit selection probability.
    pub selection_density: f64,
    pub lm_order: Option<usize>,
    /// Probability that a CTC row is blank-dominated.
    pub ctc_blank_rate: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            output_tokens: 3,
            encoder_frames: 12,
            max_len: 4,
            selection_density: 0.4,
            lm_order: None,
            ctc_blank_rate: 0.7,
        }
    }
}

pub fn token_names(output_tokens: usize) -> Vec<String> {
    let mut names = vec![DEFAULT_BLANK.to_string(), DEFAULT_EOS.to_string()];
    names.extend((0..output_tokens).map(|i| format!("t{i}")));
    names
}

/// All sequences over `tokens` with length at most `max_len`, shortest first.
fn prefixes(tokens: &[String], max_len: usize) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for p in &frontier {
            for t in tokens {
                let mut q: Vec<String> = p.clone();
                q.push(t.clone());
                next.push(q);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn random_distribution<R: Rng + ?Sized>(rng: &mut R, support: &[String]) -> BTreeMap<String, f64> {
    let weights: Vec<f64> = support.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    support
        .iter()
        .cloned()
        .zip(weights.into_iter().map(|w| w / total))
        .collect()
}

pub fn random_scenario<R: Rng + ?Sized>(rng: &mut R, params: &SynthParams) -> ScenarioDoc {
    let names = token_names(params.output_tokens);
    let ordinary: Vec<String> = names[2..].to_vec();
    let emit: Vec<String> = names[1..].to_vec();
    let all_prefixes = prefixes(&ordinary, params.max_len);

    let default_selection = [0.0, 0.2, 0.7][rng.gen_range(0..3)];
    let mut selection = Vec::new();
    let mut distribution = Vec::new();
    for prefix in &all_prefixes {
        let mut by_p: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for frame in 0..params.encoder_frames {
            if rng.gen_bool(params.selection_density) {
                let p: f64 = rng.gen_range(0.0..=1.0);
                by_p.entry(p.to_bits()).or_default().push(frame);
            }
        }
        for (bits, frames) in by_p {
            selection.push(SelectionEntry {
                prefix: prefix.clone(),
                frames,
                p: f64::from_bits(bits),
            });
        }
        let probs = if prefix.len() < params.max_len {
            random_distribution(rng, &emit)
        } else {
            BTreeMap::from([(DEFAULT_EOS.to_string(), 1.0)])
        };
        distribution.push(DistributionEntry {
            prefix: prefix.clone(),
            frames: Vec::new(),
            probs,
        });
    }

    let width = names.len();
    let ctc = (0..params.encoder_frames)
        .map(|_| {
            let mut row: Vec<f64> = (0..width).map(|_| rng.gen_range(0.0..1.0)).collect();
            let peak = if rng.gen_bool(params.ctc_blank_rate) {
                0
            } else {
                rng.gen_range(2..width.max(3)).min(width - 1)
            };
            row[peak] += width as f64;
            let total: f64 = row.iter().sum();
            row.iter().map(|v| v / total).collect()
        })
        .collect();

    let lm = params.lm_order.map(|order| {
        let histories = prefixes(&emit, order.saturating_sub(1));
        let mut entries = Vec::new();
        for history in histories {
            if rng.gen_bool(0.8) {
                let probs = random_distribution(rng, &emit);
                entries.push(LmEntry { history, probs });
            }
        }
        LmDoc { order, entries }
    });

    ScenarioDoc {
        vocab: Some(names),
        vocab_file: None,
        default_selection,
        selection,
        distribution,
        ctc,
        lm,
    }
}

/// Encoder-frame layout of one scripted utterance in a long-form stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UtteranceSpan {
    pub start: usize,
    pub end: usize,
    pub boundaries: Vec<usize>,
}

/// Scripts utterances back to back, separated by `gap` pure-blank encoder
/// frames. Token `k` of an utterance fires at `start + lead + k * spacing`
/// with a strong CTC spike; the decoder puts 0.9 on the scripted token and a
/// small eos mass at each scripted boundary. Without a boundary a complete
/// utterance prefers eos, any other prefix falls back to uniform.
pub fn long_form_scenario(
    output_tokens: usize,
    utterances: &[Vec<usize>],
    lead: usize,
    spacing: usize,
    gap: usize,
) -> Result<(ScenarioDoc, Vec<UtteranceSpan>)> {
    if spacing == 0 || output_tokens == 0 {
        return Err(Error::Scenario("spacing and token count must be positive".into()));
    }
    let names = token_names(output_tokens);
    let emit: Vec<String> = names[1..].to_vec();
    let width = names.len();
    let mut doc = ScenarioDoc {
        vocab: Some(names.clone()),
        default_selection: 0.0,
        ..ScenarioDoc::default()
    };
    let mut spans = Vec::new();
    let mut cursor = 0;
    let mut finals = std::collections::BTreeSet::new();
    for utt in utterances {
        let start = cursor;
        let mut boundaries = Vec::new();
        let mut prefix: Vec<String> = Vec::new();
        for (k, &tok) in utt.iter().enumerate() {
            let frame = start + lead + k * spacing;
            let name = names
                .get(2 + tok)
                .ok_or_else(|| Error::Scenario(format!("token index {tok} out of range")))?
                .clone();
            doc.selection.push(SelectionEntry {
                prefix: prefix.clone(),
                frames: vec![frame],
                p: 1.0,
            });
            doc.distribution.push(DistributionEntry {
                prefix: prefix.clone(),
                frames: vec![frame],
                probs: peaked(&emit, &name, 0.9, 0.02),
            });
            boundaries.push(frame);
            prefix.push(name);
        }
        if finals.insert(prefix.clone()) {
            doc.distribution.push(DistributionEntry {
                prefix: prefix.clone(),
                frames: Vec::new(),
                probs: peaked(&emit, DEFAULT_EOS, 0.1, 0.1),
            });
        }
        let end = start + lead + utt.len().max(1) * spacing;
        while doc.ctc.len() < end {
            let j = doc.ctc.len();
            let mut row = vec![0.0; width];
            match boundaries.iter().position(|&b| b == j) {
                Some(k) => {
                    row[2 + utt[k]] = 0.9;
                    row[0] = 0.1;
                }
                None => row[0] = 1.0,
            }
            doc.ctc.push(row);
        }
        spans.push(UtteranceSpan { start, end, boundaries });
        cursor = end + gap;
        while doc.ctc.len() < cursor {
            let mut row = vec![0.0; width];
            row[0] = 1.0;
            doc.ctc.push(row);
        }
    }
    Ok((doc, spans))
}

/// `mass` on `target`, `eos_mass` on eos (unless eos is the target), the rest
/// spread evenly over the remaining tokens.
fn peaked(emit: &[String], target: &str, mass: f64, eos_mass: f64) -> BTreeMap<String, f64> {
    let others: Vec<&String> = emit
        .iter()
        .filter(|t| t.as_str() != target && t.as_str() != DEFAULT_EOS)
        .collect();
    let mut probs = BTreeMap::new();
    probs.insert(target.to_string(), mass);
    let mut rest = 1.0 - mass;
    if target != DEFAULT_EOS {
        probs.insert(DEFAULT_EOS.to_string(), eos_mass);
        rest -= eos_mass;
    }
    if others.is_empty() {
        *probs.get_mut(target).unwrap() += rest;
    } else {
        for t in &others {
            probs.insert(t.to_string(), rest / others.len() as f64);
        }
    }
    probs
}
