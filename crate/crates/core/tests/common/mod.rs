//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls into the search, session or eval code under test; the
//! oracles only read scripted scorer tables.

#![allow(dead_code)]

use std::cmp::Ordering;

use blocksync::scorer::{random_scenario, LanguageModel, LmHistory, ScenarioDoc, SynthParams, TableModel};
use blocksync::{DecodeConfig, TokenId};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scenario(seed: u64, params: &SynthParams) -> (ScenarioDoc, TableModel) {
    let doc = random_scenario(&mut rng(seed), params);
    let model = TableModel::from_doc(&doc, None).expect("generated scenario loads");
    (doc, model)
}

/// Input features for `encoder_frames` frames; the table model ignores values.
pub fn zero_features(encoder_frames: usize, subsample: usize) -> Array2<f64> {
    Array2::zeros((encoder_frames * subsample, 1))
}

// ---------------------------------------------------------------------------
// Expected alignment

/// Neumaier-compensated accumulator.
#[derive(Clone, Copy, Default)]
pub struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Attendance probabilities by explicit enumeration of every monotone path.
/// Output `i` starts scanning at the frame where output `i - 1` stopped (frame
/// 0 for the first output) and stops at `j` with probability
/// `p[i][j] * prod_{start <= k < j} (1 - p[i][k])`.
pub fn brute_force_alignment(p: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let rows = p.len();
    let cols = p.first().map_or(0, Vec::len);
    let mut acc = vec![vec![Compensated::default(); cols]; rows];

    fn walk(p: &[Vec<f64>], i: usize, start: usize, weight: f64, acc: &mut [Vec<Compensated>]) {
        if i == p.len() {
            return;
        }
        let mut survive = 1.0;
        for j in start..p[i].len() {
            let w = weight * survive * p[i][j];
            acc[i][j].add(w);
            walk(p, i + 1, j, w, acc);
            survive *= 1.0 - p[i][j];
        }
    }
    walk(p, 0, 0, 1.0, &mut acc);
    acc.iter().map(|r| r.iter().map(Compensated::value).collect()).collect()
}

// ---------------------------------------------------------------------------
// Search

/// Candidate output sequence with its accumulated score.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub prefix: Vec<TokenId>,
    pub score: f64,
}

fn normalized(c: &Candidate, length_norm: bool) -> f64 {
    if length_norm {
        c.score / (c.prefix.len().max(1) as f64)
    } else {
        c.score
    }
}

/// Ranking rule: higher (normalized) score, then shorter, then smaller ids.
pub fn rank(a: &Candidate, b: &Candidate, length_norm: bool) -> Ordering {
    let (sa, sb) = (normalized(a, length_norm), normalized(b, length_norm));
    if sa > sb {
        return Ordering::Less;
    }
    if sa < sb {
        return Ordering::Greater;
    }
    a.prefix
        .len()
        .cmp(&b.prefix.len())
        .then_with(|| a.prefix.iter().map(|t| t.0).cmp(b.prefix.iter().map(|t| t.0)))
}

pub fn best(cands: &[Candidate], length_norm: bool) -> Option<Candidate> {
    let mut best: Option<&Candidate> = None;
    for c in cands {
        if c.score == f64::NEG_INFINITY {
            continue;
        }
        best = match best {
            Some(b) if rank(b, c, length_norm) != Ordering::Greater => Some(b),
            _ => Some(c),
        };
    }
    best.cloned()
}

fn fuse(token: f64, lm: f64, weight: f64) -> f64 {
    if weight == 0.0 {
        token
    } else {
        token + weight * lm
    }
}

/// First frame in `[head, frames)` whose selection probability reaches the
/// threshold.
pub fn first_boundary(m: &TableModel, prefix: &[TokenId], head: usize, frames: usize, threshold: f64) -> Option<usize> {
    (head..frames).find(|&j| m.selection_at(prefix, j) >= threshold)
}

fn ordinary_tokens(m: &TableModel) -> Vec<TokenId> {
    let v = m.vocab();
    (0..v.len())
        .map(TokenId::from)
        .filter(|&t| t != v.blank_id() && t != v.eos_id())
        .collect()
}

/// Exhaustive enumeration of every reachable output sequence for a stream of
/// `frames` encoder frames cut into blocks of `block_frames` encoder frames.
///
/// A sequence ending in eos is a candidate when eos is scored at the next
/// boundary, or with the no-boundary distribution whenever the sequence spends
/// a block end without a boundary. A sequence with no further boundary stays
/// a candidate as is.
pub fn exhaustive_candidates(m: &TableModel, cfg: &DecodeConfig, frames: usize, block_frames: usize) -> Vec<Candidate> {
    let eos = m.vocab().eos_id();
    let tokens = ordinary_tokens(m);
    let mut out = Vec::new();

    #[allow(clippy::too_many_arguments)]
    fn walk(
        m: &TableModel,
        cfg: &DecodeConfig,
        frames: usize,
        block_frames: usize,
        tokens: &[TokenId],
        eos: TokenId,
        prefix: &mut Vec<TokenId>,
        head: usize,
        score: f64,
        lm: &LmHistory,
        out: &mut Vec<Candidate>,
    ) {
        let lm_logp = m.log_probs(lm).unwrap();
        let with_eos = |s: f64| {
            let mut p = prefix.clone();
            p.push(eos);
            Candidate { prefix: p, score: s }
        };
        let next = first_boundary(m, prefix, head, frames, cfg.boundary_threshold);
        let parks = match next {
            None => true,
            Some(b) => b / block_frames > head / block_frames,
        };
        if parks && cfg.enable_parked_eos {
            let d = m.distribution(prefix, None);
            out.push(with_eos(
                score + fuse(d[eos.index()], lm_logp[eos.index()], cfg.lm_weight),
            ));
        }
        let Some(b) = next else {
            out.push(Candidate {
                prefix: prefix.clone(),
                score,
            });
            return;
        };
        let d = m.distribution(prefix, Some(b)).to_vec();
        out.push(with_eos(
            score + fuse(d[eos.index()], lm_logp[eos.index()], cfg.lm_weight),
        ));
        for &k in tokens {
            let s = score + fuse(d[k.index()], lm_logp[k.index()], cfg.lm_weight);
            if s == f64::NEG_INFINITY {
                continue;
            }
            let next_lm = m.advance(lm, k);
            prefix.push(k);
            walk(m, cfg, frames, block_frames, tokens, eos, prefix, b, s, &next_lm, out);
            prefix.pop();
        }
    }

    walk(
        m,
        cfg,
        frames,
        block_frames.max(1),
        &tokens,
        eos,
        &mut Vec::new(),
        0,
        0.0,
        &LanguageModel::initial_state(m),
        &mut out,
    );
    out
}

/// Straightforward label-synchronous beam search over a whole stream: every
/// output step scans each hypothesis from its head to the end of the stream.
pub fn label_sync_reference(m: &TableModel, cfg: &DecodeConfig, frames: usize) -> Candidate {
    struct Hyp {
        cand: Candidate,
        head: usize,
        lm: LmHistory,
    }
    let eos = m.vocab().eos_id();
    let tokens = ordinary_tokens(m);
    let mut active = vec![Hyp {
        cand: Candidate {
            prefix: Vec::new(),
            score: 0.0,
        },
        head: 0,
        lm: LanguageModel::initial_state(m),
    }];
    let mut done: Vec<Candidate> = Vec::new();
    let mut waiting: Vec<Candidate> = Vec::new();
    while !active.is_empty() {
        let mut next = Vec::new();
        for h in active {
            let lm_logp = m.log_probs(&h.lm).unwrap();
            let eos_of = |d: &[f64]| {
                let mut p = h.cand.prefix.clone();
                p.push(eos);
                Candidate {
                    prefix: p,
                    score: h.cand.score + fuse(d[eos.index()], lm_logp[eos.index()], cfg.lm_weight),
                }
            };
            match first_boundary(m, &h.cand.prefix, h.head, frames, cfg.boundary_threshold) {
                None => {
                    if cfg.enable_parked_eos {
                        done.push(eos_of(m.distribution(&h.cand.prefix, None)));
                    }
                    waiting.push(h.cand);
                }
                Some(b) => {
                    let d = m.distribution(&h.cand.prefix, Some(b));
                    done.push(eos_of(d));
                    for &k in &tokens {
                        let s = h.cand.score + fuse(d[k.index()], lm_logp[k.index()], cfg.lm_weight);
                        if s == f64::NEG_INFINITY {
                            continue;
                        }
                        let mut p = h.cand.prefix.clone();
                        p.push(k);
                        next.push(Hyp {
                            cand: Candidate { prefix: p, score: s },
                            head: b,
                            lm: m.advance(&h.lm, k),
                        });
                    }
                }
            }
        }
        next.sort_by(|a, b| rank(&a.cand, &b.cand, cfg.enable_length_norm));
        next.truncate(cfg.beam_width);
        active = next;
    }
    done.extend(waiting);
    best(&done, cfg.enable_length_norm).expect("reference produced a hypothesis")
}

// ---------------------------------------------------------------------------
// Session

/// Index of the frame at which the `n`-th consecutive blank-equivalent frame
/// is first observed, recounting the run from scratch at every frame.
pub fn blank_run_recount(rows: &[Vec<f64>], blank: usize, spike: f64, n: usize) -> Option<usize> {
    let blank_like = |r: &Vec<f64>| {
        let mut arg = 0;
        for k in 1..r.len() {
            if r[k] > r[arg] {
                arg = k;
            }
        }
        arg == blank || r[arg] < spike
    };
    (0..rows.len()).find(|&f| {
        let run = (0..=f).rev().take_while(|&k| blank_like(&rows[k])).count();
        run >= n
    })
}

// ---------------------------------------------------------------------------
// Edit distance

/// Minimum edit count over every edit script, enumerated without memoization.
pub fn brute_force_edits<T: PartialEq>(r: &[T], h: &[T]) -> usize {
    match (r.split_first(), h.split_first()) {
        (None, _) => h.len(),
        (_, None) => r.len(),
        (Some((a, rr)), Some((b, hh))) => {
            let diag = brute_force_edits(rr, hh) + usize::from(a != b);
            let del = brute_force_edits(rr, h) + 1;
            let ins = brute_force_edits(r, hh) + 1;
            diag.min(del).min(ins)
        }
    }
}

/// Hand-worked alignments: (reference, hypothesis, S, D, I). Tokens are chars.
pub const WER_CASES: &[(&str, &str, usize, usize, usize)] = &[
    ("abc", "abc", 0, 0, 0),
    ("abc", "axcd", 1, 0, 1),
    ("", "a", 0, 0, 1),
    ("a", "", 0, 1, 0),
    ("", "", 0, 0, 0),
    ("ab", "ba", 2, 0, 0),
    ("abc", "", 0, 3, 0),
    ("", "abc", 0, 0, 3),
    ("abc", "xyz", 3, 0, 0),
    ("abcd", "acd", 0, 1, 0),
    ("acd", "abcd", 0, 0, 1),
    ("aaa", "aa", 0, 1, 0),
    ("ab", "abab", 0, 0, 2),
    ("abab", "ab", 0, 2, 0),
    ("abc", "cba", 2, 0, 0),
    ("abcde", "axcye", 2, 0, 0),
    ("abc", "abcabc", 0, 0, 3),
    ("ab", "c", 1, 1, 0),
    ("a", "bc", 1, 0, 1),
    ("abcde", "bcdef", 0, 1, 1),
];

pub fn chars(s: &str) -> Vec<char> {
    s.chars().collect()
}

/// A scenario with exactly one live hypothesis: token `k` is forced at
/// `boundaries[k]` and every alternative continuation has probability zero.
pub fn chain_scenario(boundaries: &[usize], frames: usize) -> TableModel {
    let names = ["<blank>", "<eos>", "a", "b"];
    let mut doc = ScenarioDoc::new(&names, 0.0);
    let mut prefix: Vec<&str> = Vec::new();
    for (k, &b) in boundaries.iter().enumerate() {
        let tok = names[2 + k % 2];
        doc = doc.select(&prefix, &[b], 1.0).dist(&prefix, &[(tok, 1.0)]);
        prefix.push(tok);
    }
    doc = doc.dist(&prefix, &[("<eos>", 1.0)]);
    let mut blank = vec![0.0; names.len()];
    blank[0] = 1.0;
    doc = doc.ctc_rows(vec![blank; frames]);
    TableModel::from_doc(&doc, None).unwrap()
}

/// Random CTC posterior stream over `width` columns (blank at 0): long runs of
/// blank-dominated frames and weak spikes (every entry below 0.1) broken by
/// short bursts of strong non-blank frames.
pub fn random_posteriors<R: rand::Rng>(rng: &mut R, frames: usize, width: usize) -> Vec<Vec<f64>> {
    assert!(width >= 13, "weak spikes need at least 12 non-blank columns");
    let mut rows = Vec::with_capacity(frames);
    while rows.len() < frames {
        let strong = rng.gen_bool(0.4);
        let run = if strong {
            rng.gen_range(1..5)
        } else {
            rng.gen_range(1..70)
        };
        for _ in 0..run {
            let mut row = vec![0.0; width];
            if strong {
                let k = rng.gen_range(1..width);
                row[k] = rng.gen_range(0.3..0.95);
                let rest = 1.0 - row[k];
                let w: Vec<f64> = (0..width)
                    .map(|i| if i == k { 0.0 } else { rng.gen_range(0.0..1.0) })
                    .collect();
                let total: f64 = w.iter().sum();
                for i in 0..width {
                    if i != k {
                        row[i] = rest * w[i] / total;
                    }
                }
                // keep the spike the argmax
                if row.iter().enumerate().any(|(i, &v)| i != k && v >= row[k]) {
                    row = vec![0.0; width];
                    row[k] = 1.0;
                }
            } else if rng.gen_bool(0.7) {
                row[0] = rng.gen_range(0.5..1.0);
                let rest = 1.0 - row[0];
                let w: Vec<f64> = (1..width).map(|_| rng.gen_range(0.0..1.0)).collect();
                let total: f64 = w.iter().sum();
                for i in 1..width {
                    row[i] = rest * w[i - 1] / total;
                }
            } else {
                let n = 12;
                let mut sum = 0.0;
                for v in row.iter_mut().skip(1).take(n) {
                    *v = rng.gen_range(0.06..0.08);
                    sum += *v;
                }
                row[0] = 1.0 - sum;
            }
            rows.push(row);
        }
    }
    rows.truncate(frames);
    rows
}

/// Random decoder tables over 12 ordinary tokens with `rows` as the CTC branch.
pub fn posterior_model(seed: u64, rows: Vec<Vec<f64>>) -> TableModel {
    let params = SynthParams {
        output_tokens: 12,
        encoder_frames: rows.len(),
        max_len: 2,
        selection_density: 0.03,
        lm_order: None,
        ctc_blank_rate: 0.5,
    };
    let mut doc = random_scenario(&mut rng(seed), &params);
    doc.ctc = rows;
    TableModel::from_doc(&doc, None).expect("posterior scenario loads")
}
