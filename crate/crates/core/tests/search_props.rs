mod common;

use blocksync::scorer::SynthParams;
use blocksync::search::{best_of, ordering_key, UtteranceDecoder};
use blocksync::{DecodeConfig, Hypothesis, SyncMode, TokenId};
use common::*;
use proptest::prelude::*;

fn params(frames: usize) -> SynthParams {
    SynthParams {
        output_tokens: 3,
        encoder_frames: frames,
        max_len: 4,
        selection_density: 0.4,
        lm_order: Some(2),
        ctc_blank_rate: 0.7,
    }
}

fn mode_strategy() -> impl Strategy<Value = SyncMode> {
    prop_oneof![Just(SyncMode::Label), Just(SyncMode::Block), Just(SyncMode::Frame)]
}

fn monotone<D, L>(h: &Hypothesis<D, L>) -> bool {
    h.boundaries.windows(2).all(|w| w[0] <= w[1])
        && h.emit_times.windows(2).all(|w| w[0] <= w[1])
        && h.boundaries.iter().zip(&h.emit_times).all(|(b, e)| b <= e)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beam_invariants_hold(
        seed in 0u64..10_000,
        frames in 4usize..30,
        beam in 1usize..6,
        block in 1usize..6,
        mode in mode_strategy(),
        lm_weight in prop_oneof![Just(0.0), Just(0.5)],
    ) {
        let (_, m) = scenario(seed, &params(frames));
        let base = DecodeConfig { beam_width: beam, block_size: block * 4, lm_weight, ..DecodeConfig::default() };
        let cfg = mode.configure(&base, frames * 4);
        let x = zero_features(frames, 4);
        let mut dec = UtteranceDecoder::new(m.encoder(4), &m, &m, m.vocab(), &cfg);
        for b in x.axis_chunks_iter(ndarray::Axis(0), cfg.block_size) {
            let report = dec.push_block(b).unwrap();
            prop_assert!(report.max_pruned_active <= beam);
            prop_assert!(report.steps <= report.u_max);
            let beams = dec.beams();
            prop_assert!(beams.active.iter().all(monotone));
            prop_assert!(beams.finished.iter().all(monotone));
        }
        let out = dec.finish().unwrap();
        prop_assert!(monotone(&out.best));
        prop_assert!(out.counters.expansions <= out.counters.work_bound);
        prop_assert!(out.best.boundaries.iter().all(|&f| f < frames));
    }

    #[test]
    fn decoding_is_deterministic(seed in 0u64..10_000, frames in 4usize..24, mode in mode_strategy()) {
        let run = || {
            let (_, m) = scenario(seed, &params(frames));
            let cfg = mode.configure(&DecodeConfig { beam_width: 3, block_size: 8, ..DecodeConfig::default() }, frames * 4);
            let x = zero_features(frames, 4);
            let d = blocksync::decode_utterance(x.view(), m.encoder(4), &m, &m, m.vocab(), &cfg).unwrap();
            (d.best.prefix, d.best.raw_log_score.to_bits(), d.best.boundaries, d.counters)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn ordering_key_is_total(
        entries in prop::collection::vec((prop::collection::vec(2u32..5, 0..4), -8i32..1), 1..12),
        norm in any::<bool>(),
    ) {
        let cfg = DecodeConfig { enable_length_norm: norm, ..DecodeConfig::default() };
        let hyps: Vec<Hypothesis<(), ()>> = entries
            .iter()
            .map(|(p, s)| Hypothesis {
                prefix: p.iter().map(|&t| TokenId(t)).collect(),
                raw_log_score: f64::from(*s) * 0.5,
                ..Hypothesis::seed(0, (), ())
            })
            .collect();
        for a in &hyps {
            for b in &hyps {
                let (ka, kb) = (ordering_key(a, &cfg), ordering_key(b, &cfg));
                prop_assert_eq!(ka.cmp(&kb), kb.cmp(&ka).reverse());
                if ka == kb {
                    prop_assert_eq!(&a.prefix, &b.prefix);
                }
                for c in &hyps {
                    let kc = ordering_key(c, &cfg);
                    if ka <= kb && kb <= kc {
                        prop_assert!(ka <= kc);
                    }
                }
            }
        }
        let best = best_of(&hyps, &cfg).unwrap();
        prop_assert!(hyps.iter().all(|h| ordering_key(best, &cfg) <= ordering_key(h, &cfg)));
    }
}
