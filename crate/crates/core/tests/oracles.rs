mod support;

use ftlm::decoding::{beam_search, fused_scores, BeamConfig, FusionParams, StreamingSession};
use ftlm::lm::LmDims;
use ftlm::transducer::{factorized_distribution, rnnt_forward_loss, Utterance};
use proptest::prelude::*;
use support::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_loss_matches_enumeration(t in 1usize..=4, u in 0usize..=3, v in 2usize..=5, seed in any::<u64>()) {
        let (d, targets) = random_distributions(t, u, v, &mut rng(seed));
        let (oracle, paths) = rnnt_enumerate(&d, &targets);
        prop_assert_eq!(paths, binomial(t + u - 1, u));
        let got = rnnt_forward_loss(&d, &targets).unwrap().loss;
        prop_assert!((got - oracle).abs() <= 1e-9 * oracle.abs().max(1.0), "{} vs {}", got, oracle);
    }

    #[test]
    fn factorized_distribution_matches_definition(v in 2usize..8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let (d, _) = random_distributions(1, 0, v, &mut r);
        let mut out = vec![0.0; v];
        factorized_distribution(d.log_ac.row(0), d.log_ilm.row(0), d.log1m_pb.at(0, 0), &mut out).unwrap();
        for (k, &x) in out.iter().enumerate() {
            prop_assert!((x - log_pnb(&d, 0, 0, k)).abs() < 1e-12);
        }
    }

    #[test]
    fn fused_scores_match_definition(v in 2usize..8, alpha in 0.0f64..2.0, beta in 0.0f64..2.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let ac = random_tensor(&[v], 3.0, &mut r);
        let lm = random_tensor(&[v], 3.0, &mut r);
        let fp = FusionParams { alpha, beta };
        let (_, got) = fused_scores(-0.7, -0.3, ac.data(), lm.data(), fp).unwrap();
        for (g, o) in got.iter().zip(fused_oracle(-0.3, ac.data(), lm.data(), fp)) {
            prop_assert!((g - o).abs() < 1e-12);
        }
    }
}

#[test]
fn beam_equals_exhaustive_search() {
    let cfgs = [LmDims::stateless(3), LmDims::recurrent(4)];
    for seed in 0..30u64 {
        let mut r = rng(seed);
        let v = 2 + (seed as usize % 2);
        let model = tiny_model(v, cfgs[seed as usize % 2].clone(), seed);
        let t = 1 + (seed as usize % 2);
        let enc = random_tensor(&[t, 8], 1.0, &mut r);
        let fp = FusionParams { alpha: 0.6, beta: 0.6 };
        let (best, score, space) = exhaustive_best(&model, model.predictor(), &enc, fp);
        let cfg = BeamConfig {
            beam: space,
            max_symbols_per_frame: 1,
            nbest: 1,
        };
        let hyps = beam_search(&enc, &model, model.predictor(), fp, cfg).unwrap();
        assert_eq!(hyps[0].tokens, best, "seed {seed}");
        assert!((hyps[0].score - score).abs() < 1e-9, "seed {seed}: {} vs {score}", hyps[0].score);
    }
}

#[test]
fn streaming_equals_offline() {
    for seed in 0..6u64 {
        let mut r = rng(100 + seed);
        let model = tiny_model(5, LmDims::recurrent(4), seed);
        let t0 = 8 + (seed as usize * 5) % 20;
        let feats = features(t0, 3, &mut r);
        let fp = FusionParams::default();
        let cfg = BeamConfig {
            beam: 4,
            max_symbols_per_frame: 2,
            nbest: 3,
        };
        let offline = beam_search(&model.encoder().encode_full(&feats).unwrap(), &model, model.predictor(), fp, cfg).unwrap();
        let mut s = StreamingSession::new(&model, model.predictor(), fp, cfg).unwrap();
        let mut at = 0;
        while at < t0 {
            let n = 1 + (at * 7 + seed as usize) % 6;
            let n = n.min(t0 - at);
            s.push(&feats.slice_rows(at, n)).unwrap();
            at += n;
        }
        let streamed = s.finalize().unwrap();
        let a: Vec<_> = offline.iter().map(|h| &h.tokens).collect();
        let b: Vec<_> = streamed.iter().map(|h| &h.tokens).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn normalization_at_every_lattice_point() {
    for seed in 0..10u64 {
        let model = tiny_model(4, LmDims::stateless(3), seed);
        let mut r = rng(seed);
        let utt = Utterance {
            id: "n".into(),
            features: features(12, 3, &mut r),
            targets: vec![2, 3, 1],
        };
        let d = model.distributions(&utt).unwrap();
        for t in 0..d.log_ac.rows() {
            for u in 0..=utt.targets.len() {
                let total: f64 = d.log_pb.at(t, u).exp()
                    + (0..4).map(|k| log_pnb(&d, t, u, k).exp()).sum::<f64>();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
