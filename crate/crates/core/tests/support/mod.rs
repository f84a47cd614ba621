//! Independent reference implementations used by the integration and
//! acceptance tests. Everything here is written from the definitions,
//! naively, without reusing the library's dynamic programs.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ftlm::decoding::FusionParams;
use ftlm::encoder::EncoderConfig;
use ftlm::lm::{LanguageModel, LmDims};
use ftlm::numerics::Tensor;
use ftlm::tokenizer::{Vocabulary, BOS};
use ftlm::transducer::{FactorizedTransducer, LatticeDistributions, TransducerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vocab(n: usize) -> Vocabulary {
    let mut toks = vec!["<bos>".to_string(), "<unk>".to_string()];
    toks.extend((0..n.saturating_sub(2)).map(|i| format!("t{i}")));
    Vocabulary::from_tokens(toks).unwrap()
}

pub fn random_tensor(shape: &[usize], scale: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

/// log Σ exp, naively with a max shift.
pub fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let z = lse(xs);
    xs.iter().map(|x| x - z).collect()
}

/// Random lattice ingredients for `targets` over `t` frames and `v` labels.
pub fn random_distributions(t: usize, u: usize, v: usize, r: &mut ChaCha8Rng) -> (LatticeDistributions<f64>, Vec<usize>) {
    let targets: Vec<usize> = (0..u).map(|_| r.random_range(1..v)).collect();
    let mut log_pb = Vec::new();
    let mut log1m = Vec::new();
    for _ in 0..t * (u + 1) {
        let z: f64 = r.random_range(-3.0..3.0);
        let p = 1.0 / (1.0 + (-z).exp());
        log_pb.push(p.ln());
        log1m.push((1.0 - p).ln());
    }
    let rows = |n: usize, r: &mut ChaCha8Rng| -> Tensor<f64> {
        let mut data = Vec::new();
        for _ in 0..n {
            let logits: Vec<f64> = (0..v).map(|_| r.random_range(-3.0..3.0)).collect();
            data.extend(log_softmax(&logits));
        }
        Tensor::new(vec![n, v], data).unwrap()
    };
    let d = LatticeDistributions {
        log_pb: Tensor::new(vec![t, u + 1], log_pb).unwrap(),
        log1m_pb: Tensor::new(vec![t, u + 1], log1m).unwrap(),
        log_ac: rows(t, r),
        log_ilm: rows(u + 1, r),
    };
    (d, targets)
}

/// log P_nb(t, u, k) straight from the factorisation.
pub fn log_pnb(d: &LatticeDistributions<f64>, t: usize, u: usize, k: usize) -> f64 {
    let mix: Vec<f64> = d.log_ac.row(t).iter().zip(d.log_ilm.row(u)).map(|(a, b)| a + b).collect();
    d.log1m_pb.at(t, u) + mix[k] - lse(&mix)
}

/// Transducer negative log-likelihood by enumerating every alignment
/// (T blanks and U labels, the last symbol a blank). Also returns the
/// number of alignments.
pub fn rnnt_enumerate(d: &LatticeDistributions<f64>, targets: &[usize]) -> (f64, usize) {
    let t_len = d.log_ac.rows();
    let u_len = targets.len();
    let slots = t_len + u_len - 1;
    let mut logs = Vec::new();
    for mask in 0u32..(1 << slots) {
        if mask.count_ones() as usize != u_len {
            continue;
        }
        let (mut t, mut u, mut lp) = (0, 0, 0.0);
        for s in 0..slots {
            if mask >> s & 1 == 1 {
                lp += log_pnb(d, t, u, targets[u]);
                u += 1;
            } else {
                lp += d.log_pb.at(t, u);
                t += 1;
            }
        }
        lp += d.log_pb.at(t, u);
        logs.push(lp);
    }
    (-lse(&logs), logs.len())
}

pub fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

pub fn tiny_encoder(d_feat: usize) -> EncoderConfig {
    EncoderConfig {
        d_feat,
        d: 8,
        layers: 1,
        heads: 2,
        ff: 8,
        chunk_frames: 2,
    }
}

/// A small model whose blank combine vector is randomised (it starts at
/// zero otherwise).
pub fn tiny_model(v: usize, lm: LmDims, seed: u64) -> FactorizedTransducer<f64> {
    let cfg = TransducerConfig {
        d_blank: 4,
        d_joint: 5,
        ..Default::default()
    };
    let predictor = LanguageModel::new(lm, vocab(v), seed + 1).unwrap();
    let mut m = FactorizedTransducer::new(tiny_encoder(3), cfg, predictor, seed).unwrap();
    let mut r = rng(seed + 2);
    for store in m.stores_mut() {
        for p in store.iter_mut() {
            if p.name == "blank.joiner.w" || p.name == "out" {
                for x in p.value.data_mut() {
                    *x = r.random_range(-1.5..1.5);
                }
            }
        }
    }
    m
}

/// The fused label scores, computed naively.
pub fn fused_oracle(log1m_pb: f64, ac: &[f64], lm: &[f64], fp: FusionParams) -> Vec<f64> {
    let mix: Vec<f64> = ac.iter().zip(lm).map(|(a, l)| a + fp.alpha * l).collect();
    let z = lse(&mix);
    mix.iter().zip(lm).map(|(m, l)| log1m_pb + m - z + fp.beta * l).collect()
}

/// Best label sequence under fused scoring with at most one label per
/// frame, by enumerating every alignment and summing (log-add) those that
/// yield the same sequence. Returns (sequence, score, number of sequences).
pub fn exhaustive_best(
    model: &FactorizedTransducer<f64>,
    predictor: &LanguageModel<f64>,
    enc: &Tensor<f64>,
    fp: FusionParams,
) -> (Vec<usize>, f64, usize) {
    let (log_ac, a_proj) = model.frame_tables(enc).unwrap();
    let label_rows = model.label_table().unwrap();
    let v = model.vocab().len();
    let t_len = enc.rows();
    let lm_row = |hist: &[usize]| -> Vec<f64> {
        let mut st = predictor.initial_state();
        let (s, mut row) = predictor.step(&st, BOS).unwrap();
        st = s;
        for &k in hist {
            let (s, r) = predictor.step(&st, k).unwrap();
            st = s;
            row = r;
        }
        row
    };
    let blank = |t: usize, hist: &[usize]| -> (f64, f64) {
        let last = hist.last().copied().unwrap_or(BOS);
        model.blank_pair(a_proj.row(t), label_rows.row(last)).unwrap()
    };
    let mut totals: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    let choices = v; // 0 = blank only, k ≥ 1 = label k then blank
    let mut count = 1;
    for _ in 0..t_len {
        count *= choices;
    }
    for code in 0..count {
        let mut c = code;
        let mut hist: Vec<usize> = Vec::new();
        let mut score = 0.0;
        for t in 0..t_len {
            let k = c % choices;
            c /= choices;
            if k != 0 {
                let (_, log1m) = blank(t, &hist);
                let fused = fused_oracle(log1m, log_ac.row(t), &lm_row(&hist), fp);
                score += fused[k];
                hist.push(k);
            }
            score += blank(t, &hist).0;
        }
        totals.entry(hist).or_default().push(score);
    }
    let n = totals.len();
    let (best, s) = totals
        .into_iter()
        .map(|(h, s)| (h, lse(&s)))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    (best, s, n)
}

/// Random raw features.
pub fn features(t0: usize, d: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    random_tensor(&[t0, d], 1.0, r)
}
