//! Minimum word error rate finetuning over fused-score N-best lists.

use std::collections::HashMap;
use std::rc::Rc;

use serde::Serialize;

use crate::decoding::{beam_search, BeamConfig, FusionParams, Hypothesis, Trace};
use crate::error::{Error, Result};
use crate::numerics::{GradMap, OptimizerState, Tape, Var};
use crate::scalar::Scalar;
use crate::tokenizer::{TokenizerModel, BOS};
use crate::transducer::lattice::label_scores;
use crate::transducer::{FactorizedTransducer, Utterance};

/// Levenshtein distance with unit costs.
pub fn word_edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

/// `Σ_i softmax(S)_i · (E_i − mean(E))`.
pub fn mwer_loss(scores: &[f64], errors: &[f64]) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = w.iter().sum();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    w.iter().zip(errors).map(|(p, e)| p / z * (e - mean)).sum()
}

/// The same objective on a tape, differentiable in `scores` (`N` scalars).
pub fn mwer_loss_var<S: Scalar>(tape: &mut Tape<'_, S>, scores: &[Var], errors: &[f64]) -> Result<Var> {
    let n = scores.len();
    if n == 0 || errors.len() != n {
        return Err(Error::Shape(format!("{n} scores for {} error counts", errors.len())));
    }
    let mean = errors.iter().sum::<f64>() / n as f64;
    let s = tape.stack(scores)?;
    let s = tape.reshape(s, &[1, n])?;
    let lp = tape.log_softmax(s);
    let p = tape.exp(lp);
    let centred: Vec<S> = errors.iter().map(|e| S::of(e - mean)).collect();
    let c = tape.constant(crate::numerics::Tensor::matrix(1, n, centred)?);
    let w = tape.mul(p, c)?;
    Ok(tape.sum(w))
}

fn logaddexp_var<S: Scalar>(tape: &mut Tape<'_, S>, a: Var, b: Var) -> Result<Var> {
    let s = tape.stack(&[a, b])?;
    let s = tape.reshape(s, &[1, 2])?;
    let lp = tape.log_softmax(s);
    let first = tape.pick(lp, &[0]);
    tape.sub(a, first)
}

#[derive(Default)]
struct Points {
    blank: Vec<(usize, usize)>,
    emit: Vec<(usize, usize, usize)>,
    blank_at: HashMap<(usize, usize), usize>,
    emit_at: HashMap<(usize, usize, usize), usize>,
}

fn collect_points(trace: &Rc<Trace>, pts: &mut Points, seen: &mut HashMap<*const Trace, ()>) {
    let mut stack = vec![trace.clone()];
    while let Some(node) = stack.pop() {
        if seen.insert(Rc::as_ptr(&node), ()).is_some() {
            continue;
        }
        match &*node {
            Trace::Start => {}
            Trace::Blank { prev, t, u } => {
                pts.blank_at.entry((*t, *u)).or_insert_with(|| {
                    pts.blank.push((*t, *u));
                    pts.blank.len() - 1
                });
                stack.push(prev.clone());
            }
            Trace::Emit { prev, t, u, k } => {
                pts.emit_at.entry((*t, *u, *k)).or_insert_with(|| {
                    pts.emit.push((*t, *u, *k));
                    pts.emit.len() - 1
                });
                stack.push(prev.clone());
            }
            Trace::Merge(a, b) => {
                stack.push(a.clone());
                stack.push(b.clone());
            }
        }
    }
}

struct Scored {
    blank: Var,
    emit: Option<Var>,
    gate: Option<Var>,
}

fn eval_trace<S: Scalar>(
    tape: &mut Tape<'_, S>,
    node: &Rc<Trace>,
    pts: &Points,
    sc: &Scored,
    memo: &mut HashMap<*const Trace, Option<Var>>,
) -> Result<Option<Var>> {
    // iterative post-order to keep deep traces off the call stack
    let mut stack = vec![(node.clone(), false)];
    while let Some((n, expanded)) = stack.pop() {
        let key = Rc::as_ptr(&n);
        if memo.contains_key(&key) {
            continue;
        }
        let children: Vec<Rc<Trace>> = match &*n {
            Trace::Start => vec![],
            Trace::Blank { prev, .. } | Trace::Emit { prev, .. } => vec![prev.clone()],
            Trace::Merge(a, b) => vec![a.clone(), b.clone()],
        };
        if !expanded && children.iter().any(|c| !memo.contains_key(&Rc::as_ptr(c))) {
            stack.push((n.clone(), true));
            for c in children {
                stack.push((c, false));
            }
            continue;
        }
        let get = |memo: &HashMap<*const Trace, Option<Var>>, c: &Rc<Trace>| memo[&Rc::as_ptr(c)];
        let add = |tape: &mut Tape<'_, S>, prev: Option<Var>, step: Var| -> Result<Var> {
            match prev {
                Some(p) => tape.add(p, step),
                None => Ok(step),
            }
        };
        let value = match &*n {
            Trace::Start => None,
            Trace::Blank { prev, t, u } => {
                let i = pts.blank_at[&(*t, *u)];
                let step = tape.pick(sc.blank, &[i]);
                Some(add(tape, get(memo, prev), step)?)
            }
            Trace::Emit { prev, t, u, k } => {
                let i = pts.emit_at[&(*t, *u, *k)];
                let (emit, gate) = (sc.emit.expect("emit points"), sc.gate.expect("gate points"));
                let e = tape.pick(emit, &[i]);
                let g = tape.pick(gate, &[i]);
                let step = tape.add(e, g)?;
                Some(add(tape, get(memo, prev), step)?)
            }
            Trace::Merge(a, b) => match (get(memo, a), get(memo, b)) {
                (Some(x), Some(y)) => Some(logaddexp_var(tape, x, y)?),
                _ => return Err(Error::InvalidArgument("merge of an empty trace".into())),
            },
        };
        memo.insert(key, value);
    }
    Ok(memo[&Rc::as_ptr(node)])
}

/// Recomputes each hypothesis' search score on a tape, following exactly
/// the alignments (and merges) the search accumulated.
pub fn rescore<'p, S: Scalar>(
    tape: &mut Tape<'p, S>,
    model: &'p FactorizedTransducer<S>,
    utt: &Utterance<S>,
    hyps: &[Hypothesis],
    fp: FusionParams,
) -> Result<Vec<Var>> {
    let chunk = model.encoder().config().chunk_frames;
    let (enc, _) = model.encoder().forward(tape, &[&utt.features], chunk)?;
    let log_ac = model.acoustic_logprobs(tape, enc)?;
    let seqs: Vec<&[usize]> = hyps.iter().map(|h| h.tokens.as_slice()).collect();
    let (ilm_all, offsets) = model.predictor().forward_batch(tape, &seqs)?;
    let mut out = Vec::with_capacity(hyps.len());
    for (h, &off) in hyps.iter().zip(&offsets) {
        let u1 = h.tokens.len() + 1;
        let mut history = Vec::with_capacity(u1);
        history.push(BOS);
        history.extend_from_slice(&h.tokens);
        let z = model.blank_logits(tape, enc, &history)?;
        let log_pb = tape.log_sigmoid(z);
        let nz = tape.scale(z, -S::one());
        let log1m = tape.log_sigmoid(nz);
        let ilm = tape.slice_rows(ilm_all, off, u1)?;
        let mut pts = Points::default();
        collect_points(&h.trace, &mut pts, &mut HashMap::new());
        let flat = |t: usize, u: usize| t * u1 + u;
        let blank = tape.pick(log_pb, &pts.blank.iter().map(|&(t, u)| flat(t, u)).collect::<Vec<_>>());
        let (emit, gate) = if pts.emit.is_empty() {
            (None, None)
        } else {
            let e = label_scores(tape, log_ac, ilm, pts.emit.clone(), S::of(fp.alpha), S::of(fp.beta))?;
            let g = tape.pick(log1m, &pts.emit.iter().map(|&(t, u, _)| flat(t, u)).collect::<Vec<_>>());
            (Some(e), Some(g))
        };
        let sc = Scored { blank, emit, gate };
        let score = match eval_trace(tape, &h.trace, &pts, &sc, &mut HashMap::new())? {
            Some(v) => v,
            None => tape.constant(crate::numerics::Tensor::scalar(S::zero())),
        };
        out.push(score);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MwerMetrics {
    pub loss: f64,
    /// Mean over utterances of the best N-best word error rate.
    pub oracle_wer: f64,
    /// Fraction of utterances whose reference appears in the N-best.
    pub reference_in_nbest: f64,
    pub skipped: usize,
    /// Largest |search score − rescored score| in the batch.
    pub max_rescore_gap: f64,
    pub grad_norm: f64,
    pub updated: bool,
}

/// Tolerance of the rescoring consistency check, relative to the score
/// magnitude (floored at 1).
pub fn rescore_tolerance<S: Scalar>() -> f64 {
    match S::DTYPE {
        crate::scalar::DType::F32 => 1e-4,
        crate::scalar::DType::F64 => 1e-9,
    }
}

/// One MWER update over `batch`: N-best search with `fp`, differentiable
/// rescoring, expected-error loss (plus `rnnt_weight` × the transducer
/// objective when positive), then an optimiser step on every trainable
/// parameter (the LM trunk stays frozen).
pub fn mwer_finetune_step<S: Scalar>(
    model: &mut FactorizedTransducer<S>,
    tokenizer: &TokenizerModel,
    batch: &[&Utterance<S>],
    fp: FusionParams,
    cfg: BeamConfig,
    rnnt_weight: f64,
    opt: &mut OptimizerState<S>,
) -> Result<MwerMetrics> {
    let mut metrics = MwerMetrics::default();
    let mut work = Vec::new();
    let mut counted = 0usize;
    for utt in batch {
        let enc = model.encoder().encode_full(&utt.features)?;
        let nbest = beam_search(&enc, model, model.predictor(), fp, cfg)?;
        if nbest.is_empty() {
            metrics.skipped += 1;
            continue;
        }
        counted += 1;
        let reference = tokenizer.decode(&utt.targets)?;
        let ref_words: Vec<&str> = reference.split_whitespace().collect();
        let mut errors = Vec::with_capacity(nbest.len());
        for h in &nbest {
            let text = tokenizer.decode(&h.tokens)?;
            let words: Vec<&str> = text.split_whitespace().collect();
            errors.push(word_edit_distance(&words, &ref_words) as f64);
        }
        let best = errors.iter().copied().fold(f64::INFINITY, f64::min);
        metrics.oracle_wer += best / ref_words.len().max(1) as f64;
        if nbest.iter().any(|h| h.tokens == utt.targets) {
            metrics.reference_in_nbest += 1.0;
        }
        if errors.iter().any(|&e| e != errors[0]) {
            work.push((*utt, nbest, errors));
        }
    }
    if counted == 0 {
        return Ok(metrics);
    }
    let n = counted as f64;
    metrics.oracle_wer /= n;
    metrics.reference_in_nbest /= n;
    if work.is_empty() {
        return Ok(metrics);
    }
    let tol = rescore_tolerance::<S>();
    let grads = {
        let mut tape = Tape::new();
        let mut losses = Vec::with_capacity(work.len());
        for (utt, nbest, errors) in &work {
            let scores = rescore(&mut tape, model, utt, nbest, fp)?;
            for (h, &s) in nbest.iter().zip(&scores) {
                let r = tape.value(s).item().f64();
                let gap = (r - h.score).abs();
                metrics.max_rescore_gap = metrics.max_rescore_gap.max(gap);
                if gap > tol * h.score.abs().max(1.0) {
                    return Err(Error::ScoreMismatch {
                        searched: h.score,
                        rescored: r,
                    });
                }
            }
            losses.push(mwer_loss_var(&mut tape, &scores, errors)?);
        }
        let l = tape.stack(&losses)?;
        let total = tape.sum(l);
        let mut mean = tape.scale(total, S::one() / S::of(n));
        metrics.loss = tape.value(mean).item().f64();
        if rnnt_weight > 0.0 {
            let (obj, _, _) = model.objective(&mut tape, batch)?;
            let w = tape.scale(obj, S::of(rnnt_weight));
            mean = tape.add(mean, w)?;
        }
        if !metrics.loss.is_finite() {
            return Err(Error::NonFiniteLoss(work[0].0.id.clone()));
        }
        let g = tape.backward(mean)?;
        let mut grads = GradMap::new();
        for s in model.stores() {
            s.collect_grads(&g, &mut grads);
        }
        grads
    };
    metrics.grad_norm = model.apply(opt, &grads)?;
    metrics.updated = true;
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn oracle(h: &[u8], r: &[u8]) -> usize {
        match (h.split_first(), r.split_first()) {
            (None, _) => r.len(),
            (_, None) => h.len(),
            (Some((a, hs)), Some((b, rs))) => {
                let sub = oracle(hs, rs) + usize::from(a != b);
                sub.min(oracle(hs, r) + 1).min(oracle(h, rs) + 1)
            }
        }
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(word_edit_distance(&["a", "b"], &["a", "b"]), 0);
        assert_eq!(word_edit_distance(&["a", "b", "c"], &["a", "x", "c", "d"]), 2);
        assert_eq!(word_edit_distance::<&str>(&[], &["a", "b", "c"]), 3);
    }

    proptest! {
        #[test]
        fn edit_distance_matches_recursion(h in proptest::collection::vec(0u8..3, 0..6), r in proptest::collection::vec(0u8..3, 0..6)) {
            prop_assert_eq!(word_edit_distance(&h, &r), oracle(&h, &r));
        }

        #[test]
        fn loss_is_shift_invariant(s in proptest::collection::vec(-20.0f64..0.0, 1..6), c in -50.0f64..50.0, seed in 0u64..1000) {
            let e: Vec<f64> = (0..s.len()).map(|i| ((seed >> i) % 4) as f64).collect();
            let shifted: Vec<f64> = s.iter().map(|x| x + c).collect();
            prop_assert!((mwer_loss(&s, &e) - mwer_loss(&shifted, &e)).abs() <= 1e-9);
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(mwer_loss(&[-1.0, -3.0, -2.0], &[2.0, 2.0, 2.0]), 0.0);
        assert_eq!(mwer_loss(&[0.0, 0.0], &[0.0, 2.0]), 0.0);
        assert!((mwer_loss(&[3f64.ln(), 0.0], &[0.0, 2.0]) + 0.5).abs() < 1e-12);
        let mut tape = Tape::<f64>::new();
        let a = tape.input(crate::numerics::Tensor::scalar(3f64.ln()), true);
        let b = tape.input(crate::numerics::Tensor::scalar(0.0), true);
        let l = mwer_loss_var(&mut tape, &[a, b], &[0.0, 2.0]).unwrap();
        assert!((tape.value(l).item() + 0.5).abs() < 1e-12);
        let g = tape.backward(l).unwrap();
        // dL/dS_0 = p0 (e0 - L') where L' = Σ p e - mean: 0.75·(−1 − (−0.5))
        assert!((g.of(a).unwrap().item() + 0.375).abs() < 1e-12);
    }
    fn tiny<S: Scalar>() -> (FactorizedTransducer<S>, TokenizerModel) {
        use crate::encoder::EncoderConfig;
        use crate::lm::{LanguageModel, LmDims};
        use crate::tokenizer::Vocabulary;
        use crate::transducer::TransducerConfig;
        let toks = ["<bos>", "<unk>", "▁a", "▁b", "c"];
        let vocab = Vocabulary::from_tokens(toks.iter().map(|t| t.to_string()).collect()).unwrap();
        let enc = EncoderConfig { d_feat: 3, d: 8, layers: 1, heads: 2, ff: 8, chunk_frames: 2 };
        let cfg = TransducerConfig { d_blank: 4, d_joint: 6, ..Default::default() };
        let mut lm = LanguageModel::new(LmDims::transformer(8, 1, 2), vocab.clone(), 3).unwrap();
        lm.set_trunk_frozen(true);
        let mut m = FactorizedTransducer::new(enc, cfg, lm, 4).unwrap();
        // a non-zero combine vector so blank scores vary
        let mut opt = OptimizerState::new(crate::numerics::AdamConfig::with_lr(0.3));
        let u = utt::<S>(1);
        m.train_step(&[&u], &mut opt).unwrap();
        (m, TokenizerModel::new(vocab))
    }

    fn utt<S: Scalar>(seed: u64) -> Utterance<S> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Utterance {
            id: format!("u{seed}"),
            features: crate::numerics::Tensor::new(
                vec![22, 3],
                (0..66).map(|_| S::of(rng.random_range(-2.0..2.0))).collect(),
            )
            .unwrap(),
            targets: vec![2, 4, 3],
        }
    }

    fn rescoring_reproduces_search<S: Scalar>() {
        let (m, _) = tiny::<S>();
        for seed in 0..5 {
            let u = utt::<S>(seed + 10);
            let enc = m.encoder().encode_full(&u.features).unwrap();
            let nb = beam_search(&enc, &m, m.predictor(), FusionParams::default(), BeamConfig::default()).unwrap();
            let mut tape = Tape::new();
            let scores = rescore(&mut tape, &m, &u, &nb, FusionParams::default()).unwrap();
            for (h, s) in nb.iter().zip(scores) {
                let r = tape.value(s).item().f64();
                assert!((r - h.score).abs() <= rescore_tolerance::<S>() * h.score.abs().max(1.0), "{r} vs {}", h.score);
            }
        }
    }

    #[test]
    fn rescoring_reproduces_search_f64() {
        rescoring_reproduces_search::<f64>();
    }

    #[test]
    fn rescoring_reproduces_search_f32() {
        rescoring_reproduces_search::<f32>();
    }

    #[test]
    fn finetune_step_keeps_trunk() {
        let (mut m, tok) = tiny::<f64>();
        let trunk = m.predictor().trunk_checksum();
        let before = m.acoustic_checksum();
        let data: Vec<Utterance<f64>> = (0..4).map(|i| utt(20 + i)).collect();
        let batch: Vec<&Utterance<f64>> = data.iter().collect();
        let mut opt = OptimizerState::new(crate::numerics::AdamConfig::with_lr(1e-3));
        let met = mwer_finetune_step(&mut m, &tok, &batch, FusionParams::default(), BeamConfig::default(), 0.0, &mut opt).unwrap();
        assert!(met.loss.is_finite());
        assert!(met.max_rescore_gap <= 1e-9 * 100.0);
        assert_eq!(m.predictor().trunk_checksum(), trunk);
        assert_eq!(met.updated, m.acoustic_checksum() != before);
    }
}
