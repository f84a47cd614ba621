//! Fused scoring, time-synchronous beam search and streaming sessions.

use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderStream;
use crate::error::{Error, Result};
use crate::lm::{LanguageModel, LmState};
use crate::numerics::logspace::{lae, log_softmax_into};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::tokenizer::BOS;
use crate::transducer::FactorizedTransducer;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionParams {
    /// Weight of the LM inside the renormalised non-blank softmax.
    #[serde(default = "default_weight")]
    pub alpha: f64,
    /// Weight of the LM added outside the softmax.
    #[serde(default = "default_weight")]
    pub beta: f64,
}

fn default_weight() -> f64 {
    0.6
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            alpha: default_weight(),
            beta: default_weight(),
        }
    }
}

impl FusionParams {
    /// The training-time factorisation.
    pub const TRAINING: FusionParams = FusionParams { alpha: 1.0, beta: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::Config(format!("fusion weights must be finite: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    #[serde(default = "default_beam")]
    pub beam: usize,
    #[serde(default = "default_max_symbols")]
    pub max_symbols_per_frame: usize,
    #[serde(default = "default_nbest")]
    pub nbest: usize,
}

fn default_beam() -> usize {
    10
}
fn default_max_symbols() -> usize {
    3
}
fn default_nbest() -> usize {
    4
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam: default_beam(),
            max_symbols_per_frame: default_max_symbols(),
            nbest: default_nbest(),
        }
    }
}

impl BeamConfig {
    pub fn greedy() -> Self {
        BeamConfig {
            beam: 1,
            nbest: 1,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nbest == 0 || self.nbest > self.beam {
            return Err(Error::Config(format!(
                "need 1 ≤ nbest ≤ beam, got nbest {} beam {}",
                self.nbest, self.beam
            )));
        }
        Ok(())
    }
}

/// Fused decoding scores: blank = log P_b; label k =
/// `log(1 − P_b) + log_softmax(ac + α·lm)[k] + β·lm[k]`.
pub fn fused_scores<S: Scalar>(
    log_pb: S,
    log1m_pb: S,
    ac_row: &[S],
    lm_row: &[S],
    fp: FusionParams,
) -> Result<(S, Vec<S>)> {
    if ac_row.len() != lm_row.len() {
        return Err(Error::Shape(format!(
            "acoustic row {} vs LM row {}",
            ac_row.len(),
            lm_row.len()
        )));
    }
    let mut out = vec![S::zero(); ac_row.len()];
    fused_into(log1m_pb, ac_row, lm_row, fp, &mut out);
    Ok((log_pb, out))
}

fn fused_into<S: Scalar>(log1m_pb: S, ac: &[S], lm: &[S], fp: FusionParams, out: &mut [S]) {
    let (a, b) = (S::of(fp.alpha), S::of(fp.beta));
    let mix: Vec<S> = ac.iter().zip(lm).map(|(&x, &l)| x + a * l).collect();
    log_softmax_into(&mix, out);
    for (o, &l) in out.iter_mut().zip(lm) {
        *o += log1m_pb + b * l;
    }
}

/// How a hypothesis score was accumulated: the alignment steps taken, with
/// merges of equal-label hypotheses summing (log-add) their paths.
#[derive(Debug)]
pub enum Trace {
    Start,
    /// Blank at frame `t` with `u` labels emitted so far.
    Blank { prev: Rc<Trace>, t: usize, u: usize },
    /// Label `k` at frame `t` as the `u+1`-th label.
    Emit { prev: Rc<Trace>, t: usize, u: usize, k: usize },
    Merge(Rc<Trace>, Rc<Trace>),
}

#[derive(Clone, Debug)]
struct Hyp<S> {
    tokens: Vec<usize>,
    score: S,
    lm: LmState<S>,
    lm_row: Rc<Vec<S>>,
    trace: Rc<Trace>,
}

/// A finished hypothesis.
#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub score: f64,
    pub trace: Rc<Trace>,
}

fn rank<S: Scalar>(hyps: &mut [Hyp<S>]) {
    hyps.sort_by(|x, y| {
        y.score
            .partial_cmp(&x.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| x.tokens.cmp(&y.tokens))
    });
}

/// Frame-synchronous beam search state; frames are fed one at a time so
/// offline and streaming decoding share every computation.
pub struct BeamSearch<'m, S: Scalar> {
    model: &'m FactorizedTransducer<S>,
    predictor: &'m LanguageModel<S>,
    fp: FusionParams,
    cfg: BeamConfig,
    label_table: Tensor<S>,
    beam: Vec<Hyp<S>>,
    frames: usize,
    emitted: usize,
    lm_cache: HashMap<Vec<usize>, (LmState<S>, Rc<Vec<S>>)>,
}

impl<'m, S: Scalar> BeamSearch<'m, S> {
    pub fn new(
        model: &'m FactorizedTransducer<S>,
        predictor: &'m LanguageModel<S>,
        fp: FusionParams,
        cfg: BeamConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        fp.validate()?;
        if let Some(m) = model.vocab().first_mismatch(predictor.vocab()) {
            return Err(Error::VocabularyMismatch(m));
        }
        let (lm, row) = predictor.step(&predictor.initial_state(), BOS)?;
        let start = Hyp {
            tokens: Vec::new(),
            score: S::zero(),
            lm,
            lm_row: Rc::new(row),
            trace: Rc::new(Trace::Start),
        };
        Ok(BeamSearch {
            model,
            predictor,
            fp,
            cfg,
            label_table: model.label_table()?,
            beam: vec![start],
            frames: 0,
            emitted: 0,
            lm_cache: HashMap::new(),
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Label emissions expanded so far (a rough effort counter).
    pub fn emitted_tokens(&self) -> usize {
        self.emitted
    }

    fn extend_lm(&mut self, parent: &Hyp<S>, k: usize) -> Result<(LmState<S>, Rc<Vec<S>>)> {
        let mut key = parent.tokens.clone();
        key.push(k);
        if let Some(hit) = self.lm_cache.get(&key) {
            return Ok(hit.clone());
        }
        let (st, row) = self.predictor.step(&parent.lm, k)?;
        let v = (st, Rc::new(row));
        self.lm_cache.insert(key, v.clone());
        Ok(v)
    }

    /// Advances by every row of `enc` (encoder output frames).
    pub fn push_frames(&mut self, enc: &Tensor<S>) -> Result<()> {
        if enc.rows() == 0 || enc.is_empty() {
            return Ok(());
        }
        let (ac, a) = self.model.frame_tables(enc)?;
        for r in 0..enc.rows() {
            self.step_frame(ac.row(r), a.row(r))?;
        }
        Ok(())
    }

    fn step_frame(&mut self, ac: &[S], a: &[S]) -> Result<()> {
        let t = self.frames;
        let v = ac.len();
        let mut ended: Vec<Hyp<S>> = Vec::new();
        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut current = std::mem::take(&mut self.beam);
        let mut scores = vec![S::zero(); v];
        for level in 0..=self.cfg.max_symbols_per_frame {
            let mut cands: Vec<(S, usize, usize)> = Vec::new();
            let mut labels: Vec<Vec<S>> = Vec::new();
            for (hi, h) in current.iter().enumerate() {
                let last = h.tokens.last().copied().unwrap_or(BOS);
                let (lpb, l1m) = self.model.blank_pair(a, self.label_table.row(last))?;
                let u = h.tokens.len();
                let blank = Hyp {
                    score: h.score + lpb,
                    trace: Rc::new(Trace::Blank {
                        prev: h.trace.clone(),
                        t,
                        u,
                    }),
                    ..h.clone()
                };
                match index.get(&blank.tokens) {
                    Some(&i) => {
                        let e = &mut ended[i];
                        e.score = lae(e.score, blank.score);
                        e.trace = Rc::new(Trace::Merge(e.trace.clone(), blank.trace));
                    }
                    None => {
                        index.insert(blank.tokens.clone(), ended.len());
                        ended.push(blank);
                    }
                }
                if level < self.cfg.max_symbols_per_frame {
                    fused_into(l1m, ac, &h.lm_row, self.fp, &mut scores);
                    for (k, &s) in scores.iter().enumerate() {
                        if k != BOS {
                            cands.push((h.score + s, hi, k));
                        }
                    }
                    labels.push(scores.clone());
                }
            }
            if cands.is_empty() {
                break;
            }
            cands.sort_by(|x, y| {
                y.0.partial_cmp(&x.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| (x.1, x.2).cmp(&(y.1, y.2)))
            });
            cands.truncate(self.cfg.beam);
            let mut next = Vec::with_capacity(cands.len());
            for (score, hi, k) in cands {
                let parent = &current[hi];
                let (lm, lm_row) = self.extend_lm(parent, k)?;
                let mut tokens = parent.tokens.clone();
                tokens.push(k);
                next.push(Hyp {
                    tokens,
                    score,
                    lm,
                    lm_row,
                    trace: Rc::new(Trace::Emit {
                        prev: parent.trace.clone(),
                        t,
                        u: parent.tokens.len(),
                        k,
                    }),
                });
                self.emitted += 1;
            }
            current = next;
        }
        rank(&mut ended);
        ended.truncate(self.cfg.beam);
        self.beam = ended;
        self.frames += 1;
        Ok(())
    }

    /// Best hypothesis so far.
    pub fn best(&self) -> &[usize] {
        self.beam.first().map(|h| h.tokens.as_slice()).unwrap_or(&[])
    }

    /// Ranked N-best of distinct label sequences.
    pub fn finish(self) -> Vec<Hypothesis> {
        let mut beam = self.beam;
        rank(&mut beam);
        beam.truncate(self.cfg.nbest);
        beam.into_iter()
            .map(|h| Hypothesis {
                tokens: h.tokens,
                score: h.score.f64(),
                trace: h.trace,
            })
            .collect()
    }
}

/// Offline beam search over encoder output `enc`.
pub fn beam_search<S: Scalar>(
    enc: &Tensor<S>,
    model: &FactorizedTransducer<S>,
    predictor: &LanguageModel<S>,
    fp: FusionParams,
    cfg: BeamConfig,
) -> Result<Vec<Hypothesis>> {
    let mut search = BeamSearch::new(model, predictor, fp, cfg)?;
    search.push_frames(enc)?;
    Ok(search.finish())
}

pub fn greedy_search<S: Scalar>(
    enc: &Tensor<S>,
    model: &FactorizedTransducer<S>,
    predictor: &LanguageModel<S>,
    fp: FusionParams,
) -> Result<Hypothesis> {
    let cfg = BeamConfig {
        max_symbols_per_frame: default_max_symbols(),
        ..BeamConfig::greedy()
    };
    Ok(beam_search(enc, model, predictor, fp, cfg)?.remove(0))
}

/// Incremental decoding: features in, growing best transcript out.
pub struct StreamingSession<'m, S: Scalar> {
    model: &'m FactorizedTransducer<S>,
    encoder: EncoderStream<S>,
    search: BeamSearch<'m, S>,
}

impl<'m, S: Scalar> StreamingSession<'m, S> {
    pub fn new(
        model: &'m FactorizedTransducer<S>,
        predictor: &'m LanguageModel<S>,
        fp: FusionParams,
        cfg: BeamConfig,
    ) -> Result<Self> {
        Ok(StreamingSession {
            model,
            encoder: model.encoder().stream(),
            search: BeamSearch::new(model, predictor, fp, cfg)?,
        })
    }

    /// Feeds raw feature frames; returns the current best label prefix.
    pub fn push(&mut self, feats: &Tensor<S>) -> Result<Vec<usize>> {
        let frames = self.encoder.push(self.model.encoder(), feats)?;
        self.search.push_frames(&frames)?;
        Ok(self.search.best().to_vec())
    }

    pub fn consumed_frames(&self) -> usize {
        self.encoder.consumed_frames()
    }

    pub fn finalize(mut self) -> Result<Vec<Hypothesis>> {
        let frames = self.encoder.finalize(self.model.encoder())?;
        self.search.push_frames(&frames)?;
        Ok(self.search.finish())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::lm::LmDims;
    use crate::tokenizer::Vocabulary;
    use crate::transducer::{TransducerConfig, Utterance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(v: usize, seed: u64) -> FactorizedTransducer<f64> {
        let mut toks = vec!["<bos>".to_string(), "<unk>".to_string()];
        toks.extend((0..v - 2).map(|i| format!("t{i}")));
        let vocab = Vocabulary::from_tokens(toks).unwrap();
        let enc = EncoderConfig {
            d_feat: 3,
            d: 8,
            layers: 1,
            heads: 2,
            ff: 8,
            chunk_frames: 2,
        };
        let cfg = TransducerConfig {
            d_blank: 4,
            d_joint: 6,
            ..Default::default()
        };
        let lm = LanguageModel::new(LmDims::recurrent(6), vocab, seed).unwrap();
        FactorizedTransducer::new(enc, cfg, lm, seed).unwrap()
    }

    fn feats(t0: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![t0, 3], (0..t0 * 3).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn fusion_degenerates_to_training_factorization() {
        let m = model(6, 1);
        let u = Utterance {
            id: "x".into(),
            features: feats(9, 2),
            targets: vec![2, 3],
        };
        let d = m.distributions(&u).unwrap();
        for t in 0..d.log_ac.rows() {
            for h in 0..3 {
                let (b, nb) = fused_scores(
                    d.log_pb.at(t, h),
                    d.log1m_pb.at(t, h),
                    d.log_ac.row(t),
                    d.log_ilm.row(h),
                    FusionParams::TRAINING,
                )
                .unwrap();
                assert_eq!(b, d.log_pb.at(t, h));
                let mut expect = vec![0.0; 6];
                crate::transducer::factorized_distribution(
                    d.log_ac.row(t),
                    d.log_ilm.row(h),
                    d.log1m_pb.at(t, h),
                    &mut expect,
                )
                .unwrap();
                assert_eq!(nb, expect);
            }
        }
    }

    #[test]
    fn uniform_fusion_example() {
        let u = vec![-(4f64.ln()); 4];
        let (_, nb) = fused_scores(0.5f64.ln(), 0.5f64.ln(), &u, &u, FusionParams::default()).unwrap();
        for x in nb {
            assert!((x - (0.5f64.ln() - 4f64.ln() - 0.6 * 4f64.ln())).abs() < 1e-12);
            assert!((x + 2.9112).abs() < 1e-4);
        }
        assert!(fused_scores(0.0, 0.0, &u, &u[..2], FusionParams::default()).is_err());
    }

    #[test]
    fn empty_input_gives_empty_hypothesis() {
        let m = model(5, 3);
        let out = beam_search(&Tensor::zeros(&[0, 8]), &m, m.predictor(), FusionParams::default(), BeamConfig::default())
            .unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].tokens.is_empty());
        assert_eq!(out[0].score, 0.0);
    }

    #[test]
    fn greedy_is_beam_of_one() {
        let m = model(7, 4);
        let enc = m.encoder().encode_full(&feats(21, 5)).unwrap();
        let g = greedy_search(&enc, &m, m.predictor(), FusionParams::default()).unwrap();
        let b = beam_search(&enc, &m, m.predictor(), FusionParams::default(), BeamConfig::greedy()).unwrap();
        assert_eq!(g.tokens, b[0].tokens);
        assert_eq!(g.score, b[0].score);
    }

    #[test]
    fn nbest_is_distinct_and_ranked() {
        let m = model(7, 6);
        let enc = m.encoder().encode_full(&feats(25, 7)).unwrap();
        let nb = beam_search(&enc, &m, m.predictor(), FusionParams::default(), BeamConfig::default()).unwrap();
        assert_eq!(nb.len(), 4);
        for w in nb.windows(2) {
            assert!(w[0].score >= w[1].score);
            assert_ne!(w[0].tokens, w[1].tokens);
        }
        let bad = BeamConfig {
            beam: 2,
            nbest: 3,
            ..Default::default()
        };
        assert!(beam_search(&enc, &m, m.predictor(), FusionParams::default(), bad).is_err());
    }

    #[test]
    fn streaming_matches_offline() {
        let m = model(6, 8);
        let f = feats(37, 9);
        let fp = FusionParams::default();
        let cfg = BeamConfig::default();
        let offline = beam_search(&m.encoder().encode_full(&f).unwrap(), &m, m.predictor(), fp, cfg).unwrap();
        let mut s = StreamingSession::new(&m, m.predictor(), fp, cfg).unwrap();
        for start in (0..37).step_by(5) {
            s.push(&f.slice_rows(start, 5.min(37 - start))).unwrap();
        }
        let online = s.finalize().unwrap();
        assert_eq!(online[0].tokens, offline[0].tokens);
    }

    #[test]
    fn foreign_vocabulary_is_rejected() {
        let m = model(6, 1);
        let other = model(7, 1);
        assert!(matches!(
            BeamSearch::new(&m, other.predictor(), FusionParams::default(), BeamConfig::default()),
            Err(Error::VocabularyMismatch(_))
        ));
    }
}
