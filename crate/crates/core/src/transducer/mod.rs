//! Factorized transducer: a sigmoid blank head over (frame, last label),
//! and a non-blank distribution that renormalises the product of an
//! acoustic distribution and the predictor LM's distribution.

pub mod lattice;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::nn::normal;
use crate::numerics::archive::{self, AnyTensor};
use crate::numerics::logspace::{log_sigmoid_pair, log_softmax_into};
use crate::numerics::{GradMap, OptimizerState, ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::tokenizer::{Vocabulary, BOS};

use lattice::{joint, label_scores, transducer_nll};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransducerConfig {
    #[serde(default = "default_d_blank")]
    pub d_blank: usize,
    #[serde(default = "default_d_joint")]
    pub d_joint: usize,
    #[serde(default = "default_lambda")]
    pub lambda_ilm: f64,
    /// Cut the lattice gradient into the predictor so it learns from the
    /// auxiliary LM loss only.
    #[serde(default)]
    pub detach_ilm_in_lattice: bool,
}

fn default_d_blank() -> usize {
    64
}
fn default_d_joint() -> usize {
    128
}
fn default_lambda() -> f64 {
    0.2
}

impl Default for TransducerConfig {
    fn default() -> Self {
        TransducerConfig {
            d_blank: default_d_blank(),
            d_joint: default_d_joint(),
            lambda_ilm: default_lambda(),
            detach_ilm_in_lattice: false,
        }
    }
}

/// One paired training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance<S> {
    pub id: String,
    pub features: Tensor<S>,
    pub targets: Vec<usize>,
}

/// Plain-tensor view of every lattice quantity for one utterance.
#[derive(Clone, Debug)]
pub struct LatticeDistributions<S> {
    /// `[T × (U+1)]`
    pub log_pb: Tensor<S>,
    /// `[T × (U+1)]`
    pub log1m_pb: Tensor<S>,
    /// `[T × |V|]`, normalised per frame.
    pub log_ac: Tensor<S>,
    /// `[(U+1) × |V|]`, normalised per history length.
    pub log_ilm: Tensor<S>,
}

impl<S: Scalar> LatticeDistributions<S> {
    /// log P_nb of `targets[u]` at each `(t, u)`, `[T × U]`.
    pub fn label_grid(&self, targets: &[usize]) -> Result<Tensor<S>> {
        let (t_len, v) = (self.log_ac.rows(), self.log_ac.cols());
        let u_len = targets.len();
        if self.log_pb.cols() != u_len + 1 || self.log_ilm.rows() != u_len + 1 {
            return Err(Error::Shape(format!(
                "{} targets for a lattice of width {}",
                u_len,
                self.log_pb.cols()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&k| k >= v) {
            return Err(Error::TokenOutOfRange { id: bad, size: v });
        }
        let mut out = Tensor::zeros(&[t_len, u_len]);
        let mut row = vec![S::zero(); v];
        for t in 0..t_len {
            for (u, &k) in targets.iter().enumerate() {
                factorized_distribution(
                    self.log_ac.row(t),
                    self.log_ilm.row(u),
                    self.log1m_pb.at(t, u),
                    &mut row,
                )?;
                out.set(t, u, row[k]);
            }
        }
        Ok(out)
    }
}

/// `log1m_pb + log_softmax(ac + ilm)` into `out`.
pub fn factorized_distribution<S: Scalar>(ac: &[S], ilm: &[S], log1m_pb: S, out: &mut [S]) -> Result<()> {
    if ac.len() != ilm.len() || out.len() != ac.len() {
        return Err(Error::Shape(format!(
            "acoustic row {} vs LM row {} vs output {}",
            ac.len(),
            ilm.len(),
            out.len()
        )));
    }
    let sum: Vec<S> = ac.iter().zip(ilm).map(|(&a, &l)| a + l).collect();
    log_softmax_into(&sum, out);
    out.iter_mut().for_each(|x| *x += log1m_pb);
    Ok(())
}

/// Loss of the lattice with α(0,0) = 0 (0-based frames).
#[derive(Clone, Debug)]
pub struct RnntLoss<S> {
    pub loss: S,
    pub alpha: Tensor<S>,
}

pub fn rnnt_forward_loss<S: Scalar>(d: &LatticeDistributions<S>, targets: &[usize]) -> Result<RnntLoss<S>> {
    let label = d.label_grid(targets)?;
    let alpha = lattice::forward_alpha(&d.log_pb, &label)?;
    let (t, u) = (alpha.rows() - 1, alpha.cols() - 1);
    Ok(RnntLoss {
        loss: -(alpha.at(t, u) + d.log_pb.at(t, u)),
        alpha,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TrainMetrics {
    pub objective: f64,
    pub rnnt_loss: f64,
    pub ilm_loss: f64,
    pub grad_norm: f64,
}

/// Differentiable pieces of one utterance's lattice.
pub struct UttGraph {
    pub log_pb: Var,
    pub log1m_pb: Var,
    pub log_ac: Var,
    pub log_ilm: Var,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    encoder: EncoderConfig,
    transducer: TransducerConfig,
    vocabulary: String,
    vocab_size: usize,
}

#[derive(Clone, Debug)]
pub struct FactorizedTransducer<S: Scalar> {
    cfg: TransducerConfig,
    vocab: Vocabulary,
    encoder: Encoder<S>,
    head: ParamStore<S>,
    blank_emb: ParamId,
    joint_a: ParamId,
    joint_b: ParamId,
    joint_w: ParamId,
    ac_proj: ParamId,
    predictor: LanguageModel<S>,
}

impl<S: Scalar> FactorizedTransducer<S> {
    pub fn new(
        enc_cfg: EncoderConfig,
        cfg: TransducerConfig,
        predictor: LanguageModel<S>,
        seed: u64,
    ) -> Result<Self> {
        if cfg.d_blank == 0 || cfg.d_joint == 0 {
            return Err(Error::Config("blank head widths must be positive".into()));
        }
        if !(cfg.lambda_ilm.is_finite() && cfg.lambda_ilm >= 0.0) {
            return Err(Error::Config(format!("lambda_ilm {} must be ≥ 0", cfg.lambda_ilm)));
        }
        let encoder = Encoder::new(enc_cfg, seed)?;
        let d = encoder.config().d;
        let v = predictor.vocab_size();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut head = ParamStore::new();
        let blank_emb = head.add("blank.emb", normal(&[v, cfg.d_blank], 1.0, &mut rng));
        let joint_a = head.add(
            "blank.joiner.A",
            normal(&[d, cfg.d_joint], 1.0 / (d as f64).sqrt(), &mut rng),
        );
        let joint_b = head.add(
            "blank.joiner.B",
            normal(&[cfg.d_blank, cfg.d_joint], 1.0 / (cfg.d_blank as f64).sqrt(), &mut rng),
        );
        // zero combine vector: P_b starts at exactly one half
        let joint_w = head.add("blank.joiner.w", Tensor::zeros(&[cfg.d_joint]));
        let ac_proj = head.add("ac.proj", normal(&[v, d], 1.0 / (d as f64).sqrt(), &mut rng));
        Ok(FactorizedTransducer {
            cfg,
            vocab: predictor.vocab().clone(),
            encoder,
            head,
            blank_emb,
            joint_a,
            joint_b,
            joint_w,
            ac_proj,
            predictor,
        })
    }

    pub fn config(&self) -> &TransducerConfig {
        &self.cfg
    }

    pub fn config_mut(&mut self) -> &mut TransducerConfig {
        &mut self.cfg
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn encoder(&self) -> &Encoder<S> {
        &self.encoder
    }

    pub fn head(&self) -> &ParamStore<S> {
        &self.head
    }

    pub fn predictor(&self) -> &LanguageModel<S> {
        &self.predictor
    }

    pub fn predictor_mut(&mut self) -> &mut LanguageModel<S> {
        &mut self.predictor
    }

    pub fn stores(&self) -> [&ParamStore<S>; 3] {
        [self.encoder.store(), &self.head, self.predictor.store()]
    }

    pub fn stores_mut(&mut self) -> [&mut ParamStore<S>; 3] {
        [self.encoder.store_mut(), &mut self.head, self.predictor.store_mut()]
    }

    /// Checksum of everything except the predictor.
    pub fn acoustic_checksum(&self) -> u64 {
        self.encoder.store().checksum() ^ self.head.checksum().rotate_left(1)
    }

    /// Replaces the non-blank predictor, returning the old one. The new LM
    /// must use exactly the model's vocabulary.
    pub fn swap_predictor(&mut self, lm: LanguageModel<S>) -> Result<LanguageModel<S>> {
        if let Some(m) = self.vocab.first_mismatch(lm.vocab()) {
            return Err(Error::VocabularyMismatch(m));
        }
        Ok(std::mem::replace(&mut self.predictor, lm))
    }

    pub fn with_predictor(&self, lm: LanguageModel<S>) -> Result<Self> {
        let mut m = FactorizedTransducer {
            predictor: lm.clone(),
            ..self.clone()
        };
        m.swap_predictor(lm)?;
        Ok(m)
    }

    /// log P_ac for encoder rows `enc`.
    pub fn acoustic_logprobs<'p>(&'p self, tape: &mut Tape<'p, S>, enc: Var) -> Result<Var> {
        let w = self.head.bind(tape, self.ac_proj);
        let logits = tape.matmul_t(enc, w)?;
        Ok(tape.log_softmax(logits))
    }

    /// Blank logits `[T × len(history)]` for every frame and history entry.
    pub fn blank_logits<'p>(
        &'p self,
        tape: &mut Tape<'p, S>,
        enc: Var,
        history: &[usize],
    ) -> Result<Var> {
        let a = self.head.bind(tape, self.joint_a);
        let a = tape.matmul(enc, a)?;
        let emb = self.head.bind(tape, self.blank_emb);
        let e = tape.gather(emb, history)?;
        let b = self.head.bind(tape, self.joint_b);
        let b = tape.matmul(e, b)?;
        let w = self.head.bind(tape, self.joint_w);
        joint(tape, a, b, w)
    }

    /// Builds the lattice graphs of a batch.
    pub fn graph<'p>(&'p self, tape: &mut Tape<'p, S>, batch: &[&Utterance<S>]) -> Result<Vec<UttGraph>> {
        let feats: Vec<&Tensor<S>> = batch.iter().map(|u| &u.features).collect();
        let chunk = self.encoder.config().chunk_frames;
        let (enc, offsets) = self.encoder.forward(tape, &feats, chunk)?;
        let seqs: Vec<&[usize]> = batch.iter().map(|u| u.targets.as_slice()).collect();
        let (ilm_all, ilm_offsets) = self.predictor.forward_batch(tape, &seqs)?;
        let total = tape.value(enc).rows();
        let mut out = Vec::with_capacity(batch.len());
        for (i, utt) in batch.iter().enumerate() {
            let end = offsets.get(i + 1).copied().unwrap_or(total);
            let e = tape.slice_rows(enc, offsets[i], end - offsets[i])?;
            let log_ac = self.acoustic_logprobs(tape, e)?;
            let mut history = Vec::with_capacity(utt.targets.len() + 1);
            history.push(BOS);
            history.extend_from_slice(&utt.targets);
            let z = self.blank_logits(tape, e, &history)?;
            let log_pb = tape.log_sigmoid(z);
            let nz = tape.scale(z, -S::one());
            let log1m_pb = tape.log_sigmoid(nz);
            let log_ilm = tape.slice_rows(ilm_all, ilm_offsets[i], history.len())?;
            out.push(UttGraph {
                log_pb,
                log1m_pb,
                log_ac,
                log_ilm,
            });
        }
        Ok(out)
    }

    pub fn distributions(&self, utt: &Utterance<S>) -> Result<LatticeDistributions<S>> {
        let mut tape = Tape::inference();
        let g = self.graph(&mut tape, &[utt])?.remove(0);
        Ok(LatticeDistributions {
            log_pb: tape.value(g.log_pb).clone(),
            log1m_pb: tape.value(g.log1m_pb).clone(),
            log_ac: tape.value(g.log_ac).clone(),
            log_ilm: tape.value(g.log_ilm).clone(),
        })
    }

    /// Records `mean rnnt + λ · mean ilm` for a batch. Also returns the two
    /// means as plain numbers.
    pub fn objective<'p>(
        &'p self,
        tape: &mut Tape<'p, S>,
        batch: &[&Utterance<S>],
    ) -> Result<(Var, f64, f64)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let graphs = self.graph(tape, batch)?;
        let v = self.vocab.len();
        let mut rnnt = Vec::with_capacity(batch.len());
        let mut ilm = Vec::new();
        for (utt, g) in batch.iter().zip(&graphs) {
            let t_len = tape.value(g.log_ac).rows();
            let u_len = utt.targets.len();
            let lm_in = if self.cfg.detach_ilm_in_lattice {
                tape.detach(g.log_ilm)
            } else {
                g.log_ilm
            };
            let mut points = Vec::with_capacity(t_len * u_len);
            for t in 0..t_len {
                for (u, &k) in utt.targets.iter().enumerate() {
                    points.push((t, u, k));
                }
            }
            let nb = label_scores(tape, g.log_ac, lm_in, points, S::one(), S::zero())?;
            let mut idx = Vec::with_capacity(t_len * u_len);
            for t in 0..t_len {
                idx.extend((0..u_len).map(|u| t * (u_len + 1) + u));
            }
            let gate = tape.pick(g.log1m_pb, &idx);
            let label = tape.add(nb, gate)?;
            let label = tape.reshape(label, &[t_len, u_len])?;
            let (nll, _) = transducer_nll(tape, g.log_pb, label)?;
            let value = tape.value(nll).item().f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(utt.id.clone()));
            }
            rnnt.push(nll);
            if u_len > 0 {
                let picks: Vec<usize> = utt.targets.iter().enumerate().map(|(u, &k)| u * v + k).collect();
                let p = tape.pick(g.log_ilm, &picks);
                let m = tape.mean(p);
                ilm.push(tape.scale(m, -S::one()));
            }
        }
        let rv = tape.stack(&rnnt)?;
        let rnnt_mean = tape.mean(rv);
        let rnnt_value = tape.value(rnnt_mean).item().f64();
        let mut ilm_value = 0.0;
        let total = if ilm.is_empty() || self.cfg.lambda_ilm == 0.0 {
            if !ilm.is_empty() {
                let iv = tape.stack(&ilm)?;
                let im = tape.mean(iv);
                ilm_value = tape.value(im).item().f64();
            }
            rnnt_mean
        } else {
            let iv = tape.stack(&ilm)?;
            let im = tape.mean(iv);
            ilm_value = tape.value(im).item().f64();
            let weighted = tape.scale(im, S::of(self.cfg.lambda_ilm));
            tape.add(rnnt_mean, weighted)?
        };
        Ok((total, rnnt_value, ilm_value))
    }

    /// Mean transducer and ILM losses over `utts` without gradients.
    pub fn evaluate_loss(&self, utts: &[&Utterance<S>]) -> Result<(f64, f64)> {
        let (mut rnnt, mut ilm) = (0.0, 0.0);
        for chunk in utts.chunks(16) {
            let mut tape = Tape::new();
            let (_, r, i) = self.objective(&mut tape, chunk)?;
            rnnt += r * chunk.len() as f64;
            ilm += i * chunk.len() as f64;
        }
        let n = utts.len().max(1) as f64;
        Ok((rnnt / n, ilm / n))
    }

    /// Objective value and gradients of every trainable parameter.
    pub fn gradients(&self, batch: &[&Utterance<S>]) -> Result<(TrainMetrics, GradMap<S>)> {
        let mut tape = Tape::new();
        let (obj, rnnt_loss, ilm_loss) = self.objective(&mut tape, batch)?;
        let objective = tape.value(obj).item().f64();
        let g = tape.backward(obj)?;
        let mut grads = GradMap::new();
        for s in self.stores() {
            s.collect_grads(&g, &mut grads);
        }
        Ok((
            TrainMetrics {
                objective,
                rnnt_loss,
                ilm_loss,
                grad_norm: 0.0,
            },
            grads,
        ))
    }

    pub fn apply(&mut self, opt: &mut OptimizerState<S>, grads: &GradMap<S>) -> Result<f64> {
        let stats = opt.step(
            &mut [self.encoder.store_mut(), &mut self.head, self.predictor.store_mut()],
            grads,
        )?;
        Ok(stats.grad_norm)
    }

    /// One optimiser step on the transducer + ILM objective.
    pub fn train_step(&mut self, batch: &[&Utterance<S>], opt: &mut OptimizerState<S>) -> Result<TrainMetrics> {
        let (mut m, grads) = self.gradients(batch)?;
        m.grad_norm = self.apply(opt, &grads)?;
        Ok(m)
    }

    /// Plain-tensor tables for decoding: per-frame log P_ac and joiner
    /// projections for encoder rows `enc`.
    pub fn frame_tables(&self, enc: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let mut tape = Tape::inference();
        let e = tape.constant(enc.clone());
        let ac = self.acoustic_logprobs(&mut tape, e)?;
        let a = self.head.bind(&mut tape, self.joint_a);
        let a = tape.matmul(e, a)?;
        Ok((tape.take(ac), tape.take(a)))
    }

    /// Joiner projection of every label's blank embedding, `[|V| × d_joint]`.
    pub fn label_table(&self) -> Result<Tensor<S>> {
        let mut tape = Tape::inference();
        let emb = self.head.bind(&mut tape, self.blank_emb);
        let b = self.head.bind(&mut tape, self.joint_b);
        let r = tape.matmul(emb, b)?;
        Ok(tape.take(r))
    }

    /// `(log P_b, log(1 − P_b))` from joiner rows.
    pub fn blank_pair(&self, a_row: &[S], b_row: &[S]) -> Result<(S, S)> {
        let w = self.head.get(self.joint_w).data();
        let z: S = a_row
            .iter()
            .zip(b_row)
            .zip(w)
            .map(|((&a, &b), &w)| w * (a + b).tanh())
            .sum();
        log_sigmoid_pair(z)
    }

    /// Writes encoder and head parameters to `<path>.fsta` with a
    /// `<path>.json` manifest and `<path>.vocab`. The predictor is saved
    /// separately.
    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(String, AnyTensor)> = self
            .encoder
            .store()
            .iter()
            .chain(self.head.iter())
            .map(|p| (p.name.clone(), AnyTensor::from_tensor(&p.value)))
            .collect();
        archive::write(&path.with_extension("fsta"), &entries)?;
        let vocab_path = path.with_extension("vocab");
        self.vocab.save(&vocab_path)?;
        let sidecar = Sidecar {
            encoder: self.encoder.config().clone(),
            transducer: self.cfg.clone(),
            vocabulary: vocab_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            vocab_size: self.vocab.len(),
        };
        let json = path.with_extension("json");
        std::fs::write(&json, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&json, e))
    }

    pub fn load(path: &Path, predictor: LanguageModel<S>) -> Result<Self> {
        let json = path.with_extension("json");
        if !json.exists() {
            return Err(Error::MissingArtifact(json));
        }
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let vocab = Vocabulary::load(&dir.join(&sidecar.vocabulary))?;
        if let Some(m) = vocab.first_mismatch(predictor.vocab()) {
            return Err(Error::VocabularyMismatch(m));
        }
        let mut model = FactorizedTransducer::new(sidecar.encoder, sidecar.transducer, predictor, 0)?;
        let map = archive::read_map(&path.with_extension("fsta"))?;
        model.encoder.store_mut().load(&map)?;
        model.head.load(&map)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmDims;
    use crate::numerics::AdamConfig;
    use rand::Rng;

    fn vocab(n: usize) -> Vocabulary {
        let mut toks = vec!["<bos>".to_string(), "<unk>".to_string()];
        toks.extend((0..n - 2).map(|i| format!("t{i}")));
        Vocabulary::from_tokens(toks).unwrap()
    }

    fn tiny() -> FactorizedTransducer<f64> {
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
        let lm = LanguageModel::new(LmDims::stateless(4), vocab(5), 1).unwrap();
        FactorizedTransducer::new(enc, cfg, lm, 2).unwrap()
    }

    fn utt(t0: usize, targets: Vec<usize>, seed: u64) -> Utterance<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Utterance {
            id: format!("u{seed}"),
            features: Tensor::new(vec![t0, 3], (0..t0 * 3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap(),
            targets,
        }
    }

    #[test]
    fn zero_joiner_gives_half() {
        let m = tiny();
        let d = m.distributions(&utt(12, vec![2, 3], 1)).unwrap();
        assert_eq!(d.log_pb.shape(), &[3, 3]);
        for &x in d.log_pb.data() {
            assert_eq!(x, 0.5f64.ln());
        }
    }

    #[test]
    fn factorized_distribution_examples() {
        let u = vec![-(4f64.ln()); 4];
        let mut out = vec![0.0; 4];
        factorized_distribution(&u, &u, 0.5f64.ln(), &mut out).unwrap();
        for &x in &out {
            assert!((x - (0.5f64 / 4.0).ln()).abs() < 1e-12);
        }
        assert!(factorized_distribution(&u, &u[..3], 0.0, &mut out).is_err());
    }

    #[test]
    fn lattice_matches_tape_objective() {
        let mut m = tiny();
        m.config_mut().lambda_ilm = 0.0;
        let u = utt(11, vec![2, 4, 3], 3);
        let d = m.distributions(&u).unwrap();
        let direct = rnnt_forward_loss(&d, &u.targets).unwrap();
        let mut tape = Tape::new();
        let (obj, rnnt, _) = m.objective(&mut tape, &[&u]).unwrap();
        assert!((tape.value(obj).item() - direct.loss).abs() < 1e-12);
        assert_eq!(rnnt, direct.loss);
        assert_eq!(direct.alpha.at(0, 0), 0.0);
        assert!(direct.loss >= 0.0);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data: Vec<Utterance<f64>> = (0..6)
            .map(|i| {
                let tgt: Vec<usize> = (0..3).map(|j| 2 + (i + j) % 3).collect();
                let mut u = utt(10, tgt.clone(), 40 + i as u64);
                // make frames informative about labels
                for (j, &k) in tgt.iter().enumerate() {
                    for r in 0..3 {
                        u.features.set(j * 3 + r, k - 2, 3.0);
                    }
                }
                u
            })
            .collect();
        let run = || {
            let mut m = tiny();
            let mut opt = OptimizerState::new(AdamConfig::with_lr(0.02));
            let batch: Vec<&Utterance<f64>> = data.iter().collect();
            (0..60).map(|_| m.train_step(&batch, &mut opt).unwrap()).collect::<Vec<_>>()
        };
        let a = run();
        assert!(a.last().unwrap().rnnt_loss < 0.5 * a[0].rnnt_loss, "{:?}", (a[0], a[59]));
        assert_eq!(a, run());
    }

    #[test]
    fn swap_checks_vocabulary() {
        let mut m = tiny();
        let before = m.acoustic_checksum();
        let strong = LanguageModel::new(LmDims::recurrent(6), vocab(5), 3).unwrap();
        m.swap_predictor(strong).unwrap();
        assert_eq!(m.acoustic_checksum(), before);
        let mut toks = vocab(5).tokens().to_vec();
        toks.swap(2, 3);
        let shuffled = Vocabulary::from_tokens(toks).unwrap();
        let bad = LanguageModel::new(LmDims::stateless(4), shuffled, 3).unwrap();
        match m.swap_predictor(bad) {
            Err(Error::VocabularyMismatch(msg)) => assert!(msg.contains("t0") || msg.contains("t1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = tiny();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("asr");
        m.save(&p).unwrap();
        let back = FactorizedTransducer::load(&p, m.predictor().clone()).unwrap();
        assert_eq!(back.acoustic_checksum(), m.acoustic_checksum());
    }
}
