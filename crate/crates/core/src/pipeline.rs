//! The staged recipe over one run directory.
//!
//! Stages communicate only through files under the output directory, so
//! each can be rerun on its own from the artifacts of the previous ones.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{RunConfig, TrainBudget};
use crate::corpus::{build_corpus, compute_wer, load_split, mix, read_lines, read_manifest, SplitPlan, WerStats};
use crate::decoding::{BeamConfig, BeamSearch, FusionParams};
use crate::error::{Error, Result};
use crate::lm::{adapt_vocabulary, finetune_with_early_stopping, perplexity, train_lm, LanguageModel, LmDims, LmTrainConfig};
use crate::mwer::mwer_finetune_step;
use crate::numerics::{AdamConfig, OptimizerState, Tensor};
use crate::tokenizer::{train_subword, TokenizerModel, Vocabulary};
use crate::transducer::{FactorizedTransducer, Utterance};

/// Pipeline arithmetic runs in single precision.
type S = f32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Predictor {
    /// The stateless predictor the transducer was trained with.
    Weak,
    /// The recurrent LM trained on ASR tokens.
    Small,
    /// The adapted transformer LM.
    Strong,
}

impl FromStr for Predictor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(Predictor::Weak),
            "small" => Ok(Predictor::Small),
            "strong" => Ok(Predictor::Strong),
            _ => Err(Error::InvalidArgument(format!("unknown predictor {s:?}"))),
        }
    }
}

/// Which strong-predictor checkpoint to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Checkpoint {
    /// Right after the swap.
    Swap,
    /// After MWER finetuning.
    Mwer,
}

impl FromStr for Checkpoint {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swap" => Ok(Checkpoint::Swap),
            "mwer" => Ok(Checkpoint::Mwer),
            _ => Err(Error::InvalidArgument(format!("unknown checkpoint {s:?}"))),
        }
    }
}

/// A decodable system: predictor plus checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct System {
    pub predictor: Predictor,
    pub checkpoint: Checkpoint,
}

impl System {
    pub const WEAK: System = System {
        predictor: Predictor::Weak,
        checkpoint: Checkpoint::Swap,
    };
    pub const SMALL: System = System {
        predictor: Predictor::Small,
        checkpoint: Checkpoint::Swap,
    };
    pub const STRONG: System = System {
        predictor: Predictor::Strong,
        checkpoint: Checkpoint::Swap,
    };
    pub const STRONG_MWER: System = System {
        predictor: Predictor::Strong,
        checkpoint: Checkpoint::Mwer,
    };
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.predictor {
            Predictor::Weak => "weak",
            Predictor::Small => "small",
            Predictor::Strong => "strong",
        };
        match self.checkpoint {
            Checkpoint::Swap => write!(f, "{p}"),
            Checkpoint::Mwer => write!(f, "{p}_mwer"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecodeRecord {
    pub id: String,
    pub hyp: String,
    pub score: f64,
    pub nbest: Vec<NbestEntry>,
    pub frames: usize,
    pub emitted_tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NbestEntry {
    pub hyp: String,
    pub score: f64,
}

pub const EVAL_SPLITS: [&str; 2] = ["asr_dev", "asr_test"];

pub struct Pipeline {
    cfg: RunConfig,
    out: PathBuf,
    report: crate::report::RunReport,
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn adam(b: &TrainBudget) -> AdamConfig {
    AdamConfig {
        clip_norm: b.clip_norm,
        ..AdamConfig::with_lr(b.lr)
    }
}

fn take<T>(mut v: Vec<T>, max: Option<usize>) -> Vec<T> {
    if let Some(m) = max {
        v.truncate(m);
    }
    v
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Perplexity per word from a per-token perplexity.
fn word_perplexity(token_ppl: f64, tokens: usize, words: usize) -> f64 {
    (token_ppl.ln() * tokens as f64 / words.max(1) as f64).exp()
}

fn count_words(lines: &[String]) -> usize {
    lines.iter().map(|l| l.split_whitespace().count()).sum()
}

impl Pipeline {
    /// Opens (or starts) the run directory of `cfg`, keeping earlier stage
    /// results in the report.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.out_dir.clone();
        mkdir(&out)?;
        let report = crate::report::RunReport::open(&out.join("report.json"), &cfg)?;
        Ok(Pipeline { cfg, out, report })
    }

    /// Like [`Pipeline::new`] but discards any earlier report.
    pub fn fresh(cfg: RunConfig) -> Result<Self> {
        let mut p = Self::new(cfg)?;
        p.report = crate::report::RunReport::new(&p.cfg);
        Ok(p)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn report(&self) -> &crate::report::RunReport {
        &self.report
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn report_path(&self) -> PathBuf {
        self.out.join("report.json")
    }

    fn record(&mut self, stage: &str, metrics: Value, timing: Value) -> Result<()> {
        self.report.metrics.insert(stage.to_string(), metrics);
        self.report.timing.insert(stage.to_string(), timing);
        self.report.save(&self.report_path())
    }

    fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    fn path(&self, dir: &str, name: &str) -> PathBuf {
        self.out.join(dir).join(name)
    }

    fn tokenizer(&self, name: &str) -> Result<TokenizerModel> {
        let p = self.path("tokenizers", &format!("{name}.vocab"));
        if !p.exists() {
            return Err(Error::MissingArtifact(p));
        }
        Ok(TokenizerModel::new(Vocabulary::load(&p)?))
    }

    fn seed(&self, tag: u64) -> u64 {
        mix(&[self.cfg.seed, tag])
    }

    /// Synthesises the corpus.
    pub fn gen_data(&mut self) -> Result<Value> {
        let t = Instant::now();
        let plan = SplitPlan::contiguous(&self.cfg.corpus);
        let summary = build_corpus(&self.cfg.corpus, &plan, self.cfg.seed, &self.data_dir())?;
        let m = json!({ "summary": summary, "plan": plan });
        self.record("gen_data", m.clone(), json!({ "seconds": secs(t) }))?;
        Ok(m)
    }

    fn transcripts(&self, split: &str) -> Result<Vec<String>> {
        Ok(read_manifest(&self.data_dir().join(format!("{split}.tsv")))?
            .into_iter()
            .map(|e| e.transcript)
            .collect())
    }

    /// LM training text (LM-only sentences plus paired transcripts) and
    /// held-out sentences.
    fn lm_text(&self) -> Result<(Vec<String>, Vec<String>)> {
        let mut lines = read_lines(&self.data_dir().join("lm_text.txt"))?;
        let held = (lines.len() / 50).max(1).min(lines.len().saturating_sub(1));
        let heldout = lines.split_off(lines.len() - held);
        lines.extend(self.transcripts("asr_train")?);
        Ok((lines, heldout))
    }

    /// Trains the ASR tokenizer on paired transcripts and the LM tokenizer
    /// on the LM text.
    pub fn train_tokenizers(&mut self) -> Result<Value> {
        let t = Instant::now();
        let train = self.transcripts("asr_train")?;
        let (lm_lines, _) = self.lm_text()?;
        let asr = train_subword(&train, self.cfg.tokenizers.asr)?;
        let lm = train_subword(&lm_lines, self.cfg.tokenizers.lm)?;
        let dir = self.out.join("tokenizers");
        mkdir(&dir)?;
        asr.vocab().save(&dir.join("asr.vocab"))?;
        lm.vocab().save(&dir.join("lm.vocab"))?;
        let dev = self.transcripts("asr_dev")?;
        let words = count_words(&dev).max(1) as f64;
        let per_word = |tok: &TokenizerModel| dev.iter().map(|l| tok.encode(l).len()).sum::<usize>() as f64 / words;
        let shared = asr.vocab().tokens().iter().filter(|t| lm.vocab().contains(t)).count();
        let m = json!({
            "asr": { "size": asr.vocab().len(), "tokens_per_word": per_word(&asr) },
            "lm": { "size": lm.vocab().len(), "tokens_per_word": per_word(&lm) },
            "asr_tokens_in_lm_vocab": shared,
        });
        self.record("train_tokenizer", m.clone(), json!({ "seconds": secs(t) }))?;
        Ok(m)
    }

    fn lm_cfg(b: &TrainBudget, seed: u64) -> LmTrainConfig {
        LmTrainConfig {
            epochs: b.epochs,
            batch_size: b.batch_size,
            lr: b.lr,
            seed,
        }
    }

    fn encode_all(tok: &TokenizerModel, lines: &[String]) -> Vec<Vec<usize>> {
        lines.iter().map(|l| tok.encode(l)).collect()
    }

    fn train_one_lm(
        &self,
        dims: LmDims,
        tok: &TokenizerModel,
        budget: &TrainBudget,
        tag: u64,
        train: &[String],
        held: &[String],
    ) -> Result<(LanguageModel<S>, Value)> {
        let data = take(Self::encode_all(tok, train), budget.max_items);
        let held_ids = Self::encode_all(tok, held);
        let mut lm = LanguageModel::new(dims, tok.vocab().clone(), self.seed(tag))?;
        let curve = train_lm(&mut lm, &data, &Self::lm_cfg(budget, self.seed(tag + 1)))?;
        let ppl = perplexity(&lm, &held_ids)?;
        let tokens: usize = held_ids.iter().map(Vec::len).sum();
        let info = json!({
            "kind": lm.kind(),
            "parameters": lm.store().num_values(),
            "train_sentences": data.len(),
            "train_perplexity": curve,
            "heldout_perplexity": ppl,
            "heldout_word_perplexity": word_perplexity(ppl, tokens, count_words(held)),
        });
        Ok((lm, info))
    }

    /// Trains the small LM and the large LM (on its own vocabulary), plus an
    /// order-1 reference model that documents the source's context headroom.
    pub fn train_lms(&mut self) -> Result<Value> {
        let t = Instant::now();
        let asr = self.tokenizer("asr")?;
        let lmt = self.tokenizer("lm")?;
        let (train, held) = self.lm_text()?;
        let tr = &self.cfg.training;
        let p = &self.cfg.predictors;
        let (_, order1) =
            self.train_one_lm(LmDims::stateless(p.weak_d), &asr, &tr.small_lm, 100, &train, &held)?;
        let t_small = Instant::now();
        let (small, small_info) = self.train_one_lm(p.small.clone(), &asr, &tr.small_lm, 110, &train, &held)?;
        let small_secs = secs(t_small);
        let t_strong = Instant::now();
        let (strong, strong_info) = self.train_one_lm(p.strong.clone(), &lmt, &tr.strong_lm, 120, &train, &held)?;
        let strong_secs = secs(t_strong);
        let dir = self.out.join("lm");
        mkdir(&dir)?;
        small.save(&dir.join("small"))?;
        strong.save(&dir.join("strong_base"))?;
        let m = json!({ "order1_reference": order1, "small": small_info, "strong_base": strong_info });
        let timing = json!({ "seconds": secs(t), "small_seconds": small_secs, "strong_seconds": strong_secs });
        self.record("train_lm", m.clone(), timing)?;
        Ok(m)
    }

    /// Moves the large LM onto the ASR vocabulary and refits its embedding
    /// and output layers with early stopping; the trunk stays frozen.
    pub fn adapt_vocab(&mut self) -> Result<Value> {
        let t = Instant::now();
        let asr = self.tokenizer("asr")?;
        let lmt = self.tokenizer("lm")?;
        let base: LanguageModel<S> = LanguageModel::load(&self.path("lm", "strong_base"))?;
        let (mut lm, adaptation) = adapt_vocabulary(&base, &lmt, asr.vocab(), self.seed(130))?;
        let (train, held) = self.lm_text()?;
        let b = &self.cfg.training.adapt_finetune;
        let data = take(Self::encode_all(&asr, &train), b.max_items);
        let held_ids = Self::encode_all(&asr, &held);
        let trunk = lm.trunk_checksum();
        let history = finetune_with_early_stopping(&mut lm, &data, &held_ids, &Self::lm_cfg(b, self.seed(131)))?;
        let ppl = perplexity(&lm, &held_ids)?;
        let tokens: usize = held_ids.iter().map(Vec::len).sum();
        lm.save(&self.path("lm", "strong"))?;
        let m = json!({
            "adaptation": adaptation,
            "counts_sum": adaptation.copied + adaptation.mean + adaptation.random,
            "finetune_history": history.iter().map(|(a, b)| json!({"train": a, "heldout": b})).collect::<Vec<_>>(),
            "heldout_perplexity": ppl,
            "heldout_word_perplexity": word_perplexity(ppl, tokens, count_words(&held)),
            "trunk_unchanged": lm.trunk_checksum() == trunk,
        });
        self.record("adapt_vocab", m.clone(), json!({ "seconds": secs(t) }))?;
        Ok(m)
    }

    fn utterances(&self, split: &str, tok: &TokenizerModel, max: Option<usize>) -> Result<Vec<Utterance<S>>> {
        let rows = take(load_split::<S>(&self.data_dir(), split)?, max);
        Ok(rows
            .into_iter()
            .map(|(e, features)| Utterance {
                targets: tok.encode(&e.transcript),
                id: e.id,
                features,
            })
            .collect())
    }

    fn batches(&self, n: usize, batch: usize, tag: u64, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(&[self.cfg.seed, tag, epoch as u64])));
        order.chunks(batch).map(<[usize]>::to_vec).collect()
    }

    /// Non-blank score elements T·(U+1)·|V| of one utterance's lattice.
    pub fn lattice_elements(utt: &Utterance<S>, vocab: usize) -> usize {
        let t = utt.features.rows() / crate::encoder::SUBSAMPLE;
        t * (utt.targets.len() + 1) * vocab
    }

    /// Trains the factorized transducer with the stateless predictor.
    pub fn train_asr(&mut self) -> Result<Value> {
        let asr = self.tokenizer("asr")?;
        let b = self.cfg.training.asr.clone();
        let utts = self.utterances("asr_train", &asr, b.max_items)?;
        let weak = LanguageModel::new(LmDims::stateless(self.cfg.predictors.weak_d), asr.vocab().clone(), self.seed(200))?;
        let mut model = FactorizedTransducer::new(
            self.cfg.encoder.clone(),
            self.cfg.transducer.clone(),
            weak,
            self.seed(201),
        )?;
        let dev = self.utterances("asr_dev", &asr, None)?;
        let (m, timing) =
            train_transducer(&mut model, &utts, &dev, &b, |e| self.batches(utts.len(), b.batch_size, 202, e))?;
        let dir = self.out.join("models");
        mkdir(&dir)?;
        model.save(&dir.join("ft_weak"))?;
        model.predictor().save(&dir.join("ft_weak_predictor"))?;
        self.record("train_asr", m.clone(), timing)?;
        Ok(m)
    }

    /// Replaces the stateless predictor with the adapted LM, leaving every
    /// acoustic-side parameter untouched.
    pub fn swap_lm(&mut self) -> Result<Value> {
        let t = Instant::now();
        let weak = LanguageModel::load(&self.path("models", "ft_weak_predictor"))?;
        let mut model: FactorizedTransducer<S> = FactorizedTransducer::load(&self.path("models", "ft_weak"), weak)?;
        let before = model.acoustic_checksum();
        let strong = LanguageModel::load(&self.path("lm", "strong"))?;
        let old = model.swap_predictor(strong)?;
        let after = model.acoustic_checksum();
        if before != after {
            return Err(Error::CheckFailed("swap altered acoustic parameters".into()));
        }
        model.save(&self.path("models", "ft_swapped"))?;
        model.predictor().save(&self.path("models", "ft_swapped_predictor"))?;
        let m = json!({
            "acoustic_checksum": format!("{before:016x}"),
            "acoustic_unchanged": before == after,
            "old_predictor": old.kind(),
            "new_predictor": model.predictor().kind(),
            "trunk_frozen": model.predictor().trunk_frozen(),
        });
        self.record("swap_lm", m.clone(), json!({ "seconds": secs(t) }))?;
        Ok(m)
    }

    /// MWER finetuning of the swapped model with decode-time fusion weights.
    pub fn mwer_finetune(&mut self) -> Result<Value> {
        let t = Instant::now();
        let asr = self.tokenizer("asr")?;
        let mut model = self.load_system(System::STRONG)?;
        let trunk = model.predictor().trunk_checksum();
        let b = self.cfg.training.mwer.clone();
        let utts = self.utterances("asr_train", &asr, b.max_items)?;
        let mut opt = OptimizerState::new(adam(&b));
        let (fp, beam, w) = (self.cfg.fusion, self.cfg.mwer.beam, self.cfg.mwer.rnnt_weight);
        let mut epochs = Vec::new();
        let (mut steps, mut updates, mut max_gap) = (0usize, 0usize, 0f64);
        for e in 0..b.epochs {
            let (mut loss, mut oracle, mut in_nbest, mut n) = (0.0, 0.0, 0.0, 0usize);
            for idx in self.batches(utts.len(), b.batch_size, 300, e) {
                let batch: Vec<&Utterance<S>> = idx.iter().map(|&i| &utts[i]).collect();
                let met = mwer_finetune_step(&mut model, &asr, &batch, fp, beam, w, &mut opt)?;
                steps += 1;
                updates += usize::from(met.updated);
                loss += met.loss;
                oracle += met.oracle_wer;
                in_nbest += met.reference_in_nbest;
                max_gap = max_gap.max(met.max_rescore_gap);
                n += 1;
            }
            let n = n.max(1) as f64;
            epochs.push(json!({ "loss": loss / n, "oracle_wer": oracle / n, "reference_in_nbest": in_nbest / n }));
        }
        model.save(&self.path("models", "ft_mwer"))?;
        model.predictor().save(&self.path("models", "ft_mwer_predictor"))?;
        let m = json!({
            "epochs": epochs,
            "steps": steps,
            "updates": updates,
            "max_rescore_gap": max_gap,
            "trunk_unchanged": model.predictor().trunk_checksum() == trunk,
        });
        let el = secs(t);
        self.record("mwer_finetune", m.clone(), json!({ "seconds": el, "steps_per_second": steps as f64 / el }))?;
        Ok(m)
    }

    /// Loads a system from the run directory.
    pub fn load_system(&self, sys: System) -> Result<FactorizedTransducer<S>> {
        let (acoustic, predictor) = match (sys.predictor, sys.checkpoint) {
            (Predictor::Weak, Checkpoint::Swap) => ("ft_weak", self.path("models", "ft_weak_predictor")),
            (Predictor::Small, Checkpoint::Swap) => ("ft_weak", self.path("lm", "small")),
            (Predictor::Strong, Checkpoint::Swap) => ("ft_swapped", self.path("models", "ft_swapped_predictor")),
            (Predictor::Strong, Checkpoint::Mwer) => ("ft_mwer", self.path("models", "ft_mwer_predictor")),
            (_, Checkpoint::Mwer) => {
                return Err(Error::InvalidArgument("only the strong predictor has an MWER checkpoint".into()))
            }
        };
        let lm = LanguageModel::load(&predictor)?;
        FactorizedTransducer::load(&self.path("models", acoustic), lm)
    }

    /// Decodes `split` with `sys`, writes `decode/<system>_<split>.jsonl` and
    /// returns the pooled WER.
    pub fn decode(&mut self, sys: System, split: &str) -> Result<WerStats> {
        let t = Instant::now();
        let asr = self.tokenizer("asr")?;
        let model = self.load_system(sys)?;
        let utts = self.utterances(split, &asr, None)?;
        let records = decode_utterances(&model, &asr, &utts, self.cfg.fusion, self.cfg.beam)?;
        let refs: Vec<String> = utts.iter().map(|u| asr.decode(&u.targets)).collect::<Result<_>>()?;
        let hyps: Vec<String> = records.iter().map(|r| r.hyp.clone()).collect();
        let wer = compute_wer(&hyps, &refs)?;
        let dir = self.out.join("decode");
        mkdir(&dir)?;
        let mut jsonl = String::new();
        for r in &records {
            jsonl.push_str(&serde_json::to_string(r)?);
            jsonl.push('\n');
        }
        let p = dir.join(format!("{sys}_{split}.jsonl"));
        fs::write(&p, jsonl).map_err(|e| Error::io(&p, e))?;
        let el = secs(t);
        let frames: usize = records.iter().map(|r| r.frames).sum();
        self.record(
            &format!("decode_{sys}_{split}"),
            json!({ "wer": wer, "utterances": records.len() }),
            json!({ "seconds": el, "frames_per_second": frames as f64 / el }),
        )?;
        Ok(wer)
    }

    /// Decodes dev and test with every available system and summarises the
    /// weak-to-strong comparison.
    pub fn evaluate(&mut self) -> Result<Value> {
        let t = Instant::now();
        let mut systems = vec![System::WEAK, System::SMALL, System::STRONG];
        if self.path("models", "ft_mwer.json").exists() {
            systems.push(System::STRONG_MWER);
        }
        let mut table = serde_json::Map::new();
        let mut summary = serde_json::Map::new();
        for split in EVAL_SPLITS {
            let mut row = serde_json::Map::new();
            let mut w = std::collections::BTreeMap::new();
            for &sys in &systems {
                let st = self.decode(sys, split)?;
                w.insert(sys.to_string(), st.wer);
                row.insert(sys.to_string(), serde_json::to_value(st)?);
            }
            let (weak, small, strong) = (w["weak"], w["small"], w["strong"]);
            let mut s = json!({
                "ordered_weak_small_strong": weak > small && small > strong,
                "strong_relative_reduction": if weak > 0.0 { (weak - strong) / weak } else { 0.0 },
            });
            if let Some(&m) = w.get("strong_mwer") {
                s["mwer_relative_reduction"] = json!(if strong > 0.0 { (strong - m) / strong } else { 0.0 });
                s["mwer_improves"] = json!(m < strong);
            }
            table.insert(split.to_string(), Value::Object(row));
            summary.insert(split.to_string(), s);
        }
        let m = json!({ "wer": table, "summary": summary });
        self.record("evaluate", m.clone(), json!({ "seconds": secs(t) }))?;
        Ok(m)
    }

    /// The full recipe in order.
    pub fn run_all(&mut self) -> Result<()> {
        let t = Instant::now();
        self.gen_data()?;
        self.train_tokenizers()?;
        self.train_lms()?;
        self.train_asr()?;
        self.adapt_vocab()?;
        self.swap_lm()?;
        self.mwer_finetune()?;
        self.evaluate()?;
        self.report.timing.insert("run_all".into(), json!({ "seconds": secs(t) }));
        self.report.save(&self.report_path())
    }

    /// Trains the transducer for a fixed number of steps at each configured
    /// vocabulary size (the ASR vocabulary padded with unused tokens) and
    /// compares throughput.
    pub fn bench_vocab(&mut self) -> Result<Value> {
        let asr = self.tokenizer("asr")?;
        let bc = self.cfg.bench.clone();
        let utts = self.utterances("asr_train", &asr, Some(bc.batch_size))?;
        let batch: Vec<&Utterance<S>> = utts.iter().collect();
        let mut rows = Vec::new();
        let mut speeds = Vec::new();
        for &size in &bc.vocab_sizes {
            if size < asr.vocab().len() {
                return Err(Error::Config(format!(
                    "bench vocab size {size} is below the ASR vocabulary ({})",
                    asr.vocab().len()
                )));
            }
            let mut vocab = asr.vocab().clone();
            vocab.pad_to(size);
            let weak = LanguageModel::new(LmDims::stateless(self.cfg.predictors.weak_d), vocab, self.seed(400))?;
            let mut model = FactorizedTransducer::new(
                self.cfg.encoder.clone(),
                self.cfg.transducer.clone(),
                weak,
                self.seed(401),
            )?;
            let mut opt = OptimizerState::new(adam(&self.cfg.training.asr));
            let t = Instant::now();
            let mut last = 0.0;
            for _ in 0..bc.steps {
                last = model.train_step(&batch, &mut opt)?.objective;
            }
            let sps = bc.steps as f64 / secs(t);
            speeds.push(sps);
            let elements: usize = utts.iter().map(|u| Self::lattice_elements(u, size)).sum();
            rows.push(json!({
                "vocab_size": size,
                "lattice_elements_per_batch": elements,
                "final_objective": last,
            }));
        }
        let faster = speeds.windows(2).all(|w| w[0] > w[1]);
        let m = json!({ "sizes": rows, "steps": bc.steps });
        let timing = json!({
            "steps_per_second": speeds,
            "speed_ratio_first_to_last": speeds[0] / speeds[speeds.len() - 1],
            "smaller_vocab_faster": faster,
        });
        self.record("bench_vocab", m.clone(), timing.clone())?;
        if !faster {
            return Err(Error::CheckFailed(format!("smaller vocabulary was not faster: {speeds:?}")));
        }
        Ok(json!({ "metrics": m, "timing": timing }))
    }
}

/// Epoch loop with a held-out loss after every epoch. Returns deterministic
/// metrics and wall-clock figures.
fn train_transducer(
    model: &mut FactorizedTransducer<S>,
    utts: &[Utterance<S>],
    dev: &[Utterance<S>],
    b: &TrainBudget,
    order: impl Fn(usize) -> Vec<Vec<usize>>,
) -> Result<(Value, Value)> {
    let dev: Vec<&Utterance<S>> = dev.iter().collect();
    let t = Instant::now();
    let v = model.vocab().len();
    let mut opt = OptimizerState::new(adam(b));
    let mut epochs = Vec::new();
    let (mut steps, mut tokens, mut peak) = (0usize, 0usize, 0usize);
    for e in 0..b.epochs {
        let (mut obj, mut rnnt, mut ilm, mut gn, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for idx in order(e) {
            let batch: Vec<&Utterance<S>> = idx.iter().map(|&i| &utts[i]).collect();
            let met = model.train_step(&batch, &mut opt)?;
            peak = peak.max(batch.iter().map(|u| Pipeline::lattice_elements(u, v)).sum());
            tokens += batch.iter().map(|u| u.targets.len()).sum::<usize>();
            obj += met.objective;
            rnnt += met.rnnt_loss;
            ilm += met.ilm_loss;
            gn += met.grad_norm;
            n += 1;
            steps += 1;
        }
        let n = n.max(1) as f64;
        let (dev_rnnt, dev_ilm) = model.evaluate_loss(&dev)?;
        epochs.push(json!({
            "objective": obj / n,
            "rnnt_loss": rnnt / n,
            "ilm_loss": ilm / n,
            "grad_norm": gn / n,
            "dev_rnnt_loss": dev_rnnt,
            "dev_ilm_loss": dev_ilm,
        }));
    }
    let el = secs(t);
    let metrics = json!({
        "epochs": epochs,
        "steps": steps,
        "utterances": utts.len(),
        "vocab_size": v,
        "peak_lattice_elements": peak,
        "peak_lattice_bytes_estimate": peak * std::mem::size_of::<S>(),
    });
    let timing = json!({
        "seconds": el,
        "steps_per_second": steps as f64 / el,
        "tokens_per_second": tokens as f64 / el,
    });
    Ok((metrics, timing))
}

/// Beam-searches each utterance over its chunked-causal encoding.
pub fn decode_utterances(
    model: &FactorizedTransducer<S>,
    tok: &TokenizerModel,
    utts: &[Utterance<S>],
    fp: FusionParams,
    beam: BeamConfig,
) -> Result<Vec<DecodeRecord>> {
    utts.iter()
        .map(|u| {
            let enc: Tensor<S> = model.encoder().encode_full(&u.features)?;
            let mut search = BeamSearch::new(model, model.predictor(), fp, beam)?;
            search.push_frames(&enc)?;
            let (frames, emitted) = (search.frames(), search.emitted_tokens());
            let nbest = search.finish();
            let nb: Vec<NbestEntry> = nbest
                .iter()
                .map(|h| {
                    Ok(NbestEntry {
                        hyp: tok.decode(&h.tokens)?,
                        score: h.score,
                    })
                })
                .collect::<Result<_>>()?;
            let (hyp, score) = nb.first().map(|e| (e.hyp.clone(), e.score)).unwrap_or_default();
            Ok(DecodeRecord {
                id: u.id.clone(),
                hyp,
                score,
                nbest: nb,
                frames,
                emitted_tokens: emitted,
            })
        })
        .collect()
}
