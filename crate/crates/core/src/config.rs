//! Declarative run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::decoding::{BeamConfig, FusionParams};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::lm::{LmDims, LmKind};
use crate::transducer::TransducerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSizes {
    /// ASR output vocabulary (shared by every predictor after adaptation).
    #[serde(default = "d_asr_vocab")]
    pub asr: usize,
    /// Native vocabulary of the large LM.
    #[serde(default = "d_lm_vocab")]
    pub lm: usize,
}

fn d_asr_vocab() -> usize {
    500
}
fn d_lm_vocab() -> usize {
    4000
}

impl Default for TokenizerSizes {
    fn default() -> Self {
        TokenizerSizes {
            asr: d_asr_vocab(),
            lm: d_lm_vocab(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBudget {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "d_clip")]
    pub clip_norm: Option<f64>,
    /// Use only the first `max_items` examples (all when absent).
    #[serde(default)]
    pub max_items: Option<usize>,
}

fn d_clip() -> Option<f64> {
    Some(5.0)
}

impl TrainBudget {
    fn new(epochs: usize, batch_size: usize, lr: f64) -> Self {
        TrainBudget {
            epochs,
            batch_size,
            lr,
            clip_norm: d_clip(),
            max_items: None,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || self.max_items == Some(0) {
            return Err(Error::Config(format!("{what}: batch_size, lr and max_items must be positive")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfigs {
    /// Embedding width of the stateless predictor used during FT training.
    #[serde(default = "d_weak")]
    pub weak_d: usize,
    #[serde(default = "d_small")]
    pub small: LmDims,
    #[serde(default = "d_strong")]
    pub strong: LmDims,
}

fn d_weak() -> usize {
    256
}
fn d_small() -> LmDims {
    LmDims::recurrent(256)
}
fn d_strong() -> LmDims {
    LmDims::transformer(256, 4, 4)
}

impl Default for PredictorConfigs {
    fn default() -> Self {
        PredictorConfigs {
            weak_d: d_weak(),
            small: d_small(),
            strong: d_strong(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfigs {
    #[serde(default = "d_small_lm")]
    pub small_lm: TrainBudget,
    #[serde(default = "d_strong_lm")]
    pub strong_lm: TrainBudget,
    /// Embedding/output refit after vocabulary adaptation.
    #[serde(default = "d_adapt")]
    pub adapt_finetune: TrainBudget,
    #[serde(default = "d_asr")]
    pub asr: TrainBudget,
    #[serde(default = "d_mwer")]
    pub mwer: TrainBudget,
}

fn d_small_lm() -> TrainBudget {
    TrainBudget::new(5, 32, 3e-3)
}
fn d_strong_lm() -> TrainBudget {
    TrainBudget::new(5, 32, 1e-3)
}
fn d_adapt() -> TrainBudget {
    TrainBudget::new(5, 32, 3e-3)
}
fn d_asr() -> TrainBudget {
    TrainBudget::new(30, 16, 1e-3)
}
fn d_mwer() -> TrainBudget {
    TrainBudget::new(1, 8, 1e-5)
}

impl Default for TrainingConfigs {
    fn default() -> Self {
        TrainingConfigs {
            small_lm: d_small_lm(),
            strong_lm: d_strong_lm(),
            adapt_finetune: d_adapt(),
            asr: d_asr(),
            mwer: d_mwer(),
        }
    }
}

/// MWER finetuning; N-best scoring uses the run's decode-time fusion weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MwerConfig {
    #[serde(default)]
    pub beam: BeamConfig,
    /// Weight of an added transducer-loss term (0 = pure MWER).
    #[serde(default)]
    pub rnnt_weight: f64,
}

impl Default for MwerConfig {
    fn default() -> Self {
        MwerConfig {
            beam: BeamConfig::default(),
            rnnt_weight: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "d_bench_sizes")]
    pub vocab_sizes: Vec<usize>,
    #[serde(default = "d_bench_steps")]
    pub steps: usize,
    #[serde(default = "d_bench_batch")]
    pub batch_size: usize,
}

fn d_bench_sizes() -> Vec<usize> {
    vec![500, 4000]
}
fn d_bench_steps() -> usize {
    5
}
fn d_bench_batch() -> usize {
    4
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            vocab_sizes: d_bench_sizes(),
            steps: d_bench_steps(),
            batch_size: d_bench_batch(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Where artifacts and `report.json` go, relative to the working directory.
    #[serde(default = "d_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub tokenizers: TokenizerSizes,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub transducer: TransducerConfig,
    #[serde(default)]
    pub predictors: PredictorConfigs,
    #[serde(default)]
    pub training: TrainingConfigs,
    #[serde(default)]
    pub fusion: FusionParams,
    #[serde(default)]
    pub beam: BeamConfig,
    #[serde(default)]
    pub mwer: MwerConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn d_out() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: d_out(),
            corpus: CorpusConfig::default(),
            tokenizers: TokenizerSizes::default(),
            encoder: EncoderConfig::default(),
            transducer: TransducerConfig::default(),
            predictors: PredictorConfigs::default(),
            training: TrainingConfigs::default(),
            fusion: FusionParams::default(),
            beam: BeamConfig::default(),
            mwer: MwerConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.language.validate()?;
        self.corpus.synthesis.validate()?;
        if [self.corpus.asr_train, self.corpus.asr_dev, self.corpus.asr_test, self.corpus.lm_sentences]
            .contains(&0)
        {
            return Err(Error::Config("corpus split sizes must be positive".into()));
        }
        self.encoder.validate()?;
        if self.encoder.d_feat != self.corpus.synthesis.d_feat {
            return Err(Error::Config(format!(
                "encoder.d_feat {} differs from corpus.synthesis.d_feat {}",
                self.encoder.d_feat, self.corpus.synthesis.d_feat
            )));
        }
        if self.tokenizers.asr < 2 || self.tokenizers.lm < 2 {
            return Err(Error::Config("tokenizer sizes must be ≥ 2".into()));
        }
        if self.transducer.lambda_ilm < 0.0 || self.transducer.d_blank == 0 || self.transducer.d_joint == 0 {
            return Err(Error::Config("transducer dims must be positive and lambda_ilm ≥ 0".into()));
        }
        if self.predictors.weak_d == 0 {
            return Err(Error::Config("predictors.weak_d must be positive".into()));
        }
        for (name, dims) in [("small", &self.predictors.small), ("strong", &self.predictors.strong)] {
            if dims.kind == LmKind::Stateless {
                return Err(Error::Config(format!("predictors.{name} must be a contextual LM")));
            }
            dims.validate()?;
        }
        let t = &self.training;
        t.small_lm.validate("training.small_lm")?;
        t.strong_lm.validate("training.strong_lm")?;
        t.adapt_finetune.validate("training.adapt_finetune")?;
        t.asr.validate("training.asr")?;
        t.mwer.validate("training.mwer")?;
        self.fusion.validate()?;
        self.beam.validate()?;
        if !(self.mwer.rnnt_weight >= 0.0) {
            return Err(Error::Config("mwer.rnnt_weight must be ≥ 0".into()));
        }
        self.mwer.beam.validate()?;
        if self.mwer.beam.nbest < 2 {
            return Err(Error::Config("mwer.beam.nbest must be ≥ 2".into()));
        }
        if self.bench.vocab_sizes.len() < 2 || self.bench.steps == 0 || self.bench.batch_size == 0 {
            return Err(Error::Config("bench needs two vocab sizes and positive steps/batch".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_settings() {
        let c = RunConfig::default();
        assert_eq!((c.fusion.alpha, c.fusion.beta), (0.6, 0.6));
        assert_eq!(c.beam.beam, 10);
        assert_eq!(crate::encoder::SUBSAMPLE, 4);
        c.validate().unwrap();
    }

    #[test]
    fn round_trip_is_idempotent() {
        let c = RunConfig::from_json(r#"{"seed": 5, "beam": {"beam": 3, "nbest": 2}}"#).unwrap();
        let once = c.to_json();
        let twice = RunConfig::from_json(&once).unwrap().to_json();
        assert_eq!(once, twice);
        assert_eq!(c.beam.beam, 3);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sede": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"beam": {"beams": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"beam": {"beam": 2, "nbest": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"encoder": {"d_feat": 7}}"#).is_err());
    }
}
