use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::LanguageModel;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::tokenizer::{TokenizerModel, Vocabulary, UNK};

/// How each target row was initialised.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AdaptationReport {
    pub target_size: usize,
    pub copied: usize,
    pub mean: usize,
    pub random: usize,
    pub copied_fraction: f64,
    pub mean_fraction: f64,
    pub random_fraction: f64,
    pub copied_tokens: Vec<String>,
    pub mean_tokens: Vec<String>,
    pub random_tokens: Vec<String>,
}

enum Init {
    Copy(usize),
    Mean(Vec<usize>),
    Random,
}

fn column_moments<S: Scalar>(m: &Tensor<S>) -> Vec<(f64, f64)> {
    let (rows, cols) = (m.rows(), m.cols());
    (0..cols)
        .map(|j| {
            let mean = (0..rows).map(|r| m.at(r, j).f64()).sum::<f64>() / rows as f64;
            let var = (0..rows)
                .map(|r| (m.at(r, j).f64() - mean).powi(2))
                .sum::<f64>()
                / rows as f64;
            (mean, var.sqrt())
        })
        .collect()
}

fn build_rows<S: Scalar>(
    src: &Tensor<S>,
    plan: &[Init],
    rng: &mut ChaCha8Rng,
) -> Tensor<S> {
    let d = src.cols();
    let moments = column_moments(src);
    let mut out = Tensor::zeros(&[plan.len(), d]);
    for (i, init) in plan.iter().enumerate() {
        let row = out.row_mut(i);
        match init {
            Init::Copy(j) => row.copy_from_slice(src.row(*j)),
            Init::Mean(ids) => {
                for &j in ids {
                    for (o, &x) in row.iter_mut().zip(src.row(j)) {
                        *o += x;
                    }
                }
                let n = S::of(ids.len() as f64);
                row.iter_mut().for_each(|o| *o /= n);
            }
            Init::Random => {
                for (o, &(mu, sigma)) in row.iter_mut().zip(&moments) {
                    *o = S::of(match Normal::new(mu, sigma) {
                        Ok(dist) if sigma > 0.0 => dist.sample(rng),
                        _ => mu,
                    });
                }
            }
        }
    }
    out
}

/// Retargets `src` (over the vocabulary of `src_tok`) to `target`.
///
/// Rows of tokens known to both vocabularies are copied; other tokens take
/// the unweighted mean of the rows their source segmentation yields (UNK
/// pieces ignored); tokens with no usable piece are drawn per column from
/// a normal matching that column's moments. Embedding and output matrices
/// are handled separately. The trunk is shared unchanged and frozen.
pub fn adapt_vocabulary<S: Scalar>(
    src: &LanguageModel<S>,
    src_tok: &TokenizerModel,
    target: &Vocabulary,
    seed: u64,
) -> Result<(LanguageModel<S>, AdaptationReport)> {
    let (emb, out) = (src.embedding(), src.output());
    if emb.cols() != out.cols() || emb.rows() != out.rows() {
        return Err(Error::Shape(format!(
            "embedding {:?} and output {:?} disagree",
            emb.shape(),
            out.shape()
        )));
    }
    if src_tok.vocab().len() != src.vocab_size() {
        return Err(Error::VocabularyMismatch(format!(
            "tokenizer has {} tokens, model has {}",
            src_tok.vocab().len(),
            src.vocab_size()
        )));
    }
    let mut report = AdaptationReport {
        target_size: target.len(),
        ..Default::default()
    };
    let plan: Vec<Init> = target
        .tokens()
        .iter()
        .map(|t| {
            if let Some(j) = src.vocab().id(t) {
                report.copied_tokens.push(t.clone());
                return Init::Copy(j);
            }
            let pieces: Vec<usize> = src_tok
                .encode_piece(t)
                .into_iter()
                .filter(|&p| p != UNK)
                .collect();
            if pieces.is_empty() {
                report.random_tokens.push(t.clone());
                Init::Random
            } else {
                report.mean_tokens.push(t.clone());
                Init::Mean(pieces)
            }
        })
        .collect();
    report.copied = report.copied_tokens.len();
    report.mean = report.mean_tokens.len();
    report.random = report.random_tokens.len();
    let n = target.len().max(1) as f64;
    report.copied_fraction = report.copied as f64 / n;
    report.mean_fraction = report.mean as f64 / n;
    report.random_fraction = report.random as f64 / n;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let new_emb = build_rows(emb, &plan, &mut rng);
    let new_out = build_rows(out, &plan, &mut rng);
    let mut lm = src.with_vocabulary(target.clone(), new_emb, new_out);
    lm.set_trunk_frozen(true);
    Ok((lm, report))
}
