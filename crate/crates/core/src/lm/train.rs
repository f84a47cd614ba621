use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LanguageModel;
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, GradMap, OptimizerState, Tape, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Summed next-token NLL over a batch, plus the number of predicted tokens.
pub(crate) fn batch_nll<'p, S: Scalar>(
    lm: &'p LanguageModel<S>,
    tape: &mut Tape<'p, S>,
    seqs: &[&[usize]],
) -> Result<(Var, usize)> {
    let (lp, offsets) = lm.forward_batch(tape, seqs)?;
    let v = lm.vocab_size();
    let mut idx = Vec::new();
    for (s, &off) in seqs.iter().zip(&offsets) {
        for (u, &t) in s.iter().enumerate() {
            idx.push((off + u) * v + t);
        }
    }
    let picked = tape.pick(lp, &idx);
    let total = tape.sum(picked);
    Ok((tape.scale(total, -S::one()), idx.len()))
}

fn check_corpus(corpus: &[Vec<usize>]) -> Result<()> {
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::Empty("language model corpus"));
    }
    Ok(())
}

/// exp(mean next-token NLL), BOS-conditioned, no end-of-sentence token.
pub fn perplexity<S: Scalar>(lm: &LanguageModel<S>, corpus: &[Vec<usize>]) -> Result<f64> {
    check_corpus(corpus)?;
    let mut nll = 0.0;
    let mut count = 0;
    for chunk in corpus.chunks(64) {
        let refs: Vec<&[usize]> = chunk.iter().map(|s| s.as_slice()).collect();
        let mut tape = Tape::inference();
        let (loss, n) = batch_nll(lm, &mut tape, &refs)?;
        nll += tape.value(loss).item().f64();
        count += n;
    }
    Ok((nll / count as f64).exp())
}

fn run_epoch<S: Scalar>(
    lm: &mut LanguageModel<S>,
    corpus: &[Vec<usize>],
    batch_size: usize,
    opt: &mut OptimizerState<S>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..corpus.len()).filter(|&i| !corpus[i].is_empty()).collect();
    order.shuffle(rng);
    let mut nll = 0.0;
    let mut count = 0;
    for batch in order.chunks(batch_size.max(1)) {
        let refs: Vec<&[usize]> = batch.iter().map(|&i| corpus[i].as_slice()).collect();
        let mut grads = GradMap::new();
        {
            let mut tape = Tape::new();
            let (loss, n) = batch_nll(lm, &mut tape, &refs)?;
            let value = tape.value(loss).item().f64();
            if !value.is_finite() {
                return Err(Error::NonFinite("language model loss".into()));
            }
            nll += value;
            count += n;
            let mean = tape.scale(loss, S::one() / S::of(n as f64));
            let g = tape.backward(mean)?;
            lm.store().collect_grads(&g, &mut grads);
        }
        opt.step(&mut [lm.store_mut()], &grads)?;
    }
    Ok((nll / count.max(1) as f64).exp())
}

/// Trains every non-frozen parameter; returns the running training
/// perplexity of each epoch.
pub fn train_lm<S: Scalar>(
    lm: &mut LanguageModel<S>,
    corpus: &[Vec<usize>],
    cfg: &LmTrainConfig,
) -> Result<Vec<f64>> {
    check_corpus(corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(AdamConfig::with_lr(cfg.lr));
    (0..cfg.epochs)
        .map(|_| run_epoch(lm, corpus, cfg.batch_size, &mut opt, &mut rng))
        .collect()
}

/// Epoch-wise training that stops once held-out perplexity fails to
/// improve (patience 1) and keeps the best parameters. Returns
/// `(train, held-out)` perplexity per completed epoch; entry 0 is the
/// held-out perplexity before any update.
pub fn finetune_with_early_stopping<S: Scalar>(
    lm: &mut LanguageModel<S>,
    corpus: &[Vec<usize>],
    heldout: &[Vec<usize>],
    cfg: &LmTrainConfig,
) -> Result<Vec<(f64, f64)>> {
    check_corpus(corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(AdamConfig::with_lr(cfg.lr));
    let mut best = perplexity(lm, heldout)?;
    let mut history = vec![(f64::NAN, best)];
    let mut best_store = lm.store().clone();
    for _ in 0..cfg.epochs {
        let train = run_epoch(lm, corpus, cfg.batch_size, &mut opt, &mut rng)?;
        let held = perplexity(lm, heldout)?;
        history.push((train, held));
        if held < best {
            best = held;
            best_store = lm.store().clone();
        } else {
            break;
        }
    }
    *lm.store_mut() = best_store;
    Ok(history)
}
