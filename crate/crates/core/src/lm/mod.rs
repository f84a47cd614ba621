//! Causal language models used as non-blank predictors.
//!
//! Three trunks share one container: a stateless order-1 predictor, a
//! single-layer gated recurrent LM and a pre-norm causal transformer. All
//! expose the same batched forward pass (for training) and the same
//! incremental [`LmState`] stepping (for beam search).

mod adapt;
mod train;

pub use adapt::{adapt_vocabulary, AdaptationReport};
pub use train::{finetune_with_early_stopping, perplexity, train_lm, LmTrainConfig};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{normal, AttnBlock, KvPrefix};
use crate::numerics::archive::{self, AnyTensor};
use crate::numerics::kernels::AttnSegment;
use crate::numerics::tensor::fnv1a;
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::tokenizer::{Vocabulary, BOS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmKind {
    Stateless,
    Recurrent,
    Transformer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmDims {
    pub kind: LmKind,
    pub d: usize,
    #[serde(default)]
    pub layers: usize,
    #[serde(default)]
    pub heads: usize,
    #[serde(default)]
    pub ff: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_max_len() -> usize {
    512
}

impl LmDims {
    pub fn stateless(d: usize) -> Self {
        LmDims {
            kind: LmKind::Stateless,
            d,
            layers: 0,
            heads: 0,
            ff: 0,
            max_len: default_max_len(),
        }
    }

    pub fn recurrent(d: usize) -> Self {
        LmDims {
            kind: LmKind::Recurrent,
            d,
            layers: 1,
            heads: 0,
            ff: 0,
            max_len: default_max_len(),
        }
    }

    pub fn transformer(d: usize, layers: usize, heads: usize) -> Self {
        LmDims {
            kind: LmKind::Transformer,
            d,
            layers,
            heads,
            ff: 4 * d,
            max_len: default_max_len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("LM width must be positive".into()));
        }
        if self.kind == LmKind::Transformer {
            if self.layers == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) || self.ff == 0 {
                return Err(Error::Config(format!(
                    "transformer LM needs layers ≥ 1 and d divisible by heads, got {self:?}"
                )));
            }
            if self.max_len == 0 {
                return Err(Error::Config("max_len must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Gru {
    wz: ParamId,
    uz: ParamId,
    bz: ParamId,
    wr: ParamId,
    ur: ParamId,
    br: ParamId,
    wn: ParamId,
    un: ParamId,
    bn: ParamId,
}

#[derive(Clone, Debug)]
enum Trunk {
    Stateless,
    Recurrent(Gru),
    Transformer {
        pos: ParamId,
        blocks: Vec<AttnBlock>,
        lnf_g: ParamId,
        lnf_b: ParamId,
    },
}

/// A causal LM over a fixed vocabulary. Embedding (`emb`) and output
/// (`out`) matrices are separate `[|V| × d]` tensors.
#[derive(Clone, Debug)]
pub struct LanguageModel<S: Scalar> {
    dims: LmDims,
    vocab: Vocabulary,
    store: ParamStore<S>,
    emb: ParamId,
    out: ParamId,
    trunk: Trunk,
}

/// Incremental decoding state. Only valid for the model that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct LmState<S> {
    owner: u64,
    consumed: usize,
    inner: StateInner<S>,
}

#[derive(Clone, Debug, PartialEq)]
enum StateInner<S> {
    Stateless { last: Option<usize> },
    Recurrent { h: Tensor<S> },
    Transformer { k: Vec<Tensor<S>>, v: Vec<Tensor<S>> },
}

impl<S> LmState<S> {
    /// Number of tokens consumed so far (BOS included).
    pub fn consumed(&self) -> usize {
        self.consumed
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    dims: LmDims,
    vocabulary: String,
    vocab_size: usize,
    trunk_frozen: bool,
}

pub fn is_trunk_param(name: &str) -> bool {
    name.starts_with("trunk.")
}

impl<S: Scalar> LanguageModel<S> {
    pub fn new(dims: LmDims, vocab: Vocabulary, seed: u64) -> Result<Self> {
        dims.validate()?;
        let v = vocab.len();
        let d = dims.d;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let emb = store.add("emb", normal(&[v, d], 0.3, &mut rng));
        let trunk = match dims.kind {
            LmKind::Stateless => Trunk::Stateless,
            LmKind::Recurrent => {
                let std = 1.0 / (d as f64).sqrt();
                let mut add = |n: &str, t| store.add(format!("trunk.0.{n}"), t);
                Trunk::Recurrent(Gru {
                    wz: add("wz", normal(&[d, d], std, &mut rng)),
                    uz: add("uz", normal(&[d, d], std, &mut rng)),
                    bz: add("bz", Tensor::zeros(&[d])),
                    wr: add("wr", normal(&[d, d], std, &mut rng)),
                    ur: add("ur", normal(&[d, d], std, &mut rng)),
                    br: add("br", Tensor::zeros(&[d])),
                    wn: add("wn", normal(&[d, d], std, &mut rng)),
                    un: add("un", normal(&[d, d], std, &mut rng)),
                    bn: add("bn", Tensor::zeros(&[d])),
                })
            }
            LmKind::Transformer => {
                let pos = store.add("trunk.pos", normal(&[dims.max_len, d], 0.1, &mut rng));
                let blocks = (0..dims.layers)
                    .map(|l| {
                        AttnBlock::new(
                            &mut store,
                            &format!("trunk.{l}"),
                            d,
                            dims.ff,
                            dims.layers,
                            &mut rng,
                        )
                    })
                    .collect();
                let lnf_g = store.add("trunk.final.g", Tensor::full(&[d], S::one()));
                let lnf_b = store.add("trunk.final.b", Tensor::zeros(&[d]));
                Trunk::Transformer {
                    pos,
                    blocks,
                    lnf_g,
                    lnf_b,
                }
            }
        };
        // a zero output matrix starts the stateless predictor at uniform
        let out_std = match dims.kind {
            LmKind::Stateless => 0.0,
            _ => 1.0 / (d as f64).sqrt(),
        };
        let out = store.add("out", normal(&[v, d], out_std, &mut rng));
        Ok(LanguageModel {
            dims,
            vocab,
            store,
            emb,
            out,
            trunk,
        })
    }

    pub fn dims(&self) -> &LmDims {
        &self.dims
    }

    pub fn kind(&self) -> LmKind {
        self.dims.kind
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    pub fn embedding(&self) -> &Tensor<S> {
        self.store.get(self.emb)
    }

    pub fn output(&self) -> &Tensor<S> {
        self.store.get(self.out)
    }

    pub fn set_trunk_frozen(&mut self, frozen: bool) {
        for p in self.store.iter_mut() {
            p.frozen = frozen && is_trunk_param(&p.name);
        }
    }

    pub fn trunk_frozen(&self) -> bool {
        self.store
            .iter()
            .any(|p| is_trunk_param(&p.name) && p.frozen)
    }

    /// Checksum over trunk parameters only.
    pub fn trunk_checksum(&self) -> u64 {
        self.store.checksum_where(is_trunk_param)
    }

    fn fingerprint(&self) -> u64 {
        fnv1a(format!("{:?}/{}", self.dims, self.vocab.len()).as_bytes())
    }

    /// Batched forward pass. Returns `[Σ(len_i + 1) × |V|]` log-probabilities
    /// with the rows of sequence `i` contiguous from `offsets[i]`: row
    /// `offsets[i] + u` predicts the token after BOS + `seqs[i][..u]`.
    pub fn forward_batch<'p>(
        &'p self,
        tape: &mut Tape<'p, S>,
        seqs: &[&[usize]],
    ) -> Result<(Var, Vec<usize>)> {
        let mut offsets = Vec::with_capacity(seqs.len());
        let mut inputs = Vec::new();
        for s in seqs {
            offsets.push(inputs.len());
            inputs.push(BOS);
            inputs.extend_from_slice(s);
        }
        if inputs.is_empty() {
            return Err(Error::Empty("language model batch"));
        }
        let v = self.vocab.len();
        if let Some(&bad) = inputs.iter().find(|&&t| t >= v) {
            return Err(Error::TokenOutOfRange { id: bad, size: v });
        }
        let emb = self.store.bind(tape, self.emb);
        let hidden = match &self.trunk {
            Trunk::Stateless => tape.gather(emb, &inputs)?,
            Trunk::Recurrent(g) => self.gru_batch(tape, g, emb, seqs)?,
            Trunk::Transformer {
                pos,
                blocks,
                lnf_g,
                lnf_b,
            } => {
                let mut positions = Vec::with_capacity(inputs.len());
                let mut segs = Vec::with_capacity(seqs.len());
                for (s, &off) in seqs.iter().zip(&offsets) {
                    if s.len() + 1 > self.dims.max_len {
                        return Err(Error::InvalidArgument(format!(
                            "sequence of {} tokens exceeds LM context {}",
                            s.len() + 1,
                            self.dims.max_len
                        )));
                    }
                    positions.extend(0..=s.len());
                    segs.push(AttnSegment::self_attn(off, s.len() + 1, 1));
                }
                let e = tape.gather(emb, &inputs)?;
                let pt = self.store.bind(tape, *pos);
                let p = tape.gather(pt, &positions)?;
                let mut x = tape.add(e, p)?;
                for b in blocks {
                    x = b
                        .forward(&self.store, tape, x, self.dims.heads, segs.clone(), None)?
                        .y;
                }
                let (g, bb) = (self.store.bind(tape, *lnf_g), self.store.bind(tape, *lnf_b));
                tape.layer_norm(x, g, bb)?
            }
        };
        let out = self.store.bind(tape, self.out);
        let logits = tape.matmul_t(hidden, out)?;
        Ok((tape.log_softmax(logits), offsets))
    }

    fn gru_cell<'p>(&'p self, tape: &mut Tape<'p, S>, g: &Gru, x: [Var; 3], h: Var) -> Result<Var> {
        let p = |tape: &mut Tape<'p, S>, id| self.store.bind(tape, id);
        let (uz, ur, un) = (p(tape, g.uz), p(tape, g.ur), p(tape, g.un));
        let hz = tape.matmul(h, uz)?;
        let z = tape.add(x[0], hz)?;
        let z = tape.sigmoid(z);
        let hr = tape.matmul(h, ur)?;
        let r = tape.add(x[1], hr)?;
        let r = tape.sigmoid(r);
        let hn = tape.matmul(h, un)?;
        let rn = tape.mul(r, hn)?;
        let n = tape.add(x[2], rn)?;
        let n = tape.tanh(n);
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }

    fn gru_inputs<'p>(&'p self, tape: &mut Tape<'p, S>, g: &Gru, e: Var) -> Result<[Var; 3]> {
        let p = |tape: &mut Tape<'p, S>, id| self.store.bind(tape, id);
        let mut out = [e; 3];
        for (slot, (w, b)) in out.iter_mut().zip([(g.wz, g.bz), (g.wr, g.br), (g.wn, g.bn)]) {
            let (w, b) = (p(tape, w), p(tape, b));
            let xw = tape.matmul(e, w)?;
            *slot = tape.add_row(xw, b)?;
        }
        Ok(out)
    }

    fn gru_batch<'p>(
        &'p self,
        tape: &mut Tape<'p, S>,
        g: &Gru,
        emb: Var,
        seqs: &[&[usize]],
    ) -> Result<Var> {
        let b = seqs.len();
        let steps = seqs.iter().map(|s| s.len() + 1).max().unwrap_or(0);
        // time-major inputs, padded with BOS past each sequence end
        let mut ids = Vec::with_capacity(steps * b);
        for t in 0..steps {
            for s in seqs {
                ids.push(match t {
                    0 => BOS,
                    _ => s.get(t - 1).copied().unwrap_or(BOS),
                });
            }
        }
        let e = tape.gather(emb, &ids)?;
        let xs = self.gru_inputs(tape, g, e)?;
        let mut h = tape.constant(Tensor::zeros(&[b, self.dims.d]));
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = [
                tape.slice_rows(xs[0], t * b, b)?,
                tape.slice_rows(xs[1], t * b, b)?,
                tape.slice_rows(xs[2], t * b, b)?,
            ];
            h = self.gru_cell(tape, g, x, h)?;
            states.push(h);
        }
        let all = tape.concat_rows(&states)?;
        let mut order = Vec::new();
        for (i, s) in seqs.iter().enumerate() {
            order.extend((0..=s.len()).map(|t| t * b + i));
        }
        tape.gather(all, &order)
    }

    /// `[(len+1) × |V|]` log-probabilities for one token sequence.
    pub fn logprobs(&self, tokens: &[usize]) -> Result<Tensor<S>> {
        let mut tape = Tape::inference();
        let (lp, _) = self.forward_batch(&mut tape, &[tokens])?;
        Ok(tape.take(lp))
    }

    /// State before anything (not even BOS) has been consumed.
    pub fn initial_state(&self) -> LmState<S> {
        let inner = match &self.trunk {
            Trunk::Stateless => StateInner::Stateless { last: None },
            Trunk::Recurrent(_) => StateInner::Recurrent {
                h: Tensor::zeros(&[1, self.dims.d]),
            },
            Trunk::Transformer { blocks, .. } => StateInner::Transformer {
                k: vec![Tensor::zeros(&[0, self.dims.d]); blocks.len()],
                v: vec![Tensor::zeros(&[0, self.dims.d]); blocks.len()],
            },
        };
        LmState {
            owner: self.fingerprint(),
            consumed: 0,
            inner,
        }
    }

    /// Consumes `token` and returns the distribution over the next token.
    pub fn step(&self, state: &LmState<S>, token: usize) -> Result<(LmState<S>, Vec<S>)> {
        if state.owner != self.fingerprint() {
            return Err(Error::StateMismatch(format!(
                "state was produced by a different {:?} model",
                state_kind(&state.inner)
            )));
        }
        let v = self.vocab.len();
        if token >= v {
            return Err(Error::TokenOutOfRange { id: token, size: v });
        }
        let mut tape = Tape::inference();
        let emb = self.store.bind(&mut tape, self.emb);
        let (hidden, inner) = match (&self.trunk, &state.inner) {
            (Trunk::Stateless, StateInner::Stateless { .. }) => (
                tape.gather(emb, &[token])?,
                StateInner::Stateless { last: Some(token) },
            ),
            (Trunk::Recurrent(g), StateInner::Recurrent { h }) => {
                let e = tape.gather(emb, &[token])?;
                let x = self.gru_inputs(&mut tape, g, e)?;
                let h0 = tape.constant(h.clone());
                let h1 = self.gru_cell(&mut tape, g, x, h0)?;
                let h = tape.value(h1).clone();
                (h1, StateInner::Recurrent { h })
            }
            (
                Trunk::Transformer {
                    pos,
                    blocks,
                    lnf_g,
                    lnf_b,
                },
                StateInner::Transformer { k, v },
            ) => {
                let p = state.consumed;
                if p >= self.dims.max_len {
                    return Err(Error::InvalidArgument(format!(
                        "position {p} exceeds LM context {}",
                        self.dims.max_len
                    )));
                }
                let e = tape.gather(emb, &[token])?;
                let pt = self.store.bind(&mut tape, *pos);
                let pe = tape.gather(pt, &[p])?;
                let mut x = tape.add(e, pe)?;
                let seg = AttnSegment {
                    q_start: 0,
                    q_len: 1,
                    k_start: 0,
                    k_len: p + 1,
                    q_pos0: p,
                    chunk: 1,
                };
                let mut nk = Vec::with_capacity(blocks.len());
                let mut nv = Vec::with_capacity(blocks.len());
                for (l, b) in blocks.iter().enumerate() {
                    let o = b.forward(
                        &self.store,
                        &mut tape,
                        x,
                        self.dims.heads,
                        vec![seg.clone()],
                        Some(KvPrefix { k: &k[l], v: &v[l] }),
                    )?;
                    nk.push(Tensor::concat_rows(&[&k[l], tape.value(o.k)])?);
                    nv.push(Tensor::concat_rows(&[&v[l], tape.value(o.v)])?);
                    x = o.y;
                }
                let (g, bb) = (
                    self.store.bind(&mut tape, *lnf_g),
                    self.store.bind(&mut tape, *lnf_b),
                );
                (
                    tape.layer_norm(x, g, bb)?,
                    StateInner::Transformer { k: nk, v: nv },
                )
            }
            _ => {
                return Err(Error::StateMismatch(format!(
                    "{:?} state given to a {:?} model",
                    state_kind(&state.inner),
                    self.dims.kind
                )))
            }
        };
        let out = self.store.bind(&mut tape, self.out);
        let logits = tape.matmul_t(hidden, out)?;
        let lp = tape.log_softmax(logits);
        let row = tape.take(lp).into_data();
        Ok((
            LmState {
                owner: state.owner,
                consumed: state.consumed + 1,
                inner,
            },
            row,
        ))
    }

    /// Writes `<path>.fsta`, `<path>.vocab` and the `<path>.json` manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(String, AnyTensor)> = self
            .store
            .iter()
            .map(|p| (p.name.clone(), AnyTensor::from_tensor(&p.value)))
            .collect();
        archive::write(&path.with_extension("fsta"), &entries)?;
        let vocab_path = path.with_extension("vocab");
        self.vocab.save(&vocab_path)?;
        let sidecar = Sidecar {
            dims: self.dims.clone(),
            vocabulary: vocab_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            vocab_size: self.vocab.len(),
            trunk_frozen: self.trunk_frozen(),
        };
        let json_path = path.with_extension("json");
        std::fs::write(&json_path, serde_json::to_string_pretty(&sidecar)?)
            .map_err(|e| Error::io(&json_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json_path = path.with_extension("json");
        if !json_path.exists() {
            return Err(Error::MissingArtifact(json_path));
        }
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let vocab = Vocabulary::load(&dir.join(&sidecar.vocabulary))?;
        if vocab.len() != sidecar.vocab_size {
            return Err(Error::Archive(format!(
                "manifest says {} tokens, vocabulary file has {}",
                sidecar.vocab_size,
                vocab.len()
            )));
        }
        let mut lm = LanguageModel::new(sidecar.dims, vocab, 0)?;
        lm.store.load(&archive::read_map(&path.with_extension("fsta"))?)?;
        lm.set_trunk_frozen(sidecar.trunk_frozen);
        Ok(lm)
    }

    /// Same trunk, new vocabulary and `emb`/`out` matrices.
    pub(crate) fn with_vocabulary(&self, vocab: Vocabulary, emb: Tensor<S>, out: Tensor<S>) -> Self {
        let mut lm = self.clone();
        lm.vocab = vocab;
        *lm.store.get_mut(lm.emb) = emb;
        *lm.store.get_mut(lm.out) = out;
        lm
    }
}

fn state_kind<S>(s: &StateInner<S>) -> LmKind {
    match s {
        StateInner::Stateless { .. } => LmKind::Stateless,
        StateInner::Recurrent { .. } => LmKind::Recurrent,
        StateInner::Transformer { .. } => LmKind::Transformer,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> Vocabulary {
        let mut toks = vec!["<bos>".to_string(), "<unk>".to_string()];
        toks.extend((0..n - 2).map(|i| format!("t{i}")));
        Vocabulary::from_tokens(toks).unwrap()
    }

    fn models() -> Vec<LanguageModel<f64>> {
        let mut small = LmDims::transformer(16, 2, 2);
        small.max_len = 80;
        vec![
            LanguageModel::new(LmDims::stateless(8), vocab(7), 1).unwrap(),
            LanguageModel::new(LmDims::recurrent(12), vocab(7), 2).unwrap(),
            LanguageModel::new(small, vocab(7), 3).unwrap(),
        ]
    }

    #[test]
    fn zero_projection_is_uniform() {
        let lm = LanguageModel::<f64>::new(LmDims::stateless(4), vocab(6), 9).unwrap();
        let lp = lm.logprobs(&[2, 3, 4]).unwrap();
        assert_eq!(lp.shape(), &[4, 6]);
        for &x in lp.data() {
            assert!((x + 6f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_are_normalized_and_causal() {
        let seq = [2, 3, 4, 5, 6, 2, 3];
        for lm in models() {
            let lp = lm.logprobs(&seq).unwrap();
            for r in 0..lp.rows() {
                let s: f64 = lp.row(r).iter().map(|x| x.exp()).sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
            for u in 0..seq.len() {
                let mut alt = seq;
                alt[u] = if seq[u] == 2 { 3 } else { 2 };
                let lp2 = lm.logprobs(&alt).unwrap();
                for r in 0..=u {
                    assert_eq!(lp.row(r), lp2.row(r), "{:?} row {r} saw token {u}", lm.kind());
                }
            }
        }
    }

    #[test]
    fn batched_rows_match_single_sequences() {
        let seqs: Vec<Vec<usize>> = vec![vec![2, 3], vec![], vec![4, 5, 6, 2]];
        for lm in models() {
            let mut tape = Tape::inference();
            let refs: Vec<&[usize]> = seqs.iter().map(|s| s.as_slice()).collect();
            let (lp, offs) = lm.forward_batch(&mut tape, &refs).unwrap();
            let all = tape.value(lp);
            for (s, &o) in seqs.iter().zip(&offs) {
                let single = lm.logprobs(s).unwrap();
                for r in 0..=s.len() {
                    for (a, b) in all.row(o + r).iter().zip(single.row(r)) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn stepping_matches_full_forward() {
        let seq: Vec<usize> = (0..64).map(|i| 2 + (i * 7 + i / 3) % 5).collect();
        for lm in models() {
            let full = lm.logprobs(&seq).unwrap();
            let (mut st, row) = lm.step(&lm.initial_state(), BOS).unwrap();
            let mut worst = row
                .iter()
                .zip(full.row(0))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            for (u, &t) in seq.iter().enumerate() {
                let (next, row) = lm.step(&st, t).unwrap();
                st = next;
                for (a, b) in row.iter().zip(full.row(u + 1)) {
                    worst = worst.max((a - b).abs());
                }
            }
            assert!(worst <= 1e-5, "{:?}: {worst}", lm.kind());
        }
    }

    #[test]
    fn stateless_state_depends_on_last_token_only() {
        let lm = &models()[0];
        let run = |toks: &[usize]| {
            let mut st = lm.step(&lm.initial_state(), BOS).unwrap().0;
            for &t in toks {
                st = lm.step(&st, t).unwrap().0;
            }
            st
        };
        assert_eq!(run(&[2, 3, 4]), run(&[5, 6, 4]));
    }

    #[test]
    fn foreign_state_is_rejected() {
        let ms = models();
        let st = ms[2].initial_state();
        assert!(matches!(ms[1].step(&st, BOS), Err(Error::StateMismatch(_))));
        assert!(matches!(
            ms[0].step(&ms[0].initial_state(), 99),
            Err(Error::TokenOutOfRange { .. })
        ));
        assert!(ms[0].logprobs(&[7]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (i, mut lm) in models().into_iter().enumerate() {
            lm.set_trunk_frozen(true);
            let path = dir.path().join(format!("lm{i}"));
            lm.save(&path).unwrap();
            let back = LanguageModel::<f64>::load(&path).unwrap();
            assert_eq!(back.store().checksum(), lm.store().checksum());
            assert_eq!(back.trunk_frozen(), lm.kind() != LmKind::Stateless);
            assert_eq!(back.vocab(), lm.vocab());
        }
    }
}
