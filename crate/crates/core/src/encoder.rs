//! Streaming acoustic encoder: stride-4 frame stacking, a linear projection
//! with sinusoidal positions, then pre-norm attention blocks under a
//! chunked-causal mask.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{normal, sinusoid, AttnBlock, KvPrefix};
use crate::numerics::kernels::AttnSegment;
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

pub const SUBSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default = "default_feat")]
    pub d_feat: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_ff")]
    pub ff: usize,
    /// Chunk length in subsampled frames.
    #[serde(default = "default_chunk")]
    pub chunk_frames: usize,
}

fn default_feat() -> usize {
    80
}
fn default_d() -> usize {
    128
}
fn default_layers() -> usize {
    4
}
fn default_heads() -> usize {
    4
}
fn default_ff() -> usize {
    512
}
fn default_chunk() -> usize {
    16
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_feat: default_feat(),
            d: default_d(),
            layers: default_layers(),
            heads: default_heads(),
            ff: default_ff(),
            chunk_frames: default_chunk(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_feat == 0 || self.d == 0 || self.ff == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "encoder width {} is not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if self.chunk_frames == 0 {
            return Err(Error::Config("chunk_frames must be at least 1".into()));
        }
        Ok(())
    }
}

/// Stacks groups of 4 frames into one row, zero-padding the last group.
pub fn subsample<S: Scalar>(features: &Tensor<S>) -> Tensor<S> {
    let (t0, d) = (features.rows(), features.cols());
    let t = t0.div_ceil(SUBSAMPLE);
    let mut data = features.data().to_vec();
    data.resize(t * SUBSAMPLE * d, S::zero());
    Tensor::new(vec![t, SUBSAMPLE * d], data).expect("stacked shape")
}

#[derive(Clone, Debug)]
pub struct Encoder<S: Scalar> {
    cfg: EncoderConfig,
    store: ParamStore<S>,
    proj_w: ParamId,
    proj_b: ParamId,
    blocks: Vec<AttnBlock>,
    lnf_g: ParamId,
    lnf_b: ParamId,
}

impl<S: Scalar> Encoder<S> {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let fan_in = SUBSAMPLE * cfg.d_feat;
        let proj_w = store.add(
            "enc.subsample.proj",
            normal(&[fan_in, cfg.d], 1.0 / (fan_in as f64).sqrt(), &mut rng),
        );
        let proj_b = store.add("enc.subsample.bias", Tensor::zeros(&[cfg.d]));
        let blocks = (0..cfg.layers)
            .map(|l| AttnBlock::new(&mut store, &format!("enc.{l}"), cfg.d, cfg.ff, cfg.layers, &mut rng))
            .collect();
        let lnf_g = store.add("enc.final.g", Tensor::full(&[cfg.d], S::one()));
        let lnf_b = store.add("enc.final.b", Tensor::zeros(&[cfg.d]));
        Ok(Encoder {
            cfg,
            store,
            proj_w,
            proj_b,
            blocks,
            lnf_g,
            lnf_b,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    fn check_features(&self, f: &Tensor<S>) -> Result<()> {
        if f.shape().len() != 2 || f.cols() != self.cfg.d_feat {
            return Err(Error::Shape(format!(
                "features {:?}, expected [T0 × {}]",
                f.shape(),
                self.cfg.d_feat
            )));
        }
        f.ensure_finite("acoustic features")
    }

    /// Projection of stacked frames plus sinusoidal positions from `pos0`.
    fn embed<'p>(&'p self, tape: &mut Tape<'p, S>, stacked: Var, positions: &[usize]) -> Result<Var> {
        let w = self.store.bind(tape, self.proj_w);
        let b = self.store.bind(tape, self.proj_b);
        let x = tape.matmul(stacked, w)?;
        let x = tape.add_row(x, b)?;
        let mut pe = Vec::with_capacity(positions.len() * self.cfg.d);
        for &p in positions {
            pe.extend(sinusoid::<S>(p, self.cfg.d));
        }
        let pe = tape.constant(Tensor::matrix(positions.len(), self.cfg.d, pe)?);
        tape.add(x, pe)
    }

    fn final_norm<'p>(&'p self, tape: &mut Tape<'p, S>, x: Var) -> Result<Var> {
        let g = self.store.bind(tape, self.lnf_g);
        let b = self.store.bind(tape, self.lnf_b);
        tape.layer_norm(x, g, b)
    }

    /// Batched full-utterance encoding with chunk size `chunk`. Returns the
    /// packed `[ΣT_i × d]` output and each utterance's first row.
    pub fn forward<'p>(
        &'p self,
        tape: &mut Tape<'p, S>,
        feats: &[&Tensor<S>],
        chunk: usize,
    ) -> Result<(Var, Vec<usize>)> {
        if feats.is_empty() {
            return Err(Error::Empty("encoder batch"));
        }
        let mut stacked = Vec::with_capacity(feats.len());
        let mut offsets = Vec::with_capacity(feats.len());
        let mut positions = Vec::new();
        let mut segs = Vec::with_capacity(feats.len());
        for f in feats {
            self.check_features(f)?;
            if f.rows() == 0 {
                return Err(Error::Empty("feature matrix"));
            }
            let s = subsample(f);
            offsets.push(positions.len());
            segs.push(AttnSegment::self_attn(positions.len(), s.rows(), chunk));
            positions.extend(0..s.rows());
            stacked.push(s);
        }
        let refs: Vec<&Tensor<S>> = stacked.iter().collect();
        let x = tape.constant(Tensor::concat_rows(&refs)?);
        let mut x = self.embed(tape, x, &positions)?;
        for b in &self.blocks {
            x = b.forward(&self.store, tape, x, self.cfg.heads, segs.clone(), None)?.y;
        }
        let y = self.final_norm(tape, x)?;
        tape.value(y).ensure_finite("encoder activations")?;
        Ok((y, offsets))
    }

    /// `[ceil(T0/4) × d]` encoding of one utterance with the configured chunk.
    pub fn encode_full(&self, features: &Tensor<S>) -> Result<Tensor<S>> {
        self.encode_with_chunk(features, self.cfg.chunk_frames)
    }

    pub fn encode_with_chunk(&self, features: &Tensor<S>, chunk: usize) -> Result<Tensor<S>> {
        let mut tape = Tape::inference();
        let (y, _) = self.forward(&mut tape, &[features], chunk)?;
        Ok(tape.take(y))
    }

    pub fn stream(&self) -> EncoderStream<S> {
        EncoderStream {
            chunk: self.cfg.chunk_frames,
            raw: Vec::new(),
            pending: Vec::new(),
            emitted: 0,
            k: vec![Tensor::zeros(&[0, self.cfg.d]); self.blocks.len()],
            v: vec![Tensor::zeros(&[0, self.cfg.d]); self.blocks.len()],
            consumed: 0,
            finalized: false,
        }
    }

    /// Runs `stacked` rows (positions `pos0..`) through every block against
    /// the cached keys/values and appends the new ones.
    fn advance(&self, st: &mut EncoderStream<S>, stacked: Tensor<S>) -> Result<Tensor<S>> {
        let n = stacked.rows();
        let pos0 = st.emitted;
        let positions: Vec<usize> = (pos0..pos0 + n).collect();
        let mut tape = Tape::inference();
        let x = tape.constant(stacked);
        let mut x = self.embed(&mut tape, x, &positions)?;
        let seg = AttnSegment {
            q_start: 0,
            q_len: n,
            k_start: 0,
            k_len: pos0 + n,
            q_pos0: pos0,
            chunk: st.chunk,
        };
        for (l, b) in self.blocks.iter().enumerate() {
            let o = b.forward(
                &self.store,
                &mut tape,
                x,
                self.cfg.heads,
                vec![seg.clone()],
                Some(KvPrefix { k: &st.k[l], v: &st.v[l] }),
            )?;
            st.k[l] = Tensor::concat_rows(&[&st.k[l], tape.value(o.k)])?;
            st.v[l] = Tensor::concat_rows(&[&st.v[l], tape.value(o.v)])?;
            x = o.y;
        }
        let y = self.final_norm(&mut tape, x)?;
        let y = tape.take(y);
        y.ensure_finite("encoder activations")?;
        st.emitted += n;
        Ok(y)
    }
}

/// Incremental encoder state: raw frames not yet stacked, stacked frames
/// waiting for their chunk to complete, and per-layer key/value caches.
#[derive(Clone, Debug)]
pub struct EncoderStream<S> {
    chunk: usize,
    raw: Vec<S>,
    pending: Vec<S>,
    emitted: usize,
    k: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    consumed: usize,
    finalized: bool,
}

impl<S: Scalar> EncoderStream<S> {
    pub fn consumed_frames(&self) -> usize {
        self.consumed
    }

    pub fn emitted_frames(&self) -> usize {
        self.emitted
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Accepts more input frames; returns the output frames of every chunk
    /// completed by them (possibly none).
    pub fn push(&mut self, enc: &Encoder<S>, feats: &Tensor<S>) -> Result<Tensor<S>> {
        if self.finalized {
            return Err(Error::Finalized);
        }
        let d_feat = enc.cfg.d_feat;
        if feats.rows() > 0 {
            enc.check_features(feats)?;
        }
        self.consumed += if feats.is_empty() { 0 } else { feats.rows() };
        self.raw.extend_from_slice(feats.data());
        let group = SUBSAMPLE * d_feat;
        let full = self.raw.len() / group;
        self.pending.extend(self.raw.drain(..full * group));
        let ready = self.pending.len() / group / self.chunk * self.chunk;
        if ready == 0 {
            return Ok(Tensor::zeros(&[0, enc.cfg.d]));
        }
        let rows: Vec<S> = self.pending.drain(..ready * group).collect();
        enc.advance(self, Tensor::matrix(ready, group, rows)?)
    }

    /// Flushes the partial last group and the partial last chunk.
    pub fn finalize(&mut self, enc: &Encoder<S>) -> Result<Tensor<S>> {
        if self.finalized {
            return Err(Error::Finalized);
        }
        self.finalized = true;
        let group = SUBSAMPLE * enc.cfg.d_feat;
        if !self.raw.is_empty() {
            let mut last = std::mem::take(&mut self.raw);
            last.resize(group, S::zero());
            self.pending.extend(last);
        }
        let n = self.pending.len() / group;
        if n == 0 {
            return Ok(Tensor::zeros(&[0, enc.cfg.d]));
        }
        let rows = std::mem::take(&mut self.pending);
        enc.advance(self, Tensor::matrix(n, group, rows)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn small(chunk: usize) -> EncoderConfig {
        EncoderConfig {
            d_feat: 3,
            d: 8,
            layers: 2,
            heads: 2,
            ff: 16,
            chunk_frames: chunk,
        }
    }

    fn feats(t0: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![t0, 3], (0..t0 * 3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn max_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f32 {
        assert_eq!(a.shape(), b.shape());
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
    }

    #[test]
    fn stacking_rules() {
        let f = Tensor::<f64>::from_f64(&[5, 2], &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10.]).unwrap();
        let s = subsample(&f);
        assert_eq!(s.shape(), &[2, 8]);
        assert_eq!(s.row(0), &[1., 2., 3., 4., 5., 6., 7., 8.]);
        assert_eq!(s.row(1), &[9., 10., 0., 0., 0., 0., 0., 0.]);
        let f8 = feats(8, 1);
        let s8 = subsample(&f8);
        for t in 0..2 {
            for j in 0..12 {
                assert_eq!(s8.at(t, j), f8.at(4 * t + j / 3, j % 3));
            }
        }
    }

    #[test]
    fn wide_chunk_is_full_attention() {
        let enc = Encoder::<f32>::new(small(100), 4).unwrap();
        let f = feats(30, 2);
        let a = enc.encode_with_chunk(&f, 100).unwrap();
        let b = enc.encode_with_chunk(&f, 3).unwrap();
        assert_eq!(a.rows(), 8);
        assert_eq!(a, enc.encode_with_chunk(&f, 8000).unwrap());
        assert!(max_diff(&a, &b) > 0.0);
        assert!(max_diff(&a, &enc.encode_with_chunk(&f, 1).unwrap()) > 0.0);
    }

    #[test]
    fn chunked_causality() {
        let enc = Encoder::<f32>::new(small(2), 5).unwrap();
        let f = feats(40, 3);
        let base = enc.encode_full(&f).unwrap();
        // input frame 24 lands in output frame 6, chunk 3
        let mut g = f.clone();
        g.set(24, 1, 5.0);
        let out = enc.encode_full(&g).unwrap();
        for t in 0..6 {
            assert_eq!(out.row(t), base.row(t));
        }
        assert_ne!(out.row(6), base.row(6));
    }

    #[test]
    fn single_push_matches_full() {
        let enc = Encoder::<f32>::new(small(3), 6).unwrap();
        let f = feats(37, 4);
        let mut st = enc.stream();
        let a = st.push(&enc, &f).unwrap();
        let b = st.finalize(&enc).unwrap();
        let all = Tensor::concat_rows(&[&a, &b]).unwrap();
        assert_eq!(all.rows(), 10);
        assert!(max_diff(&all, &enc.encode_full(&f).unwrap()) <= 1e-5);
        assert!(matches!(st.push(&enc, &f), Err(Error::Finalized)));
        assert!(matches!(st.finalize(&enc), Err(Error::Finalized)));
    }

    #[test]
    fn frame_by_frame_pushes() {
        let enc = Encoder::<f32>::new(small(2), 7).unwrap();
        let f = feats(23, 5);
        let mut st = enc.stream();
        let mut parts = Vec::new();
        for t in 0..23 {
            parts.push(st.push(&enc, &f.slice_rows(t, 1)).unwrap());
        }
        parts.push(st.push(&enc, &Tensor::zeros(&[0, 3])).unwrap());
        parts.push(st.finalize(&enc).unwrap());
        let refs: Vec<&Tensor<f32>> = parts.iter().collect();
        let all = Tensor::concat_rows(&refs).unwrap();
        assert_eq!(all.rows(), 6);
        assert_eq!(st.consumed_frames(), 23);
        assert!(max_diff(&all, &enc.encode_full(&f).unwrap()) <= 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn arbitrary_partitions(t0 in 1usize..50, chunk in 1usize..5, cuts in proptest::collection::vec(0usize..50, 0..6), seed in 0u64..100) {
            let enc = Encoder::<f32>::new(small(chunk), 8).unwrap();
            let f = feats(t0, seed);
            let mut points: Vec<usize> = cuts.into_iter().map(|c| c % (t0 + 1)).collect();
            points.push(0);
            points.push(t0);
            points.sort_unstable();
            let mut st = enc.stream();
            let mut parts = Vec::new();
            for w in points.windows(2) {
                parts.push(st.push(&enc, &f.slice_rows(w[0], w[1] - w[0])).unwrap());
            }
            parts.push(st.finalize(&enc).unwrap());
            let refs: Vec<&Tensor<f32>> = parts.iter().collect();
            let all = Tensor::concat_rows(&refs).unwrap();
            prop_assert_eq!(all.rows(), t0.div_ceil(4));
            prop_assert!(max_diff(&all, &enc.encode_full(&f).unwrap()) <= 1e-5);
        }
    }
}
