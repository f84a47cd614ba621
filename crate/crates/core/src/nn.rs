//! Parameter initialisation and the pre-norm attention block shared by the
//! acoustic encoder and the transformer language model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::numerics::kernels::AttnSegment;
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

pub fn normal<S: Scalar>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<S> {
    let n: usize = shape.iter().product();
    if std == 0.0 {
        return Tensor::zeros(shape);
    }
    let dist = Normal::new(0.0, std).expect("positive std");
    let data = (0..n).map(|_| S::of(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

pub fn uniform<S: Scalar>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::of(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Fixed sinusoidal encoding of absolute position `pos`.
pub fn sinusoid<S: Scalar>(pos: usize, d: usize) -> Vec<S> {
    (0..d)
        .map(|i| {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            S::of(if i % 2 == 0 { angle.sin() } else { angle.cos() })
        })
        .collect()
}

/// Keys and values already computed for earlier positions.
pub struct KvPrefix<'a, S> {
    pub k: &'a Tensor<S>,
    pub v: &'a Tensor<S>,
}

/// Output of one block: the new hidden rows plus the key/value rows they
/// produced (for caching).
pub struct BlockOut {
    pub y: Var,
    pub k: Var,
    pub v: Var,
}

#[derive(Clone, Debug)]
pub struct AttnBlock {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
}

impl AttnBlock {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        d: usize,
        ff: usize,
        n_blocks: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let lin = 1.0 / (d as f64).sqrt();
        let resid = lin / (2.0 * n_blocks as f64).sqrt();
        let mut add = |name: &str, t: Tensor<S>| store.add(format!("{prefix}.{name}"), t);
        AttnBlock {
            ln1_g: add("ln1.g", Tensor::full(&[d], S::one())),
            ln1_b: add("ln1.b", Tensor::zeros(&[d])),
            wq: add("wq", normal(&[d, d], lin, rng)),
            wk: add("wk", normal(&[d, d], lin, rng)),
            wv: add("wv", normal(&[d, d], lin, rng)),
            wo: add("wo", normal(&[d, d], resid, rng)),
            ln2_g: add("ln2.g", Tensor::full(&[d], S::one())),
            ln2_b: add("ln2.b", Tensor::zeros(&[d])),
            ff1_w: add("ff1.w", normal(&[d, ff], lin, rng)),
            ff1_b: add("ff1.b", Tensor::zeros(&[ff])),
            ff2_w: add("ff2.w", normal(&[ff, d], resid * (d as f64 / ff as f64).sqrt(), rng)),
            ff2_b: add("ff2.b", Tensor::zeros(&[d])),
        }
    }

    /// Pre-norm attention + feed-forward. With `prefix`, the cached keys and
    /// values are prepended before attending; segment key ranges refer to
    /// the concatenation.
    pub fn forward<'p, S: Scalar>(
        &self,
        store: &'p ParamStore<S>,
        tape: &mut Tape<'p, S>,
        x: Var,
        heads: usize,
        segs: Vec<AttnSegment>,
        prefix: Option<KvPrefix<'_, S>>,
    ) -> Result<BlockOut> {
        let p = |tape: &mut Tape<'p, S>, id| store.bind(tape, id);
        let (g, b) = (p(tape, self.ln1_g), p(tape, self.ln1_b));
        let h = tape.layer_norm(x, g, b)?;
        let (wq, wk, wv) = (p(tape, self.wq), p(tape, self.wk), p(tape, self.wv));
        let q = tape.matmul(h, wq)?;
        let k = tape.matmul(h, wk)?;
        let v = tape.matmul(h, wv)?;
        let (k_all, v_all) = match prefix {
            Some(kv) if kv.k.rows() > 0 => {
                let ck = tape.constant(kv.k.clone());
                let cv = tape.constant(kv.v.clone());
                (tape.concat_rows(&[ck, k])?, tape.concat_rows(&[cv, v])?)
            }
            _ => (k, v),
        };
        let a = tape.attention(q, k_all, v_all, heads, segs)?;
        let wo = p(tape, self.wo);
        let a = tape.matmul(a, wo)?;
        let x = tape.add(x, a)?;
        let (g, b) = (p(tape, self.ln2_g), p(tape, self.ln2_b));
        let h = tape.layer_norm(x, g, b)?;
        let (w1, b1) = (p(tape, self.ff1_w), p(tape, self.ff1_b));
        let f = tape.matmul(h, w1)?;
        let f = tape.add_row(f, b1)?;
        let f = tape.relu(f);
        let (w2, b2) = (p(tape, self.ff2_w), p(tape, self.ff2_b));
        let f = tape.matmul(f, w2)?;
        let f = tape.add_row(f, b2)?;
        let y = tape.add(x, f)?;
        Ok(BlockOut { y, k, v })
    }
}
