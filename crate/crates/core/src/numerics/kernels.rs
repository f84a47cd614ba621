//! Forward/backward kernels shared by the tape and the inference paths.
//!
//! Streaming and offline code both call these, so identical inputs give
//! bit-identical rows regardless of how many rows are processed at once.

use crate::scalar::Scalar;

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm. Returns `(y, xhat, rstd)`.
pub fn layer_norm_forward<S: Scalar>(
    x: &[S],
    cols: usize,
    gain: &[S],
    bias: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let rows = x.len() / cols;
    let mut y = vec![S::zero(); x.len()];
    let mut xhat = vec![S::zero(); x.len()];
    let mut rstd = vec![S::zero(); rows];
    let n = S::of(cols as f64);
    let eps = S::of(LN_EPS);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().copied().sum::<S>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
        let rs = S::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..cols {
            let h = (row[c] - mean) * rs;
            xhat[r * cols + c] = h;
            y[r * cols + c] = h * gain[c] + bias[c];
        }
    }
    (y, xhat, rstd)
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward<S: Scalar>(
    dy: &[S],
    xhat: &[S],
    rstd: &[S],
    gain: &[S],
    cols: usize,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let rows = dy.len() / cols;
    let mut dx = vec![S::zero(); dy.len()];
    let mut dg = vec![S::zero(); cols];
    let mut db = vec![S::zero(); cols];
    let n = S::of(cols as f64);
    let mut dxhat = vec![S::zero(); cols];
    for r in 0..rows {
        let base = r * cols;
        let mut sum_d = S::zero();
        let mut sum_dx = S::zero();
        for c in 0..cols {
            let g = dy[base + c];
            dg[c] += g * xhat[base + c];
            db[c] += g;
            dxhat[c] = g * gain[c];
            sum_d += dxhat[c];
            sum_dx += dxhat[c] * xhat[base + c];
        }
        for c in 0..cols {
            dx[base + c] = rstd[r] * (dxhat[c] - (sum_d + xhat[base + c] * sum_dx) / n);
        }
    }
    (dx, dg, db)
}

/// One attention block: a run of query rows against a run of key rows.
///
/// Query `i` sits at position `q_pos0 + i` in key coordinates and sees key
/// `j` iff `j / chunk <= (q_pos0 + i) / chunk`. `chunk = 1` is plain causal
/// masking; `chunk >= k_len` is full attention.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnSegment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
    pub q_pos0: usize,
    pub chunk: usize,
}

impl AttnSegment {
    /// Self-attention over `len` rows starting at `start`.
    pub fn self_attn(start: usize, len: usize, chunk: usize) -> Self {
        AttnSegment {
            q_start: start,
            q_len: len,
            k_start: start,
            k_len: len,
            q_pos0: 0,
            chunk: chunk.max(1),
        }
    }

    #[inline]
    pub fn visible(&self, i: usize) -> usize {
        let p = self.q_pos0 + i;
        let end = (p / self.chunk + 1).saturating_mul(self.chunk);
        end.min(self.k_len)
    }

    fn prob_len(&self, heads: usize) -> usize {
        heads * self.q_len * self.k_len
    }
}

/// Multi-head scaled dot-product attention. `q` has `nq` rows and `k`, `v`
/// have `nk` rows, all with `d` columns. Returns output and probabilities
/// (per segment, `heads × q_len × k_len`, zeros where masked).
pub fn attention_forward<S: Scalar>(
    q: &[S],
    k: &[S],
    v: &[S],
    d: usize,
    heads: usize,
    segs: &[AttnSegment],
) -> (Vec<S>, Vec<S>) {
    let hd = d / heads;
    let scale = S::one() / S::of(hd as f64).sqrt();
    let nq = q.len() / d;
    let mut out = vec![S::zero(); nq * d];
    let total: usize = segs.iter().map(|s| s.prob_len(heads)).sum();
    let mut probs = vec![S::zero(); total];
    let mut off = 0;
    let mut scores = Vec::new();
    for seg in segs {
        for h in 0..heads {
            let c0 = h * hd;
            for i in 0..seg.q_len {
                let qi = &q[(seg.q_start + i) * d + c0..(seg.q_start + i) * d + c0 + hd];
                let nv = seg.visible(i);
                scores.clear();
                let mut mx = S::neg_infinity();
                for j in 0..nv {
                    let kj = &k[(seg.k_start + j) * d + c0..(seg.k_start + j) * d + c0 + hd];
                    let mut s = S::zero();
                    for t in 0..hd {
                        s += qi[t] * kj[t];
                    }
                    let s = s * scale;
                    mx = mx.max(s);
                    scores.push(s);
                }
                let mut z = S::zero();
                for s in scores.iter_mut() {
                    *s = (*s - mx).exp();
                    z += *s;
                }
                let prow = &mut probs[off + (h * seg.q_len + i) * seg.k_len..][..seg.k_len];
                let orow = &mut out[(seg.q_start + i) * d + c0..(seg.q_start + i) * d + c0 + hd];
                for j in 0..nv {
                    let p = scores[j] / z;
                    prow[j] = p;
                    let vj = &v[(seg.k_start + j) * d + c0..(seg.k_start + j) * d + c0 + hd];
                    for t in 0..hd {
                        orow[t] += p * vj[t];
                    }
                }
            }
        }
        off += seg.prob_len(heads);
    }
    (out, probs)
}

/// Returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<S: Scalar>(
    dout: &[S],
    q: &[S],
    k: &[S],
    v: &[S],
    probs: &[S],
    d: usize,
    heads: usize,
    segs: &[AttnSegment],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let hd = d / heads;
    let scale = S::one() / S::of(hd as f64).sqrt();
    let mut dq = vec![S::zero(); q.len()];
    let mut dk = vec![S::zero(); k.len()];
    let mut dv = vec![S::zero(); v.len()];
    let mut dp = Vec::new();
    let mut off = 0;
    for seg in segs {
        for h in 0..heads {
            let c0 = h * hd;
            for i in 0..seg.q_len {
                let qrow = (seg.q_start + i) * d + c0;
                let nv = seg.visible(i);
                let prow = &probs[off + (h * seg.q_len + i) * seg.k_len..][..seg.k_len];
                let go = &dout[qrow..qrow + hd];
                dp.clear();
                let mut dot = S::zero();
                for j in 0..nv {
                    let vrow = (seg.k_start + j) * d + c0;
                    let mut s = S::zero();
                    for t in 0..hd {
                        s += go[t] * v[vrow + t];
                        dv[vrow + t] += prow[j] * go[t];
                    }
                    dp.push(s);
                    dot += prow[j] * s;
                }
                for j in 0..nv {
                    let ds = prow[j] * (dp[j] - dot) * scale;
                    let krow = (seg.k_start + j) * d + c0;
                    for t in 0..hd {
                        dq[qrow + t] += ds * k[krow + t];
                        dk[krow + t] += ds * q[qrow + t];
                    }
                }
            }
        }
        off += seg.prob_len(heads);
    }
    (dq, dk, dv)
}
