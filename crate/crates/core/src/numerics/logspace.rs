//! Numerically stable log-domain primitives.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `log(exp(a) + exp(b))` without NaN checks; `-inf` is the identity.
#[inline]
pub fn lae<S: Scalar>(a: S, b: S) -> S {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == S::neg_infinity() {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub fn logaddexp<S: Scalar>(a: S, b: S) -> Result<S> {
    if a.is_nan() || b.is_nan() {
        return Err(Error::NaN("logaddexp"));
    }
    Ok(lae(a, b))
}

/// `log Σ exp(x_i)`; `-inf` for an empty or all `-inf` slice.
pub fn logsumexp<S: Scalar>(xs: &[S]) -> S {
    let m = xs.iter().copied().fold(S::neg_infinity(), S::max);
    if m == S::neg_infinity() {
        return m;
    }
    let mut s = S::zero();
    for &x in xs {
        s += (x - m).exp();
    }
    m + s.ln()
}

/// Writes `log_softmax(x)` into `out`; both slices have the same length.
pub fn log_softmax_into<S: Scalar>(x: &[S], out: &mut [S]) {
    let lse = logsumexp(x);
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

pub fn log_softmax<S: Scalar>(v: &[S]) -> Result<Vec<S>> {
    if v.is_empty() {
        return Err(Error::Empty("log_softmax input"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("log_softmax input".into()));
    }
    let mut out = vec![S::zero(); v.len()];
    log_softmax_into(v, &mut out);
    Ok(out)
}

/// `log σ(z)`, stable for large |z|.
#[inline]
pub fn log_sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// `(log σ(z), log(1 − σ(z)))`.
pub fn log_sigmoid_pair<S: Scalar>(z: S) -> Result<(S, S)> {
    if z.is_nan() {
        return Err(Error::NaN("log_sigmoid_pair"));
    }
    Ok((log_sigmoid(z), log_sigmoid(-z)))
}
