//! Fused lattice operations with hand-written backward passes.

use crate::error::{Error, Result};
use crate::numerics::logspace::lae;
use crate::numerics::{CustomOp, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// `z[t,u] = w · tanh(a[t] + b[u])`: the additive blank joiner.
struct Joint;

fn joint_hidden<S: Scalar>(a: &[S], b: &[S], out: &mut [S]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = (x + y).tanh();
    }
}

impl<S: Scalar> CustomOp<S> for Joint {
    fn backward(&self, inputs: &[&Tensor<S>], _out: &Tensor<S>, g: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let (a, b, w) = (inputs[0], inputs[1], inputs[2]);
        let (t_len, u_len, dj) = (a.rows(), b.rows(), a.cols());
        let mut da = Tensor::zeros(a.shape());
        let mut db = Tensor::zeros(b.shape());
        let mut dw = Tensor::zeros(w.shape());
        let mut h = vec![S::zero(); dj];
        for t in 0..t_len {
            for u in 0..u_len {
                let gz = g.at(t, u);
                if gz == S::zero() {
                    continue;
                }
                joint_hidden(a.row(t), b.row(u), &mut h);
                for j in 0..dj {
                    dw.data_mut()[j] += gz * h[j];
                    let dh = gz * w.data()[j] * (S::one() - h[j] * h[j]);
                    da.row_mut(t)[j] += dh;
                    db.row_mut(u)[j] += dh;
                }
            }
        }
        vec![Some(da), Some(db), Some(dw)]
    }
}

pub fn joint_forward<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, w: &Tensor<S>) -> Tensor<S> {
    let (t_len, u_len, dj) = (a.rows(), b.rows(), a.cols());
    let mut z = Tensor::zeros(&[t_len, u_len]);
    let mut h = vec![S::zero(); dj];
    for t in 0..t_len {
        for u in 0..u_len {
            joint_hidden(a.row(t), b.row(u), &mut h);
            z.set(t, u, h.iter().zip(w.data()).map(|(&x, &y)| x * y).sum());
        }
    }
    z
}

/// Records the blank joiner on a tape: `a [T×dj]`, `b [(U+1)×dj]`, `w [dj]`.
pub fn joint<'p, S: Scalar>(tape: &mut Tape<'p, S>, a: Var, b: Var, w: Var) -> Result<Var> {
    let (ta, tb, tw) = (tape.value(a), tape.value(b), tape.value(w));
    if ta.cols() != tb.cols() || tw.len() != ta.cols() {
        return Err(Error::Shape(format!(
            "joiner {:?} + {:?} · {:?}",
            ta.shape(),
            tb.shape(),
            tw.shape()
        )));
    }
    let z = joint_forward(ta, tb, tw);
    Ok(tape.custom(&[a, b, w], z, Box::new(Joint)))
}

/// Fused non-blank label score at selected lattice points `(t, u, k)`:
/// `log_softmax(ac[t] + α·lm[u])[k] + β·lm[u][k]`.
///
/// With α = 1, β = 0 this is the training-time renormalised product of the
/// acoustic and internal-LM distributions.
struct LabelScores<S> {
    points: Vec<(usize, usize, usize)>,
    alpha: S,
    beta: S,
    log_norm: Vec<S>,
}

fn fused_row<S: Scalar>(ac: &[S], lm: &[S], alpha: S, out: &mut [S]) -> S {
    for ((o, &a), &l) in out.iter_mut().zip(ac).zip(lm) {
        *o = a + alpha * l;
    }
    let m = out.iter().copied().fold(S::neg_infinity(), S::max);
    let s: S = out.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

impl<S: Scalar> CustomOp<S> for LabelScores<S> {
    fn backward(&self, inputs: &[&Tensor<S>], _out: &Tensor<S>, g: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let (ac, lm) = (inputs[0], inputs[1]);
        let v = ac.cols();
        let mut dac = Tensor::zeros(ac.shape());
        let mut dlm = Tensor::zeros(lm.shape());
        let mut row = vec![S::zero(); v];
        for (i, &(t, u, k)) in self.points.iter().enumerate() {
            let gi = g.data()[i];
            if gi == S::zero() {
                continue;
            }
            let (ar, lr) = (ac.row(t), lm.row(u));
            let z = self.log_norm[i];
            {
                let da = dac.row_mut(t);
                for j in 0..v {
                    row[j] = (ar[j] + self.alpha * lr[j] - z).exp();
                    da[j] -= gi * row[j];
                }
                da[k] += gi;
            }
            let dl = dlm.row_mut(u);
            for j in 0..v {
                dl[j] -= gi * self.alpha * row[j];
            }
            dl[k] += gi * (self.alpha + self.beta);
        }
        vec![Some(dac), Some(dlm)]
    }
}

pub fn label_scores<'p, S: Scalar>(
    tape: &mut Tape<'p, S>,
    ac: Var,
    lm: Var,
    points: Vec<(usize, usize, usize)>,
    alpha: S,
    beta: S,
) -> Result<Var> {
    let (tac, tlm) = (tape.value(ac), tape.value(lm));
    let v = tac.cols();
    if tlm.cols() != v {
        return Err(Error::Shape(format!(
            "acoustic {:?} vs LM {:?} distributions",
            tac.shape(),
            tlm.shape()
        )));
    }
    let mut out = Vec::with_capacity(points.len());
    let mut log_norm = Vec::with_capacity(points.len());
    let mut row = vec![S::zero(); v];
    let mut cache: Option<(usize, usize, S)> = None;
    for &(t, u, k) in &points {
        if t >= tac.rows() || u >= tlm.rows() || k >= v {
            return Err(Error::Shape(format!("lattice point ({t}, {u}, {k}) out of range")));
        }
        let z = match cache {
            Some((ct, cu, z)) if ct == t && cu == u => z,
            _ => {
                let z = fused_row(tac.row(t), tlm.row(u), alpha, &mut row);
                cache = Some((t, u, z));
                z
            }
        };
        log_norm.push(z);
        out.push(tac.at(t, k) + alpha * tlm.at(u, k) - z + beta * tlm.at(u, k));
    }
    let op = LabelScores {
        points,
        alpha,
        beta,
        log_norm,
    };
    Ok(tape.custom(&[ac, lm], Tensor::vector(out), Box::new(op)))
}

/// Log-domain forward variables. `blank [T×(U+1)]` holds log P_b and
/// `label [T×U]` holds log P_nb of the next target label at each point.
pub fn forward_alpha<S: Scalar>(blank: &Tensor<S>, label: &Tensor<S>) -> Result<Tensor<S>> {
    let (t_len, u1) = (blank.rows(), blank.cols());
    if t_len == 0 || (u1 > 1 && (label.rows() != t_len || label.cols() != u1 - 1)) {
        return Err(Error::Shape(format!(
            "lattice blank {:?} label {:?}",
            blank.shape(),
            label.shape()
        )));
    }
    if blank.data().iter().chain(label.data()).any(|x| x.is_nan()) {
        return Err(Error::NaN("transducer loss"));
    }
    let mut alpha = Tensor::full(&[t_len, u1], S::neg_infinity());
    alpha.set(0, 0, S::zero());
    for t in 0..t_len {
        for u in 0..u1 {
            if t == 0 && u == 0 {
                continue;
            }
            let mut a = S::neg_infinity();
            if t > 0 {
                a = alpha.at(t - 1, u) + blank.at(t - 1, u);
            }
            if u > 0 {
                a = lae(a, alpha.at(t, u - 1) + label.at(t, u - 1));
            }
            alpha.set(t, u, a);
        }
    }
    Ok(alpha)
}

fn backward_beta<S: Scalar>(blank: &Tensor<S>, label: &Tensor<S>) -> Tensor<S> {
    let (t_len, u1) = (blank.rows(), blank.cols());
    let mut beta = Tensor::full(&[t_len, u1], S::neg_infinity());
    for t in (0..t_len).rev() {
        for u in (0..u1).rev() {
            let b = if t == t_len - 1 && u == u1 - 1 {
                blank.at(t, u)
            } else {
                let mut b = S::neg_infinity();
                if t + 1 < t_len {
                    b = beta.at(t + 1, u) + blank.at(t, u);
                }
                if u + 1 < u1 {
                    b = lae(b, beta.at(t, u + 1) + label.at(t, u));
                }
                b
            };
            beta.set(t, u, b);
        }
    }
    beta
}

/// Negative log-likelihood of the transducer lattice; output is a scalar.
struct TransducerNll<S> {
    alpha: Tensor<S>,
}

impl<S: Scalar> CustomOp<S> for TransducerNll<S> {
    fn backward(&self, inputs: &[&Tensor<S>], out: &Tensor<S>, g: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let (blank, label) = (inputs[0], inputs[1]);
        let (t_len, u1) = (blank.rows(), blank.cols());
        let beta = backward_beta(blank, label);
        let log_z = -out.item();
        let g = g.item();
        let alpha = &self.alpha;
        let mut db = Tensor::zeros(blank.shape());
        let mut dl = Tensor::zeros(label.shape());
        for t in 0..t_len {
            for u in 0..u1 {
                let a = alpha.at(t, u);
                if t + 1 < t_len {
                    let occ = (a + blank.at(t, u) + beta.at(t + 1, u) - log_z).exp();
                    db.set(t, u, -g * occ);
                } else if u == u1 - 1 {
                    db.set(t, u, -g * (a + blank.at(t, u) - log_z).exp());
                }
                if u + 1 < u1 {
                    let occ = (a + label.at(t, u) + beta.at(t, u + 1) - log_z).exp();
                    dl.set(t, u, -g * occ);
                }
            }
        }
        vec![Some(db), Some(dl)]
    }
}

/// Records the lattice NLL on a tape and returns it with the α grid.
pub fn transducer_nll<'p, S: Scalar>(
    tape: &mut Tape<'p, S>,
    blank: Var,
    label: Var,
) -> Result<(Var, Tensor<S>)> {
    let (tb, tl) = (tape.value(blank), tape.value(label));
    let alpha = forward_alpha(tb, tl)?;
    let (t_len, u1) = (tb.rows(), tb.cols());
    let loss = -(alpha.at(t_len - 1, u1 - 1) + tb.at(t_len - 1, u1 - 1));
    let op = TransducerNll {
        alpha: alpha.clone(),
    };
    let v = tape.custom(&[blank, label], Tensor::scalar(loss), Box::new(op));
    Ok((v, alpha))
}
