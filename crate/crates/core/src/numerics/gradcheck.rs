use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Largest relative disagreement between the reverse-mode gradient of `f`
/// at `x` and central differences with step `eps`:
/// `max_i |g_ad − g_fd| / max(1, |g_ad|, |g_fd|)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, Var) -> Result<Var>,
{
    let eval = |x: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::inference();
        let v = tape.input(x, false);
        let y = f(&mut tape, v)?;
        scalar_of(&tape, y)
    };

    let mut tape = Tape::new();
    let v = tape.input(x.clone(), true);
    let y = f(&mut tape, v)?;
    scalar_of(&tape, y)?;
    let grads = tape.backward(y)?;
    let zeros = Tensor::zeros(x.shape());
    let g_ad = grads.of(v).unwrap_or(&zeros).clone();

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let ad = g_ad.data()[i];
        let rel = (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn scalar_of(tape: &Tape<'_, f64>, y: Var) -> Result<f64> {
    let t = tape.value(y);
    if t.len() != 1 {
        return Err(Error::Shape(format!(
            "grad_check needs a scalar output, got {:?}",
            t.shape()
        )));
    }
    Ok(t.item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::kernels::AttnSegment;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn sum_of_squares() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let err = grad_check(
            |t, v| {
                let sq = t.mul(v, v)?;
                Ok(t.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn log_softmax_component() {
        let x = random(&[1, 5], 3);
        let err = grad_check(
            |t, v| {
                let l = t.log_softmax(v);
                let p = t.pick(l, &[2]);
                Ok(t.sum(p))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn non_scalar_output_is_error() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        assert!(grad_check(|_, v| Ok(v), &x, 1e-5).is_err());
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let w = random(&[4, 3], 11);
        let g = random(&[3], 12);
        let b = random(&[3], 13);
        let x = random(&[5, 4], 14);
        let err = grad_check(
            |t, v| {
                let wv = t.constant(w.clone());
                let gv = t.constant(g.clone());
                let bv = t.constant(b.clone());
                let h = t.matmul(v, wv)?;
                let h = t.add_row(h, bv)?;
                let n = t.layer_norm(h, gv, bv)?;
                let a = t.tanh(n);
                let s = t.sigmoid(h);
                let m = t.mul(a, s)?;
                let r = t.relu(m);
                let e = t.exp(a);
                let d = t.sub(r, e)?;
                let ls = t.log_sigmoid(d);
                let lsm = t.log_softmax(ls);
                let top = t.slice_rows(lsm, 1, 3)?;
                let rows = t.concat_rows(&[top, lsm])?;
                let q = t.matmul_t(rows, wv)?;
                let q = t.scale(q, 0.5);
                let p = t.pick(q, &[0, 5, 7, 19]);
                Ok(t.sum(p))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn attention_and_gather() {
        let table = random(&[6, 8], 21);
        let err = grad_check(
            |t, v| {
                let e = t.gather(v, &[0, 3, 3, 5, 1, 2, 4])?;
                let segs = vec![AttnSegment::self_attn(0, 4, 2), AttnSegment::self_attn(4, 3, 1)];
                let o = t.attention(e, e, e, 2, segs)?;
                let p = t.pick(o, &[0, 9, 17, 30, 55]);
                Ok(t.sum(p))
            },
            &table,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }
}
