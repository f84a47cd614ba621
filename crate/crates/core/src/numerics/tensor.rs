use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor. Most of the crate works with rank 1 and 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<S>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| S::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Rows of the tensor viewed as a matrix (leading extent).
    pub fn rows(&self) -> usize {
        if self.shape.len() <= 1 {
            1
        } else {
            self.shape[0]
        }
    }

    /// Columns of the tensor viewed as a matrix (product of trailing extents).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn item(&self) -> S {
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<S>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, c: S) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|&x| x.f64() * x.f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Gathers rows `ids` into a new `[ids.len() × cols]` matrix.
    pub fn gather_rows(&self, ids: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: vec![ids.len(), c],
            data,
        }
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Self {
        let c = self.cols();
        Tensor {
            shape: vec![len, c],
            data: self.data[start * c..(start + len) * c].to_vec(),
        }
    }

    pub fn concat_rows(parts: &[&Tensor<S>]) -> Result<Self> {
        let c = parts.first().map(|p| p.cols()).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != c {
                return Err(Error::Shape(format!(
                    "concat of {} and {} columns",
                    c,
                    p.cols()
                )));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: vec![rows, c],
            data,
        })
    }

    /// Converts the element type; bit-exact when `T` and `S` coincide.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        let data = if T::DTYPE == S::DTYPE {
            let mut bytes = Vec::with_capacity(self.data.len() * S::DTYPE.size());
            for &x in &self.data {
                x.write_le(&mut bytes);
            }
            bytes.chunks_exact(T::DTYPE.size()).map(T::read_le).collect()
        } else {
            self.data.iter().map(|&x| T::of(x.f64())).collect()
        };
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Order-sensitive hash of the exact bit patterns; equal hashes across
    /// a training step witness bit-identical parameters.
    pub fn bit_checksum(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.data.len() * S::DTYPE.size());
        for &x in &self.data {
            x.write_le(&mut bytes);
        }
        fnv1a(&bytes)
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// `a [m×k] · b [k×n]`, or `a · bᵀ` when `b_transposed` (b stored `[n×k]`).
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, b_transposed: bool) -> Result<Tensor<S>> {
    let (m, k) = (a.rows(), a.cols());
    let (n, kb) = if b_transposed {
        (b.rows(), b.cols())
    } else {
        (b.cols(), b.rows())
    };
    if k != kb {
        return Err(Error::Shape(format!(
            "matmul {:?} x {:?}{}",
            a.shape(),
            b.shape(),
            if b_transposed { "ᵀ" } else { "" }
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    let (rsb, csb) = if b_transposed {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    S::gemm(
        m,
        k,
        n,
        S::one(),
        a.data(),
        k as isize,
        1,
        b.data(),
        rsb,
        csb,
        S::zero(),
        out.data_mut(),
        n as isize,
        1,
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2, 1], &[1.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &b, false).unwrap().data(), &[3.0, 7.0]);
        let bt = Tensor::<f64>::from_f64(&[1, 2], &[1.0, -1.0]).unwrap();
        assert_eq!(matmul(&a, &bt, true).unwrap().data(), &[-1.0, -1.0]);
    }

    #[test]
    fn checksum_sees_single_bit() {
        let a = Tensor::<f32>::vector(vec![1.0, 2.0]);
        let mut b = a.clone();
        b.data_mut()[1] = f32::from_bits(2.0f32.to_bits() + 1);
        assert_ne!(a.bit_checksum(), b.bit_checksum());
    }
}
