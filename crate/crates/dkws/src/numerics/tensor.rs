//! Dense row-major tensors and the handful of kernels the layers need.

use super::scalar::Scalar;
use super::NumericsError;

/// A dense tensor: explicit shape plus row-major data.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::Dimension {
                op: "Tensor::new",
                detail: format!("shape {:?} wants {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![S::ZERO; numel] }
    }

    pub fn scalar(v: S) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn from_vec(data: Vec<S>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Rows of a rank-2 tensor (or 1 for rank-1, treating it as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            r => panic!("rows() on rank-{} tensor", r),
        }
    }

    /// Row width of a rank-1 or rank-2 tensor.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            r => panic!("cols() on rank-{} tensor", r),
        }
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> S {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, s: S) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn add_assign(&mut self, other: &Tensor<S>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    /// Convert element type, rounding through f64.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Dot product with eight independent accumulators: a single running sum is
/// latency-bound (float adds cannot be reassociated by the compiler), eight
/// lanes let it vectorize.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::ZERO; 8];
    let mut chunks_a = a.chunks_exact(8);
    let mut chunks_b = b.chunks_exact(8);
    for (ca, cb) in chunks_a.by_ref().zip(chunks_b.by_ref()) {
        for k in 0..8 {
            acc[k] += ca[k] * cb[k];
        }
    }
    let mut tail = S::ZERO;
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += *x * *y;
    }
    (((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]))) + tail
}

/// dst += s * src
#[inline]
pub fn axpy<S: Scalar>(dst: &mut [S], s: S, src: &[S]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, x) in dst.iter_mut().zip(src.iter()) {
        *d += s * *x;
    }
}

/// out (n x m) = a (n x k) * b^T where b is (m x k).
/// Row-major with contiguous dot products, the workhorse for W*x projections.
pub fn matmul_nt<S: Scalar>(a: &[S], n: usize, k: usize, b: &[S], m: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), m * k);
    let mut out = vec![S::ZERO; n * m];
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        let or = &mut out[i * m..(i + 1) * m];
        for (j, o) in or.iter_mut().enumerate() {
            *o = dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// out (n x m) = a (n x k) * b (k x m).
pub fn matmul_nn<S: Scalar>(a: &[S], n: usize, k: usize, b: &[S], m: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    let mut out = vec![S::ZERO; n * m];
    for i in 0..n {
        let or = &mut out[i * m..(i + 1) * m];
        for l in 0..k {
            let s = a[i * k + l];
            if s != S::ZERO {
                axpy(or, s, &b[l * m..(l + 1) * m]);
            }
        }
    }
    out
}

/// out (r) = m (r x c) * v (c)
pub fn matvec<S: Scalar>(m: &[S], r: usize, c: usize, v: &[S]) -> Vec<S> {
    let mut out = vec![S::ZERO; r];
    matvec_into(&mut out, m, r, c, v);
    out
}

/// Allocation-free [`matvec`] for per-frame recurrences.
#[inline]
pub fn matvec_into<S: Scalar>(out: &mut [S], m: &[S], r: usize, c: usize, v: &[S]) {
    debug_assert_eq!(m.len(), r * c);
    debug_assert_eq!(v.len(), c);
    debug_assert_eq!(out.len(), r);
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&m[i * c..(i + 1) * c], v);
    }
}

/// out (c) = m^T (c x r) * v (r), i.e. accumulate v-weighted rows of m.
pub fn matvec_t<S: Scalar>(m: &[S], r: usize, c: usize, v: &[S]) -> Vec<S> {
    let mut out = vec![S::ZERO; c];
    matvec_t_into(&mut out, m, r, c, v);
    out
}

/// Allocation-free [`matvec_t`]; `out` is overwritten, not accumulated.
#[inline]
pub fn matvec_t_into<S: Scalar>(out: &mut [S], m: &[S], r: usize, c: usize, v: &[S]) {
    debug_assert_eq!(m.len(), r * c);
    debug_assert_eq!(v.len(), r);
    debug_assert_eq!(out.len(), c);
    out.iter_mut().for_each(|o| *o = S::ZERO);
    for i in 0..r {
        axpy(out, v[i], &m[i * c..(i + 1) * c]);
    }
}
