//! Dense symmetric positive-definite kernels: Cholesky factorization,
//! triangular solves and inverse. Matrices are row-major `n * n` slices.

use crate::real::Real;

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] = x[k].mul_add(y[k], acc[k]);
        }
    }
    let mut s = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s = x.mul_add(*y, s);
    }
    let lo = (acc[0] + acc[4]) + (acc[1] + acc[5]);
    let hi = (acc[2] + acc[6]) + (acc[3] + acc[7]);
    s + (lo + hi)
}

/// `y += a * x`
#[inline]
pub fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = a.mul_add(*xi, *yi);
    }
}

/// Lower Cholesky factor `L` with `A = L L^T`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factor the lower triangle of `a` (upper triangle ignored).
    /// Returns the index of the first non-positive pivot on failure.
    pub fn new(mut a: Vec<T>, n: usize) -> Result<Self, usize> {
        assert_eq!(a.len(), n * n, "matrix must be n*n");
        for i in 0..n {
            let (done, rest) = a.split_at_mut(i * n);
            let row_i = &mut rest[..n];
            for j in 0..i {
                let row_j = &done[j * n..j * n + j];
                let s = row_i[j] - dot(&row_i[..j], row_j);
                row_i[j] = s / done[j * n + j];
            }
            let d = row_i[i] - dot(&row_i[..i], &row_i[..i]);
            if !(d > T::zero()) || !d.is_finite() {
                return Err(i);
            }
            row_i[i] = d.sqrt();
            for v in row_i[i + 1..].iter_mut() {
                *v = T::zero();
            }
        }
        Ok(Self { n, l: a })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.l[i * self.n..i * self.n + i + 1]
    }

    pub fn factor(&self) -> &[T] {
        &self.l
    }

    pub fn log_det(&self) -> T {
        let mut s = T::zero();
        for i in 0..self.n {
            s += self.l[i * self.n + i].ln();
        }
        s + s
    }

    /// Solve `L x = b` in place.
    pub fn forward_in_place(&self, b: &mut [T]) {
        let n = self.n;
        for i in 0..n {
            let r = &self.l[i * n..i * n + i];
            let s = b[i] - dot(r, &b[..i]);
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solve `L^T x = b` in place.
    pub fn backward_in_place(&self, b: &mut [T]) {
        let n = self.n;
        for i in (0..n).rev() {
            b[i] /= self.l[i * n + i];
            let xi = b[i];
            let r = &self.l[i * n..i * n + i];
            axpy(-xi, r, &mut b[..i]);
        }
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.forward_in_place(&mut x);
        self.backward_in_place(&mut x);
        x
    }

    /// Solve `L V = K` for a block of `B` right-hand sides stored row-major
    /// as `n * B` (row `i` holds entry `i` of every column).
    pub fn forward_block<const B: usize>(&self, k: &mut [[T; B]]) {
        let n = self.n;
        assert_eq!(k.len(), n);
        for i in 0..n {
            let r = &self.l[i * n..i * n + i];
            let (done, rest) = k.split_at_mut(i);
            // four interleaved accumulators hide the FMA latency
            let mut acc = [[T::zero(); B]; 4];
            let mut lr = r.chunks_exact(4);
            let mut vr = done.chunks_exact(4);
            for (l4, v4) in (&mut lr).zip(&mut vr) {
                for q in 0..4 {
                    for c in 0..B {
                        acc[q][c] = l4[q].mul_add(v4[q][c], acc[q][c]);
                    }
                }
            }
            for (lij, vj) in lr.remainder().iter().zip(vr.remainder()) {
                for c in 0..B {
                    acc[0][c] = lij.mul_add(vj[c], acc[0][c]);
                }
            }
            let inv = T::one() / self.l[i * n + i];
            let row = &mut rest[0];
            for c in 0..B {
                row[c] = (row[c] - ((acc[0][c] + acc[1][c]) + (acc[2][c] + acc[3][c]))) * inv;
            }
        }
    }

    /// `A^{-1}` as a full symmetric row-major matrix.
    pub fn inverse(&self) -> Vec<T> {
        let n = self.n;
        // M = L^{-1}, lower triangular, built row by row
        let mut m = vec![T::zero(); n * n];
        for i in 0..n {
            let inv_d = T::one() / self.l[i * n + i];
            let (done, rest) = m.split_at_mut(i * n);
            let row = &mut rest[..n];
            for k in 0..i {
                let lik = self.l[i * n + k];
                if lik != T::zero() {
                    axpy(-lik, &done[k * n..k * n + k + 1], &mut row[..k + 1]);
                }
            }
            for v in row[..i].iter_mut() {
                *v *= inv_d;
            }
            row[i] = inv_d;
        }
        // A^{-1} = M^T M, accumulated over rows of M into the lower triangle
        let mut out = vec![T::zero(); n * n];
        for k in 0..n {
            let mk = &m[k * n..k * n + k + 1];
            for i in 0..=k {
                let a = mk[i];
                if a != T::zero() {
                    axpy(a, &mk[..i + 1], &mut out[i * n..i * n + i + 1]);
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                out[j * n + i] = out[i * n + j];
            }
        }
        out
    }
}
