//! Flat row-major storage for sets of points in `R^d`.

use crate::real::Real;

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in the `axis`-th prime base (axes wrap after 16).
pub fn halton(index: u64, axis: usize) -> f64 {
    let b = PRIMES[axis % PRIMES.len()];
    let (mut f, mut r, mut m) = (1.0, 0.0, index);
    while m > 0 {
        f /= b as f64;
        r += f * (m % b) as f64;
        m /= b;
    }
    r
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointSet<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> PointSet<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        Self { dim, data: Vec::with_capacity(dim * n) }
    }

    pub fn from_flat(dim: usize, data: Vec<T>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "flat data must be a multiple of dim");
        Self { dim, data }
    }

    pub fn from_rows<R: AsRef<[T]>>(dim: usize, rows: &[R]) -> Self {
        let mut s = Self::with_capacity(dim, rows.len());
        for r in rows {
            s.push(r.as_ref());
        }
        s
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, x: &[T]) {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        self.data.extend_from_slice(x);
    }

    pub fn extend(&mut self, other: &PointSet<T>) {
        assert_eq!(other.dim, self.dim);
        self.data.extend_from_slice(&other.data);
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.iter().map(|r| r.to_vec()).collect()
    }

    /// Column `k` copied out.
    pub fn column(&self, k: usize) -> Vec<T> {
        self.iter().map(|r| r[k]).collect()
    }
}

impl<T: Real> std::ops::Index<usize> for PointSet<T> {
    type Output = [T];
    fn index(&self, i: usize) -> &[T] {
        self.row(i)
    }
}

/// Ordered `(x, y)` pairs accumulated from oracle evaluations.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset<T> {
    pub x: PointSet<T>,
    pub y: Vec<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(dim: usize) -> Self {
        Self { x: PointSet::new(dim), y: Vec::new() }
    }

    pub fn push(&mut self, x: &[T], y: T) {
        self.x.push(x);
        self.y.push(y);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }
}
