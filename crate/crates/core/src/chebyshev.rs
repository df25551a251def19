//! Tensor Chebyshev interpolation of isotropic Gaussian sums in one or two
//! dimensions.
//!
//! `sum_j c_j exp(-|z - u_j|^2 / (2 h^2))` is entire, so interpolating it on
//! second-kind Chebyshev nodes converges geometrically. With `5 L / h + 12`
//! nodes per axis (L the interval length) the absolute error is a few ulp of
//! `sum_j |c_j|`. Evaluation then costs `p^d` operations instead of one
//! kernel per center.

use crate::points::PointSet;
use crate::real::Real;

/// Largest node count per axis before the interpolant is declined.
pub const MAX_NODES: usize = 160;

#[derive(Clone, Debug)]
struct Axis<T> {
    lo: T,
    hi: T,
    nodes: Vec<T>,
    bary: Vec<T>,
}

impl<T: Real> Axis<T> {
    fn new(lo: f64, hi: f64, p: usize) -> Self {
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let nodes = (0..p)
            .map(|k| {
                let v = if k == 0 {
                    hi
                } else if k == p - 1 {
                    lo
                } else {
                    mid + half * (std::f64::consts::PI * k as f64 / (p - 1) as f64).cos()
                };
                T::c(v)
            })
            .collect();
        let bary = (0..p)
            .map(|k| {
                let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                T::c(if k == 0 || k == p - 1 { 0.5 * s } else { s })
            })
            .collect();
        Self { lo: T::c(lo), hi: T::c(hi), nodes, bary }
    }

    fn contains(&self, v: T) -> bool {
        v >= self.lo && v <= self.hi
    }

    /// Lagrange basis values at `v` (barycentric form).
    fn basis(&self, v: T, out: &mut [T]) {
        if let Some(k) = self.nodes.iter().position(|x| *x == v) {
            out.fill(T::zero());
            out[k] = T::one();
            return;
        }
        let mut s = T::zero();
        for ((o, x), w) in out.iter_mut().zip(&self.nodes).zip(&self.bary) {
            *o = *w / (v - *x);
            s += *o;
        }
        let inv = T::one() / s;
        for o in out.iter_mut() {
            *o *= inv;
        }
    }
}

#[derive(Clone, Debug)]
pub struct GaussianSumInterpolant<T> {
    axes: Vec<Axis<T>>,
    /// Row-major `p_0 x p_1` (or length `p_0` in 1-D).
    values: Vec<T>,
}

/// Node count needed on an interval of length `len` for bandwidth `h`.
pub fn nodes_needed(len: f64, h: f64) -> usize {
    (5.0 * len / h).ceil() as usize + 12
}

impl<T: Real> GaussianSumInterpolant<T> {
    /// `lo`/`hi` give the box on which the interpolant is valid. Returns
    /// `None` for `d > 2` or when an axis would need more than [`MAX_NODES`].
    pub fn build(centers: &PointSet<T>, coef: &[T], h: f64, lo: &[f64], hi: &[f64]) -> Option<Self> {
        let d = centers.dim();
        assert_eq!(centers.len(), coef.len());
        if d == 0 || d > 2 || lo.len() != d || hi.len() != d {
            return None;
        }
        let mut axes = Vec::with_capacity(d);
        for k in 0..d {
            if !(hi[k] > lo[k]) || !lo[k].is_finite() || !hi[k].is_finite() {
                return None;
            }
            let p = nodes_needed(hi[k] - lo[k], h);
            if p > MAX_NODES {
                return None;
            }
            axes.push(Axis::new(lo[k], hi[k], p));
        }
        let inv = T::c(-0.5 / (h * h));
        let kernel_row = |axis: &Axis<T>, u: T, out: &mut Vec<T>| {
            out.clear();
            out.extend(axis.nodes.iter().map(|x| (*x - u) * (*x - u) * inv));
            T::exp_in_place(out);
        };
        let p0 = axes[0].nodes.len();
        let mut e0 = Vec::with_capacity(p0);
        let values = if d == 1 {
            let mut v = vec![T::zero(); p0];
            for (u, c) in centers.iter().zip(coef) {
                kernel_row(&axes[0], u[0], &mut e0);
                for (a, e) in v.iter_mut().zip(&e0) {
                    *a = c.mul_add(*e, *a);
                }
            }
            v
        } else {
            let p1 = axes[1].nodes.len();
            let mut e1 = Vec::with_capacity(p1);
            let mut v = vec![T::zero(); p0 * p1];
            for (u, c) in centers.iter().zip(coef) {
                kernel_row(&axes[0], u[0], &mut e0);
                kernel_row(&axes[1], u[1], &mut e1);
                for (row, a) in v.chunks_exact_mut(p1).zip(&e0) {
                    let s = *c * *a;
                    for (g, b) in row.iter_mut().zip(&e1) {
                        *g = s.mul_add(*b, *g);
                    }
                }
            }
            v
        };
        Some(Self { axes, values })
    }

    /// Work per evaluation, in multiply-adds.
    pub fn cost(&self) -> usize {
        self.values.len() + self.axes.iter().map(|a| a.nodes.len()).sum::<usize>()
    }

    pub fn contains(&self, z: &[T]) -> bool {
        self.axes.iter().zip(z).all(|(a, v)| a.contains(*v))
    }

    /// Interpolated value, or `None` if `z` lies outside the box.
    pub fn eval(&self, z: &[T], scratch: &mut Vec<T>) -> Option<T> {
        if z.len() != self.axes.len() || !self.contains(z) {
            return None;
        }
        let p0 = self.axes[0].nodes.len();
        if self.axes.len() == 1 {
            scratch.resize(p0, T::zero());
            self.axes[0].basis(z[0], scratch);
            return Some(scratch.iter().zip(&self.values).map(|(l, v)| *l * *v).sum());
        }
        let p1 = self.axes[1].nodes.len();
        scratch.resize(p0 + p1, T::zero());
        let (l0, l1) = scratch.split_at_mut(p0);
        self.axes[0].basis(z[0], l0);
        self.axes[1].basis(z[1], l1);
        let mut total = T::zero();
        for (row, a) in self.values.chunks_exact(p1).zip(l0.iter()) {
            if *a == T::zero() {
                continue;
            }
            let mut s = T::zero();
            for (g, b) in row.iter().zip(l1.iter()) {
                s = g.mul_add(*b, s);
            }
            total = a.mul_add(s, total);
        }
        Some(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{open_unit, stream, StreamTag};

    fn direct(centers: &PointSet<f64>, coef: &[f64], h: f64, z: &[f64]) -> f64 {
        centers
            .iter()
            .zip(coef)
            .map(|(u, c)| {
                let r2: f64 = u.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                c * (-0.5 * r2 / (h * h)).exp()
            })
            .sum()
    }

    fn random_sum(d: usize, n: usize, seed: u64) -> (PointSet<f64>, Vec<f64>) {
        let mut rng = stream(seed, StreamTag::Misc, 0);
        let mut c = PointSet::new(d);
        let mut w = Vec::new();
        for _ in 0..n {
            let u: Vec<f64> = (0..d).map(|_| 1.4 * open_unit(&mut rng) - 0.2).collect();
            c.push(&u);
            w.push(open_unit(&mut rng));
        }
        (c, w)
    }

    #[test]
    fn two_dimensional_sum_matches_direct() {
        for &h in &[0.2, 0.07] {
            let (c, w) = random_sum(2, 300, 3);
            let total: f64 = w.iter().sum();
            let it = GaussianSumInterpolant::build(&c, &w, h, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
            let mut rng = stream(9, StreamTag::Misc, 1);
            let mut buf = Vec::new();
            for _ in 0..2000 {
                let z = [open_unit(&mut rng), open_unit(&mut rng)];
                let e = direct(&c, &w, h, &z);
                let a = it.eval(&z, &mut buf).unwrap();
                assert!((a - e).abs() <= 1e-13 * total, "h={h} {a} vs {e}");
            }
        }
    }

    #[test]
    fn one_dimensional_and_nodes_reproduced() {
        let (c, w) = random_sum(1, 50, 5);
        let it = GaussianSumInterpolant::build(&c, &w, 0.2, &[-0.25], &[1.25]).unwrap();
        let mut buf = Vec::new();
        for z in [-0.25, 0.0, 0.123, 0.5, 1.25] {
            let a = it.eval(&[z], &mut buf).unwrap();
            assert!((a - direct(&c, &w, 0.2, &[z])).abs() < 1e-13 * 50.0);
        }
        for &x in &it.axes[0].nodes {
            let a = it.eval(&[x], &mut buf).unwrap();
            assert!((a - direct(&c, &w, 0.2, &[x])).abs() < 1e-13 * 50.0);
        }
    }

    #[test]
    fn outside_box_and_unsupported_shapes() {
        let (c, w) = random_sum(2, 10, 1);
        let it = GaussianSumInterpolant::build(&c, &w, 0.2, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(it.eval(&[1.01, 0.5], &mut Vec::new()).is_none());
        assert!(GaussianSumInterpolant::build(&c, &w, 0.001, &[0.0, 0.0], &[1.0, 1.0]).is_none());
        let (c3, w3) = random_sum(3, 10, 1);
        assert!(GaussianSumInterpolant::build(&c3, &w3, 0.2, &[0.0; 3], &[1.0; 3]).is_none());
        assert!(GaussianSumInterpolant::build(&c, &w, 0.2, &[0.0, f64::NEG_INFINITY], &[1.0, 1.0]).is_none());
    }

    #[test]
    fn node_rule() {
        assert_eq!(nodes_needed(1.0, 0.2), 37);
        assert_eq!(nodes_needed(1.5, 0.2), 50);
    }
}
