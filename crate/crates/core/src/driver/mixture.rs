//! Running evaluation of the count-weighted proposal mixture at a growing
//! set of points.
//!
//! Every point keeps `acc = sum_k N_k (1 - eta_k) kde_k(z)` over the
//! snapshots seen so far (standardized density) and the index of the next
//! snapshot it still has to include, so each (point, snapshot) pair is
//! evaluated at most once.

use std::sync::Arc;

use crate::chebyshev::GaussianSumInterpolant;
use crate::error::Result;
use crate::input_models::{InputDensity, Standardizer};
use crate::points::PointSet;
use crate::proposal_kde::WeightedKde;
use crate::real::Real;
use crate::special::log_add_exp;

/// Interpolation box edge used on unbounded standardized axes.
const OPEN_AXIS_MARGIN: f64 = 0.25;

struct Component<T> {
    coef: f64,
    kde: Arc<WeightedKde<T>>,
    interp: Option<GaussianSumInterpolant<T>>,
}

pub(crate) struct MixtureTracker<T> {
    input: Arc<InputDensity>,
    std: Standardizer,
    log_jac: f64,
    explore: f64,
    total: usize,
    comps: Vec<Component<T>>,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct TrackedPoints<T> {
    pub x: PointSet<T>,
    pub z: PointSet<T>,
    log_p: Vec<f64>,
    acc: Vec<f64>,
    upto: Vec<usize>,
}

impl<T: Real> TrackedPoints<T> {
    pub fn new(dim: usize) -> Self {
        Self { x: PointSet::new(dim), z: PointSet::new(dim), ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.log_p.len()
    }
}

fn interpolant_for<T: Real>(kde: &WeightedKde<T>, std: &Standardizer) -> Option<GaussianSumInterpolant<T>> {
    let d = kde.dim();
    if d > 2 {
        return None;
    }
    let (zl, zh) = std.z_support();
    let lo: Vec<f64> = zl.iter().map(|v| if v.is_finite() { *v } else { -OPEN_AXIS_MARGIN }).collect();
    let hi: Vec<f64> = zh.iter().map(|v| if v.is_finite() { *v } else { 1.0 + OPEN_AXIS_MARGIN }).collect();
    let h = kde.bandwidth().f64();
    let log_const = -(d as f64) * (h.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln());
    let coef: Vec<T> = kde
        .weights()
        .iter()
        .zip(kde.log_truncation())
        .map(|(w, lz)| T::c((w.f64().ln() - lz.f64() + log_const).exp()))
        .collect();
    let it = GaussianSumInterpolant::build(kde.centers(), &coef, h, &lo, &hi)?;
    // only worth it when cheaper than summing the kernels
    (it.cost() < kde.weights().len() * (d + 2)).then_some(it)
}

impl<T: Real> MixtureTracker<T> {
    pub fn new(input: Arc<InputDensity>, n0: usize) -> Self {
        let std = input.standardizer();
        let log_jac = std.log_jacobian();
        Self { input, std, log_jac, explore: n0 as f64, total: n0, comps: Vec::new() }
    }

    /// Register `count` draws from `(1 - eta) kde + eta p`.
    pub fn push(&mut self, kde: Arc<WeightedKde<T>>, eta: f64, count: usize) {
        self.explore += count as f64 * eta;
        self.total += count;
        let coef = count as f64 * (1.0 - eta);
        if coef > 0.0 {
            let interp = interpolant_for(&kde, &self.std);
            self.comps.push(Component { coef, kde, interp });
        }
    }

    pub fn add_points(&self, pts: &mut TrackedPoints<T>, xs: &PointSet<T>) -> Result<()> {
        let mut z = vec![T::zero(); xs.dim()];
        for x in xs.iter() {
            self.std.to_z(x, &mut z);
            pts.x.push(x);
            pts.z.push(&z);
            pts.log_p.push(self.input.log_density(x)?.f64());
            pts.acc.push(0.0);
            pts.upto.push(0);
        }
        Ok(())
    }

    /// Bring point `i` up to date; `exact` forces direct kernel sums.
    pub fn catch_up(&self, pts: &mut TrackedPoints<T>, i: usize, exact: bool, buf: &mut Vec<T>) {
        let z = pts.z.row(i);
        let mut acc = pts.acc[i];
        for c in &self.comps[pts.upto[i]..] {
            let v = match (&c.interp, exact) {
                (Some(it), false) => it.eval(z, buf).map(|v| v.f64().max(0.0)),
                _ => None,
            };
            let v = v.unwrap_or_else(|| c.kde.log_density_z(z, buf).f64().exp());
            acc += c.coef * v;
        }
        pts.acc[i] = acc;
        pts.upto[i] = self.comps.len();
    }

    /// `ln qbar(x_i)` in native units; assumes `catch_up` was called.
    pub fn log_qbar(&self, pts: &TrackedPoints<T>, i: usize) -> f64 {
        debug_assert_eq!(pts.upto[i], self.comps.len());
        let lp = pts.log_p[i];
        let a = if self.explore > 0.0 { self.explore.ln() + lp } else { f64::NEG_INFINITY };
        let b = if pts.acc[i] > 0.0 { pts.acc[i].ln() - self.log_jac } else { f64::NEG_INFINITY };
        log_add_exp(a, b) - (self.total as f64).ln()
    }

    /// `p(x_i) / qbar(x_i)`.
    pub fn weight(&self, pts: &TrackedPoints<T>, i: usize) -> f64 {
        let lp = pts.log_p[i];
        if lp == f64::NEG_INFINITY {
            return 0.0;
        }
        (lp - self.log_qbar(pts, i)).exp()
    }

    pub fn uses_interpolation(&self) -> bool {
        self.comps.iter().any(|c| c.interp.is_some())
    }
}
