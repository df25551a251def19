//! Weighted Gaussian KDE over a fixed pilot sample and the defensive
//! mixture `q = (1 - eta) * kde + eta * p` built on top of it.
//!
//! Kernels live in standardized coordinates (see [`Standardizer`]). On
//! bounded coordinates each kernel is truncated to the support and
//! renormalized, so densities and samplers describe the same distribution.

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::input_models::{InputDensity, Standardizer};
use crate::linalg::Cholesky;
use crate::points::PointSet;
use crate::real::Real;
use crate::rng::open_unit;
use crate::special::{log_add_exp, norm_interval, norm_ppf, truncated_std_normal_ppf};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Active set floor: components with normalized weight below
/// `WEIGHT_FLOOR / m` are dropped.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Scalar bandwidth in standardized coordinates.
    Fixed(f64),
    /// Weighted normal-reference rule, reduced to a scalar by trace average.
    NormalReference,
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Fixed(0.2)
    }
}

impl Bandwidth {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Bandwidth::Fixed(h) if !(h > 0.0 && h.is_finite()) => {
                Err(Error::Config(format!("bandwidth must be positive, got {h}")))
            }
            _ => Ok(()),
        }
    }
}

/// Normal-reference bandwidth matrix and its scalar reduction.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalReference {
    /// Row-major `d x d` bandwidth (covariance) matrix `H`.
    pub matrix: Vec<f64>,
    /// `sqrt(trace(H) / d)`.
    pub scalar: f64,
    /// Whether a singular covariance forced the diagonal fallback.
    pub diagonal_fallback: bool,
}

/// `H = (4 / (d + 2))^(2 / (d + 4)) n^(-2 / (d + 4)) Sigma`, with `Sigma`
/// the (optionally weighted) sample covariance.
pub fn normal_reference_bandwidth<T: Real>(
    samples: &PointSet<T>,
    weights: Option<&[T]>,
    n: f64,
) -> Result<NormalReference> {
    let d = samples.dim();
    let m = samples.len();
    if m < 2 || !(n >= 2.0) {
        return Err(invalid("normal-reference rule needs at least two samples"));
    }
    let w: Vec<f64> = match weights {
        Some(w) if w.len() == m => w.iter().map(|v| v.f64()).collect(),
        Some(_) => return Err(invalid("one weight per sample required")),
        None => vec![1.0; m],
    };
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|v| v * v).sum();
    if !(sw > 0.0) {
        return Err(invalid("weights must have positive mass"));
    }
    let mut mean = vec![0.0; d];
    for (r, wi) in samples.iter().zip(&w) {
        for k in 0..d {
            mean[k] += wi * r[k].f64();
        }
    }
    mean.iter_mut().for_each(|v| *v /= sw);
    let mut cov = vec![0.0; d * d];
    for (r, wi) in samples.iter().zip(&w) {
        for a in 0..d {
            let da = r[a].f64() - mean[a];
            for b in 0..=a {
                cov[a * d + b] += wi * da * (r[b].f64() - mean[b]);
            }
        }
    }
    // unbiased for reliability weights
    let denom = sw - sw2 / sw;
    if !(denom > 0.0) {
        return Err(invalid("effective sample size too small for a covariance"));
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    // numerically singular: a pivot loses almost all of its diagonal
    let diagonal_fallback = match Cholesky::new(cov.clone(), d) {
        Ok(ch) => (0..d).any(|k| {
            let l = ch.row(k)[k];
            l * l <= 1e-12 * cov[k * d + k]
        }),
        Err(_) => true,
    };
    if diagonal_fallback {
        for a in 0..d {
            for b in 0..d {
                if a != b {
                    cov[a * d + b] = 0.0;
                }
            }
        }
    }
    let df = d as f64;
    let factor = (4.0 / (df + 2.0)).powf(2.0 / (df + 4.0)) * n.powf(-2.0 / (df + 4.0));
    let matrix: Vec<f64> = cov.iter().map(|v| v * factor).collect();
    let trace: f64 = (0..d).map(|k| matrix[k * d + k]).sum();
    if !(trace > 0.0) {
        return Err(Error::Numerical("normal-reference bandwidth is zero (all samples identical)".into()));
    }
    Ok(NormalReference { matrix, scalar: (trace / df).sqrt(), diagonal_fallback })
}

/// `sum_j exp(c_j) phi_h(z - u_j)` for isotropic Gaussian kernels, with the
/// centers stored column-major for vectorized distance evaluation.
#[derive(Clone, Debug)]
pub struct GaussianSum<T> {
    h: T,
    inv_2h2: T,
    cols: Vec<Vec<T>>,
    log_coef: Vec<T>,
    log_const: T,
}

impl<T: Real> GaussianSum<T> {
    pub fn new(centers: &PointSet<T>, log_coef: Vec<T>, h: T) -> Self {
        assert_eq!(centers.len(), log_coef.len());
        let d = centers.dim();
        let cols = (0..d).map(|k| centers.column(k)).collect();
        let df = d as f64;
        let log_const = T::c(-df * h.f64().ln() - 0.5 * df * LN_2PI);
        Self { h, inv_2h2: T::c(0.5 / (h.f64() * h.f64())), cols, log_coef, log_const }
    }

    pub fn len(&self) -> usize {
        self.log_coef.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_coef.is_empty()
    }

    pub fn bandwidth(&self) -> T {
        self.h
    }

    /// Log of the sum at `z`; `buf` is scratch space.
    pub fn log_eval(&self, z: &[T], buf: &mut Vec<T>) -> T {
        let n = self.len();
        if n == 0 {
            return T::neg_infinity();
        }
        buf.clear();
        buf.resize(n, T::zero());
        for (k, col) in self.cols.iter().enumerate() {
            let q = z[k];
            for (b, c) in buf.iter_mut().zip(col) {
                let u = q - *c;
                *b = u.mul_add(u, *b);
            }
        }
        let mut mx = T::neg_infinity();
        for (b, c) in buf.iter_mut().zip(&self.log_coef) {
            *b = *c - *b * self.inv_2h2;
            mx = mx.max(*b);
        }
        if mx == T::neg_infinity() {
            return mx;
        }
        for b in buf.iter_mut() {
            *b -= mx;
        }
        T::exp_in_place(buf);
        let s: T = buf.iter().copied().sum();
        mx + s.ln() + self.log_const
    }
}

/// Weighted Gaussian KDE in standardized coordinates.
#[derive(Clone, Debug)]
pub struct WeightedKde<T> {
    standardizer: Standardizer,
    alpha: T,
    pilot_count: usize,
    active: Vec<usize>,
    centers: PointSet<T>,
    weights: Vec<T>,
    log_trunc: Vec<T>,
    cumulative: Vec<f64>,
    sum: GaussianSum<T>,
    degenerate: bool,
}

impl<T: Real> WeightedKde<T> {
    /// Build from pilot points (standardized), soft failure probabilities at
    /// the pilots and the tempering exponent. If every probability is zero
    /// the KDE falls back to uniform weights and [`Self::is_degenerate`] is set.
    pub fn build(
        pilot_z: &PointSet<T>,
        probs: &[T],
        alpha: T,
        bandwidth: Bandwidth,
        standardizer: &Standardizer,
    ) -> Result<Self> {
        let m = pilot_z.len();
        if m == 0 {
            return Err(invalid("pilot sample is empty"));
        }
        if probs.len() != m {
            return Err(invalid(format!("{} probabilities for {m} pilot points", probs.len())));
        }
        if pilot_z.dim() != standardizer.dim() {
            return Err(invalid("pilot dimension does not match the standardizer"));
        }
        if !(alpha > T::zero() && alpha <= T::one()) {
            return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= T::zero() && **p <= T::one())) {
            return Err(invalid(format!("probability {p} outside [0, 1]")));
        }
        bandwidth.validate()?;
        let raw: Vec<f64> = probs.iter().map(|p| if *p == T::zero() { 0.0 } else { p.f64().powf(alpha.f64()) }).collect();
        let total: f64 = raw.iter().sum();
        let degenerate = !(total > 0.0);
        let raw = if degenerate { vec![1.0; m] } else { raw };
        let total = if degenerate { m as f64 } else { total };
        let floor = WEIGHT_FLOOR / m as f64;
        let active: Vec<usize> = (0..m).filter(|&j| raw[j] / total >= floor).collect();
        let kept: f64 = active.iter().map(|&j| raw[j]).sum();

        let d = pilot_z.dim();
        let mut centers = PointSet::with_capacity(d, active.len());
        for &j in &active {
            centers.push(pilot_z.row(j));
        }
        let weights: Vec<T> = active.iter().map(|&j| T::c(raw[j] / kept)).collect();
        let h = match bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::NormalReference => {
                let wsum: f64 = weights.iter().map(|w| w.f64()).sum();
                let w2: f64 = weights.iter().map(|w| w.f64() * w.f64()).sum();
                normal_reference_bandwidth(&centers, Some(&weights), (wsum * wsum / w2).max(2.0))?.scalar
            }
        };
        let (lo, hi) = standardizer.z_support();
        let log_trunc: Vec<T> = centers
            .iter()
            .map(|u| {
                let mut s = 0.0;
                for k in 0..d {
                    if lo[k].is_finite() || hi[k].is_finite() {
                        let uk = u[k].f64();
                        s += norm_interval((lo[k] - uk) / h, (hi[k] - uk) / h).ln();
                    }
                }
                T::c(s)
            })
            .collect();
        let log_coef = weights.iter().zip(&log_trunc).map(|(w, z)| w.ln() - *z).collect();
        let sum = GaussianSum::new(&centers, log_coef, T::c(h));
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w.f64();
                acc
            })
            .collect();
        Ok(Self {
            standardizer: standardizer.clone(),
            alpha,
            pilot_count: m,
            active,
            centers,
            weights,
            log_trunc,
            cumulative,
            sum,
            degenerate,
        })
    }

    pub fn dim(&self) -> usize {
        self.centers.dim()
    }

    pub fn bandwidth(&self) -> T {
        self.sum.bandwidth()
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn pilot_count(&self) -> usize {
        self.pilot_count
    }

    /// Pilot indices that carry weight above the floor.
    pub fn active_indices(&self) -> &[usize] {
        &self.active
    }

    /// Normalized weights of the active components.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn centers(&self) -> &PointSet<T> {
        &self.centers
    }

    /// `ln Z_j`, the log mass of each truncated kernel inside the support.
    pub fn log_truncation(&self) -> &[T] {
        &self.log_trunc
    }

    /// True when every pilot probability was zero and uniform weights were used.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    fn in_z_support(&self, z: &[T]) -> bool {
        let (lo, hi) = self.standardizer.z_support();
        z.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| v.f64() >= *a && v.f64() <= *b)
    }

    /// Log density in standardized coordinates.
    pub fn log_density_z(&self, z: &[T], buf: &mut Vec<T>) -> T {
        if !self.in_z_support(z) {
            return T::neg_infinity();
        }
        self.sum.log_eval(z, buf)
    }

    /// Log density at `x` in native units.
    pub fn log_density(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dim() {
            return Err(invalid("query point dimension mismatch"));
        }
        let mut z = vec![T::zero(); x.len()];
        self.standardizer.to_z(x, &mut z);
        Ok(self.log_density_z(&z, &mut Vec::new()) - T::c(self.standardizer.log_jacobian()))
    }

    /// One draw in standardized coordinates.
    pub fn sample_z<R: RngCore + ?Sized>(&self, rng: &mut R, out: &mut [T]) {
        let u = open_unit(rng);
        let j = self.cumulative.partition_point(|c| *c < u).min(self.weights.len() - 1);
        let center = self.centers.row(j);
        let h = self.bandwidth().f64();
        let (lo, hi) = self.standardizer.z_support();
        for k in 0..self.dim() {
            let c = center[k].f64();
            let v = open_unit(rng);
            let e = if lo[k].is_finite() || hi[k].is_finite() {
                truncated_std_normal_ppf((lo[k] - c) / h, (hi[k] - c) / h, v)
            } else {
                norm_ppf(v)
            };
            out[k] = T::c((c + h * e).clamp(lo[k], hi[k]));
        }
    }
}

/// `q(x) = (1 - eta) * kde(x) + eta * p(x)`.
#[derive(Clone, Debug)]
pub struct MixtureProposal<T> {
    kde: Arc<WeightedKde<T>>,
    eta: T,
    input: Arc<InputDensity>,
}

impl<T: Real> MixtureProposal<T> {
    pub fn new(kde: Arc<WeightedKde<T>>, eta: T, input: Arc<InputDensity>) -> Result<Self> {
        if !(eta >= T::zero() && eta <= T::one()) {
            return Err(invalid(format!("exploration weight must lie in [0, 1], got {eta}")));
        }
        if kde.dim() != input.dim() {
            return Err(invalid("KDE and input density dimensions differ"));
        }
        Ok(Self { kde, eta, input })
    }

    pub fn kde(&self) -> &Arc<WeightedKde<T>> {
        &self.kde
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn input(&self) -> &Arc<InputDensity> {
        &self.input
    }

    /// Combine already computed `ln kde(x)` and `ln p(x)`.
    pub fn combine(&self, log_kde: T, log_p: T) -> T {
        if self.eta == T::one() {
            return log_p;
        }
        if self.eta == T::zero() {
            return log_kde;
        }
        log_add_exp((T::one() - self.eta).ln() + log_kde, self.eta.ln() + log_p)
    }

    pub fn mixture_log_density(&self, x: &[T]) -> Result<T> {
        let lp = self.input.log_density(x)?;
        if self.eta == T::one() {
            return Ok(lp);
        }
        let lk = self.kde.log_density(x)?;
        Ok(self.combine(lk, lp))
    }

    /// Draw `n` points; the second vector marks draws from the exploration branch.
    pub fn sample_with_branches<R: RngCore + ?Sized>(&self, rng: &mut R, n: usize) -> Result<(PointSet<T>, Vec<bool>)> {
        if n == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        let d = self.kde.dim();
        let std = self.kde.standardizer();
        let (lo, hi): (Vec<f64>, Vec<f64>) = self.input.marginals().iter().map(|m| m.support()).unzip();
        let mut pts = PointSet::with_capacity(d, n);
        let mut branch = Vec::with_capacity(n);
        let mut z = vec![T::zero(); d];
        let mut x = vec![T::zero(); d];
        let eta = self.eta.f64();
        for _ in 0..n {
            let explore = eta >= 1.0 || (eta > 0.0 && open_unit(rng) < eta);
            if explore {
                self.input.sample_one(rng, &mut x);
            } else {
                self.kde.sample_z(rng, &mut z);
                std.to_x(&z, &mut x);
                for k in 0..d {
                    x[k] = T::c(x[k].f64().clamp(lo[k], hi[k]));
                }
            }
            pts.push(&x);
            branch.push(explore);
        }
        Ok((pts, branch))
    }

    pub fn sample_mixture<R: RngCore + ?Sized>(&self, rng: &mut R, n: usize) -> Result<PointSet<T>> {
        Ok(self.sample_with_branches(rng, n)?.0)
    }
}

/// `eta_n = min(1, c n^-gamma)`.
pub fn eta_schedule(n: usize, c: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!("0 < gamma < 1 required, got {gamma}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("c must be positive, got {c}")));
    }
    if n == 0 {
        return Err(invalid("iteration index starts at 1"));
    }
    Ok((c * (n as f64).powf(-gamma)).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::input_models::Marginal;
    use crate::rng::{stream, StreamTag};
    use crate::special::{norm_cdf, norm_pdf};

    fn unbounded_1d() -> (InputDensity, Standardizer) {
        // mean 0.5, sd 0.125: the standardized box is exactly [0, 1] with unit width
        let p = InputDensity::new(vec![Marginal::normal(0.5, 0.125).unwrap()]).unwrap();
        let s = p.standardizer();
        (p, s)
    }

    fn square(a: f64, b: f64) -> InputDensity {
        InputDensity::new(vec![Marginal::uniform(a, b).unwrap(), Marginal::uniform(a, b).unwrap()]).unwrap()
    }

    #[test]
    fn weight_examples() {
        let (_, s) = unbounded_1d();
        let pts = PointSet::from_flat(1, vec![0.1, 0.2, 0.3, 0.4]);
        let kde = WeightedKde::build(&pts, &[0.5; 4], 0.61, Bandwidth::Fixed(0.2), &s).unwrap();
        assert!(kde.weights().iter().all(|w| (*w - 0.25_f64).abs() < 1e-15));

        let pts = PointSet::from_flat(1, vec![0.1, 0.2]);
        let kde = WeightedKde::build(&pts, &[1.0, 0.0], 0.97, Bandwidth::Fixed(0.2), &s).unwrap();
        assert_eq!(kde.active_indices(), &[0]);
        assert_eq!(kde.weights(), &[1.0]);

        let kde = WeightedKde::build(&pts, &[0.25, 0.5], 1.0, Bandwidth::Fixed(0.2), &s).unwrap();
        assert!((kde.weights()[0] - 1.0_f64 / 3.0).abs() < 1e-15);
        assert!((kde.weights()[1] - 2.0_f64 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_zero_probabilities_flag_degenerate() {
        let (_, s) = unbounded_1d();
        let pts = PointSet::from_flat(1, vec![0.1, 0.2, 0.7]);
        let kde = WeightedKde::build(&pts, &[0.0; 3], 0.97, Bandwidth::Fixed(0.2), &s).unwrap();
        assert!(kde.is_degenerate());
        assert_eq!(kde.weights().len(), 3);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let (_, s) = unbounded_1d();
        let pts = PointSet::from_flat(1, vec![0.1, 0.2]);
        assert!(WeightedKde::build(&pts, &[0.5, 1.5], 1.0, Bandwidth::Fixed(0.2), &s).is_err());
        assert!(WeightedKde::build(&pts, &[0.5, 0.5], 0.0, Bandwidth::Fixed(0.2), &s).is_err());
        assert!(WeightedKde::build(&pts, &[0.5], 1.0, Bandwidth::Fixed(0.2), &s).is_err());
        assert!(WeightedKde::build(&pts, &[0.5, 0.5], 1.0, Bandwidth::Fixed(-1.0), &s).is_err());
        assert!(WeightedKde::build(&PointSet::<f64>::new(1), &[], 1.0, Bandwidth::Fixed(0.2), &s).is_err());
    }

    #[test]
    fn tiny_weights_leave_the_active_set() {
        let (_, s) = unbounded_1d();
        let pts = PointSet::from_flat(1, vec![0.1, 0.2, 0.3]);
        let kde = WeightedKde::build(&pts, &[1.0, 1e-20, 0.5], 1.0, Bandwidth::Fixed(0.2), &s).unwrap();
        assert_eq!(kde.active_indices(), &[0, 2]);
        let sum: f64 = kde.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn silverman_constant_in_one_dimension() {
        // unit-variance sample: symmetric standardized points
        let v: Vec<f64> = (0..1000).map(|i| norm_ppf((i as f64 + 0.5) / 1000.0)).collect();
        let var = v.iter().map(|x| x * x).sum::<f64>() / 999.0;
        let pts = PointSet::from_flat(1, v);
        let n = 1000.0_f64;
        let nr = normal_reference_bandwidth(&pts, None, n).unwrap();
        let want = (4.0_f64 / 3.0).powf(0.2) * n.powf(-0.2) * var.sqrt();
        assert!((nr.scalar - want).abs() < 1e-12);
        assert!(((4.0_f64 / 3.0).powf(0.2) - 1.0592).abs() < 1e-4);
    }

    #[test]
    fn normal_reference_scales_quadratically() {
        let raw: Vec<f64> = (0..200).flat_map(|i| [(i as f64 * 0.37).sin(), (i as f64 * 0.71).cos()]).collect();
        let a = normal_reference_bandwidth(&PointSet::from_flat(2, raw.clone()), None, 200.0).unwrap();
        let scaled: Vec<f64> = raw.iter().map(|v| 3.0 * v).collect();
        let b = normal_reference_bandwidth(&PointSet::from_flat(2, scaled), None, 200.0).unwrap();
        for (x, y) in a.matrix.iter().zip(&b.matrix) {
            assert!((9.0 * x - y).abs() < 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn normal_reference_identity_in_two_dimensions() {
        // four points (+-s, +-s) whose unbiased covariance is exactly I
        let s = 0.75_f64.sqrt();
        let pts = PointSet::from_flat(2, vec![s, s, -s, -s, s, -s, -s, s]);
        let nr = normal_reference_bandwidth(&pts, None, 100.0).unwrap();
        let direct = 100.0_f64.powf(-1.0 / 3.0);
        assert!((direct - 0.2154).abs() < 1e-4);
        assert!((nr.matrix[0] - direct).abs() < 1e-12, "{:?}", nr.matrix);
        assert!((nr.matrix[3] - direct).abs() < 1e-12);
        assert!(nr.matrix[1].abs() < 1e-12);
    }

    #[test]
    fn singular_covariance_falls_back_to_diagonal() {
        let pts = PointSet::from_flat(2, (0..10).flat_map(|i| [i as f64, 2.0 * i as f64]).collect::<Vec<f64>>());
        let nr = normal_reference_bandwidth(&pts, None, 10.0).unwrap();
        assert!(nr.diagonal_fallback);
        assert_eq!(nr.matrix[1], 0.0);
    }

    #[test]
    fn single_component_mode_value() {
        let (_, s) = unbounded_1d();
        let kde = WeightedKde::build(&PointSet::from_flat(1, vec![0.0]), &[1.0], 1.0, Bandwidth::Fixed(1.0), &s).unwrap();
        let v = kde.log_density_z(&[0.0_f64], &mut Vec::new()).exp();
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_is_symmetric() {
        let (_, s) = unbounded_1d();
        let kde =
            WeightedKde::build(&PointSet::from_flat(1, vec![-1.0, 1.0]), &[0.3, 0.3], 0.5, Bandwidth::Fixed(1.0), &s).unwrap();
        let mut buf = Vec::new();
        for i in 0..50 {
            let x = i as f64 * 0.13;
            let a = kde.log_density_z(&[x], &mut buf).exp();
            let b = kde.log_density_z(&[-x], &mut buf).exp();
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = 0.5 * (f(a) + f(b));
        for i in 1..n {
            s += f(a + i as f64 * h);
        }
        s * h
    }

    #[test]
    fn ten_component_density_integrates_to_one() {
        let (p, s) = unbounded_1d();
        let c: Vec<f64> = (0..10).map(|i| 0.05 + 0.1 * i as f64).collect();
        let w: Vec<f64> = (0..10).map(|i| 0.1 + 0.09 * i as f64).collect();
        let kde = WeightedKde::build(&PointSet::from_flat(1, c), &w, 0.97, Bandwidth::Fixed(0.2), &s).unwrap();
        let total = trapezoid(|x| kde.log_density(&[x]).unwrap().exp(), -3.0, 4.0, 20_000);
        assert!((total - 1.0).abs() < 1e-4, "{total}");
        // the mixture on top of it too
        let q = MixtureProposal::new(Arc::new(kde), 0.3, Arc::new(p)).unwrap();
        let total = trapezoid(|x| q.mixture_log_density(&[x]).unwrap().exp(), -3.0, 4.0, 20_000);
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn truncated_kernels_integrate_to_one_on_a_box() {
        let p = square(-2.0, 2.0);
        let s = p.standardizer();
        let pts = PointSet::from_flat(2, vec![0.02, 0.5, 0.97, 0.99, 0.4, 0.1]);
        let kde = WeightedKde::build(&pts, &[0.9, 0.4, 1.0], 0.97, Bandwidth::Fixed(0.2), &s).unwrap();
        let n = 400;
        let hx = 4.0 / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let wi = if i == 0 || i == n { 0.5 } else { 1.0 };
                let wj = if j == 0 || j == n { 0.5 } else { 1.0 };
                let x = [-2.0 + i as f64 * hx, -2.0 + j as f64 * hx];
                total += wi * wj * kde.log_density(&x).unwrap().exp();
            }
        }
        total *= hx * hx;
        assert!((total - 1.0).abs() < 1e-4, "{total}");
        assert_eq!(kde.log_density(&[2.5, 0.0]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn truncated_density_matches_closed_form() {
        let p = InputDensity::new(vec![Marginal::uniform(0.0, 1.0).unwrap()]).unwrap();
        let s = p.standardizer();
        let kde = WeightedKde::build(&PointSet::from_flat(1, vec![0.1]), &[1.0], 1.0, Bandwidth::Fixed(0.2), &s).unwrap();
        let z = norm_cdf(0.9 / 0.2) - norm_cdf(-0.1 / 0.2);
        for x in [0.0_f64, 0.1, 0.55, 1.0] {
            let want = norm_pdf((x - 0.1) / 0.2) / 0.2 / z;
            assert!((kde.log_density(&[x]).unwrap().exp() - want).abs() < 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn mixture_density_edge_cases() {
        let (p, s) = unbounded_1d();
        let p = Arc::new(p);
        let kde = Arc::new(
            WeightedKde::build(&PointSet::from_flat(1, vec![0.3, 0.6]), &[0.5, 0.7], 0.97, Bandwidth::Fixed(0.2), &s).unwrap(),
        );
        let x = [0.41];
        let q1 = MixtureProposal::new(kde.clone(), 1.0, p.clone()).unwrap();
        assert_eq!(q1.mixture_log_density(&x).unwrap(), p.log_density(&x).unwrap());
        let q0 = MixtureProposal::new(kde.clone(), 0.0, p.clone()).unwrap();
        assert_eq!(q0.mixture_log_density(&x).unwrap(), kde.log_density(&x).unwrap());
        let qh = MixtureProposal::new(kde, 0.5, p).unwrap();
        assert!((qh.combine(0.2_f64.ln(), 0.4_f64.ln()).exp() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn eta_examples() {
        assert!((eta_schedule(1, 0.3, 0.5).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(eta_schedule(1, 2.0, 0.5).unwrap(), 1.0);
        assert!((eta_schedule(100, 0.3, 0.5).unwrap() - 0.03).abs() < 1e-15);
        assert!(matches!(eta_schedule(3, 0.3, 1.5), Err(Error::Config(_))));
        assert!(eta_schedule(3, 0.3, 0.0).is_err());
    }

    #[test]
    fn eta_one_samples_from_input_density() {
        let p = Arc::new(square(-1.0, 1.0));
        let s = p.standardizer();
        let kde = Arc::new(WeightedKde::build(&PointSet::from_flat(2, vec![0.9, 0.9]), &[1.0], 1.0, Bandwidth::Fixed(0.01), &s).unwrap());
        let q = MixtureProposal::new(kde, 1.0, p.clone()).unwrap();
        let (pts, br) = q.sample_with_branches(&mut stream(1, StreamTag::Misc, 0), 20_000).unwrap();
        assert!(br.iter().all(|b| *b));
        let mean: f64 = pts.column(0).iter().sum::<f64>() / 20_000.0;
        assert!(mean.abs() < 3.0 * (1.0_f64 / 3.0 / 20_000.0).sqrt());
    }

    #[test]
    fn eta_zero_single_component_is_gaussian() {
        let (p, s) = unbounded_1d();
        let kde = Arc::new(WeightedKde::build(&PointSet::from_flat(1, vec![0.4]), &[1.0], 1.0, Bandwidth::Fixed(0.1), &s).unwrap());
        let q = MixtureProposal::new(kde, 0.0, Arc::new(p)).unwrap();
        let n = 50_000;
        let x = q.sample_mixture(&mut stream(2, StreamTag::Misc, 0), n).unwrap().column(0);
        let m = x.iter().sum::<f64>() / n as f64;
        let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1) as f64;
        assert!((m - 0.4).abs() < 4.0 * 0.1 / (n as f64).sqrt());
        assert!((v.sqrt() - 0.1).abs() < 0.002);
    }

    #[test]
    fn exploration_fraction_is_binomial() {
        let (p, s) = unbounded_1d();
        let kde = Arc::new(WeightedKde::build(&PointSet::from_flat(1, vec![0.4]), &[1.0], 1.0, Bandwidth::Fixed(0.1), &s).unwrap());
        let q = MixtureProposal::new(kde, 0.3, Arc::new(p)).unwrap();
        let n = 100_000;
        let (_, br) = q.sample_with_branches(&mut stream(3, StreamTag::Misc, 0), n).unwrap();
        let frac = br.iter().filter(|b| **b).count() as f64 / n as f64;
        assert!((frac - 0.3).abs() < 3.0 * (0.21 / n as f64).sqrt());
    }

    #[test]
    fn samples_match_density_by_chi_square() {
        // bounded 1-D support so every bin has a closed-form probability by quadrature
        let p = Arc::new(InputDensity::new(vec![Marginal::uniform(0.0, 1.0).unwrap()]).unwrap());
        let s = p.standardizer();
        let kde = Arc::new(
            WeightedKde::build(&PointSet::from_flat(1, vec![0.05, 0.5, 0.8]), &[0.2, 1.0, 0.6], 0.97, Bandwidth::Fixed(0.1), &s)
                .unwrap(),
        );
        let q = MixtureProposal::new(kde, 0.2, p).unwrap();
        let n = 1_000_000;
        let bins = 40;
        let mut counts = vec![0usize; bins];
        for x in q.sample_mixture(&mut stream(4, StreamTag::Misc, 0), n).unwrap().column(0) {
            counts[((x * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let mut chi2 = 0.0;
        for (b, c) in counts.iter().enumerate() {
            let a = b as f64 / bins as f64;
            let prob = trapezoid(|x| q.mixture_log_density(&[x]).unwrap().exp(), a, a + 1.0 / bins as f64, 200);
            let e = prob * n as f64;
            chi2 += (*c as f64 - e).powi(2) / e;
        }
        // 1% critical value of chi-square with 39 degrees of freedom
        assert!(chi2 < 62.43, "chi2 = {chi2}");
    }

    #[test]
    fn mixture_never_below_eta_p() {
        let p = Arc::new(square(-8.0, 8.0));
        let s = p.standardizer();
        let pts = p.sample::<f64, _>(&mut stream(5, StreamTag::Misc, 0), 50).unwrap();
        let probs: Vec<f64> = (0..50).map(|i| (i % 7) as f64 / 6.0).collect();
        let kde = Arc::new(WeightedKde::build(&s.points_to_z(&pts), &probs, 0.97, Bandwidth::Fixed(0.2), &s).unwrap());
        let q = MixtureProposal::new(kde, 0.07, p.clone()).unwrap();
        for i in 0..400 {
            let x = [-8.0 + 16.0 * ((i as f64 * 0.618).fract()), -8.0 + 16.0 * ((i as f64 * 0.414).fract())];
            let lq = q.mixture_log_density(&x).unwrap();
            let lp = p.log_density(&x).unwrap();
            assert!(lq >= 0.07_f64.ln() + lp - 1e-12);
        }
    }

    #[test]
    fn works_in_f32() {
        let (_, s) = unbounded_1d();
        let kde = WeightedKde::build(&PointSet::from_flat(1, vec![0.0_f32]), &[1.0], 1.0, Bandwidth::Fixed(1.0), &s).unwrap();
        let v = kde.log_density_z(&[0.0_f32], &mut Vec::new()).exp();
        assert!((v - 0.398_942_3).abs() < 1e-6);
    }
}
