//! Exact Gaussian-process regression on oracle evaluations.
//!
//! Inputs are mapped into standardized coordinates before any kernel
//! distance is taken, outputs are centered and scaled to unit variance.
//! The covariance is `sf2 * (R + nugget * I)` where `R` is a correlation
//! kernel with one lengthscale per input; `sf2` is profiled out of the
//! likelihood in closed form, so the numerical search runs over the
//! log-lengthscales only.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::input_models::Standardizer;
use crate::linalg::{axpy, dot, Cholesky};
use crate::optim::{maximize, LbfgsOptions};
use crate::points::{halton, Dataset, PointSet};
use crate::real::Real;
use crate::special::norm_sf;

/// Below this posterior standard deviation (in standardized output units)
/// the soft failure probability collapses to the indicator.
pub const SIGMA_FLOOR: f64 = 1e-12;

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    SquaredExponential,
    Matern52,
}

impl KernelFamily {
    /// Correlation as a function of the scaled squared distance.
    #[inline]
    pub fn corr(self, r2: f64) -> f64 {
        match self {
            Self::SquaredExponential => (-0.5 * r2).exp(),
            Self::Matern52 => {
                let r = r2.sqrt();
                (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * (-SQRT5 * r).exp()
            }
        }
    }

    /// `d corr / d log(l_k)` divided by the per-coordinate term `(dx_k / l_k)^2`.
    #[inline]
    fn dcorr_factor(self, r2: f64) -> f64 {
        match self {
            Self::SquaredExponential => (-0.5 * r2).exp(),
            Self::Matern52 => {
                let r = r2.sqrt();
                5.0 / 3.0 * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp()
            }
        }
    }

    /// Batched correlation: `buf` holds scaled squared distances on entry.
    fn corr_in_place<T: Real>(self, buf: &mut [T]) {
        match self {
            Self::SquaredExponential => T::exp_neg_half_in_place(buf),
            Self::Matern52 => {
                let s5 = T::c(SQRT5);
                let c53 = T::c(5.0 / 3.0);
                let mut poly = Vec::with_capacity(buf.len());
                for v in buf.iter_mut() {
                    let r = v.sqrt();
                    poly.push(T::one() + s5 * r + c53 * *v);
                    *v = -s5 * r;
                }
                T::exp_in_place(buf);
                for (v, p) in buf.iter_mut().zip(poly) {
                    *v *= p;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelConfig<T> {
    pub family: KernelFamily,
    /// One per input dimension, in standardized coordinates.
    pub lengthscales: Vec<T>,
    /// Prior variance of the latent function.
    pub signal_variance: T,
    /// Diagonal jitter relative to `signal_variance`.
    pub nugget: T,
}

impl<T: Real> KernelConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.iter().any(|l| !(*l > T::zero()) || !l.is_finite()) {
            return Err(invalid("lengthscales must be positive"));
        }
        if !(self.signal_variance > T::zero()) {
            return Err(invalid("signal variance must be positive"));
        }
        if !(self.nugget >= T::zero()) {
            return Err(invalid("nugget must be nonnegative"));
        }
        Ok(())
    }

    /// Prior covariance between two standardized points.
    pub fn eval(&self, a: &[T], b: &[T]) -> T {
        let r2 = scaled_sq_dist(a, b, &self.lengthscales);
        self.signal_variance * T::c(self.family.corr(r2.f64()))
    }
}

#[inline]
fn scaled_sq_dist<T: Real>(a: &[T], b: &[T], ls: &[T]) -> T {
    let mut s = T::zero();
    for k in 0..a.len() {
        let u = (a[k] - b[k]) / ls[k];
        s = u.mul_add(u, s);
    }
    s
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    /// Number of deterministic starting points for the likelihood search.
    pub n_starts: usize,
    /// How many of the best-scoring starts get a full local optimization.
    pub n_local: usize,
    /// Hyperparameters are learned on at most this many points.
    pub max_fit_points: usize,
    pub nugget: f64,
    pub max_nugget: f64,
    pub min_lengthscale: f64,
    pub max_lengthscale: f64,
    pub lbfgs: LbfgsOptions,
    /// Lengthscales from a previous fit, tried as an extra start.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_starts: 8,
            n_local: 8,
            max_fit_points: 300,
            nugget: 1e-8,
            max_nugget: 1e-2,
            min_lengthscale: 1e-3,
            max_lengthscale: 3.0,
            lbfgs: LbfgsOptions { max_iters: 40, ..LbfgsOptions::default() },
            warm_start: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitReport {
    /// Profiled log marginal likelihood at each start, in start order.
    pub start_lml: Vec<f64>,
    /// Value at the returned hyperparameters (on the fitting subset).
    pub best_lml: f64,
    pub likelihood_evals: usize,
    pub fit_points: usize,
    pub nugget: f64,
}

/// Trained surrogate. Immutable; all queries take `&self`.
#[derive(Clone, Debug)]
pub struct GpPosterior<T: Real> {
    standardizer: Standardizer,
    family: KernelFamily,
    lengthscales: Vec<T>,
    /// Training inputs in standardized coordinates divided by the lengthscale, column-major.
    cols: Vec<Vec<T>>,
    z_train: PointSet<T>,
    y_mean: T,
    y_scale: T,
    sf2: T,
    nugget: T,
    chol: Option<Cholesky<T>>,
    /// Jittered training correlation matrix, row-major.
    train_corr: Vec<T>,
    alpha: Vec<T>,
    report: FitReport,
}

const GROUP_SIZE: usize = 48;

struct Neighbourhoods<T> {
    owner: Vec<usize>,
    groups: Vec<(Vec<usize>, Cholesky<T>)>,
}

/// Result of evaluating soft failure probabilities on a large point set.
#[derive(Clone, Debug, Default)]
pub struct SoftProbBatch<T> {
    pub probs: Vec<T>,
    pub means: Vec<T>,
    /// How many points needed the full posterior variance.
    pub exact_variances: usize,
}

struct Standardized<T> {
    z: PointSet<T>,
    y: Vec<T>,
    mean: T,
    scale: T,
}

fn standardize<T: Real>(data: &Dataset<T>, std: &Standardizer) -> Result<Standardized<T>> {
    let n = data.len();
    if n < 2 {
        return Err(invalid("gp fit needs at least two points"));
    }
    if data.dim() != std.dim() {
        return Err(invalid("dataset dimension does not match the input model"));
    }
    if data.x.as_flat().iter().chain(&data.y).any(|v| !v.is_finite()) {
        return Err(invalid("gp training data must be finite"));
    }
    let ys: Vec<f64> = data.y.iter().map(|v| v.f64()).collect();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let var = ys.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let scale = var.sqrt();
    let y = if scale > 0.0 {
        ys.iter().map(|v| T::c((v - mean) / scale)).collect()
    } else {
        vec![T::zero(); n]
    };
    Ok(Standardized { z: std.points_to_z(&data.x), y, mean: T::c(mean), scale: T::c(scale) })
}

/// Correlation matrix plus jitter on the given points.
fn corr_matrix<T: Real>(z: &PointSet<T>, ls: &[T], family: KernelFamily, nugget: T) -> Vec<T> {
    let n = z.len();
    let mut a = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..i {
            let r2 = scaled_sq_dist(z.row(i), z.row(j), ls);
            let v = T::c(family.corr(r2.f64()));
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
        a[i * n + i] = T::one() + nugget;
    }
    a
}

fn factor_with_jitter<T: Real>(
    z: &PointSet<T>,
    ls: &[T],
    family: KernelFamily,
    nugget0: f64,
    max_nugget: f64,
) -> Option<(Cholesky<T>, f64)> {
    let mut nug = nugget0;
    loop {
        let a = corr_matrix(z, ls, family, T::c(nug));
        if let Ok(ch) = Cholesky::new(a, z.len()) {
            return Some((ch, nug));
        }
        if nug >= max_nugget {
            return None;
        }
        nug = (nug * 10.0).min(max_nugget).max(1e-12);
    }
}

struct Lml {
    value: f64,
    grad: Vec<f64>,
}

/// Profiled log marginal likelihood in log-lengthscale coordinates.
/// The nugget turns `alpha` into a slightly smoothed fit. Conjugate
/// gradients on the jitter-free system, preconditioned by the jittered
/// factor, pull the mean back onto the data. The best iterate is kept.
fn refine_interpolant<T: Real>(
    ch: &Cholesky<T>,
    z: &PointSet<T>,
    ls: &[T],
    family: KernelFamily,
    y: &[T],
    alpha: &mut Vec<T>,
) {
    let n = y.len();
    let r = corr_matrix(z, ls, family, T::zero());
    let matvec = |a: &[T]| -> Vec<T> { (0..n).map(|i| dot(&r[i * n..(i + 1) * n], a)).collect() };
    let max_abs = |v: &[T]| v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let tol = T::c(1e-10) * max_abs(y).max(T::epsilon());
    let mut x = alpha.clone();
    let mut res: Vec<T> = y.iter().zip(matvec(&x)).map(|(a, b)| *a - b).collect();
    let mut best = max_abs(&res);
    let mut zv = ch.solve(&res);
    let mut p = zv.clone();
    let mut rz = dot(&res, &zv);
    for _ in 0..n.min(50) {
        if best <= tol || !(rz > T::zero()) {
            break;
        }
        let ap = matvec(&p);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            break;
        }
        let step = rz / pap;
        axpy(step, &p, &mut x);
        axpy(-step, &ap, &mut res);
        let err = max_abs(&res);
        if !err.is_finite() {
            break;
        }
        if err < best {
            best = err;
            alpha.copy_from_slice(&x);
        }
        zv = ch.solve(&res);
        let rz_new = dot(&res, &zv);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&zv) {
            *pi = *zi + beta * *pi;
        }
    }
}

fn profiled_lml<T: Real>(
    z: &PointSet<T>,
    y: &[T],
    log_ls: &[f64],
    family: KernelFamily,
    nugget: f64,
    max_nugget: f64,
    with_grad: bool,
) -> Option<Lml> {
    let n = z.len();
    let d = z.dim();
    let ls: Vec<T> = log_ls.iter().map(|v| T::c(v.exp())).collect();
    let (ch, _) = factor_with_jitter(z, &ls, family, nugget, max_nugget)?;
    let alpha = ch.solve(y);
    let quad = dot(y, &alpha).f64().max(1e-300);
    let sf2 = quad / n as f64;
    let nf = n as f64;
    let value = -0.5 * nf * sf2.ln() - 0.5 * ch.log_det().f64() - 0.5 * nf * (1.0 + (2.0 * std::f64::consts::PI).ln());
    if !value.is_finite() {
        return None;
    }
    let mut grad = vec![0.0; d];
    if with_grad {
        let inv = ch.inverse();
        let inv_sf2 = 1.0 / sf2;
        for i in 0..n {
            let zi = z.row(i);
            for j in 0..i {
                let zj = z.row(j);
                let mut r2 = 0.0;
                let mut terms = [0.0f64; 16];
                for k in 0..d {
                    let u = (zi[k] - zj[k]).f64() / ls[k].f64();
                    let u2 = u * u;
                    if k < 16 {
                        terms[k] = u2;
                    }
                    r2 += u2;
                }
                let w = alpha[i].f64() * alpha[j].f64() * inv_sf2 - inv[i * n + j].f64();
                let f = family.dcorr_factor(r2) * w;
                // symmetric pair counted twice, times the leading 1/2
                for k in 0..d.min(16) {
                    grad[k] += f * terms[k];
                }
                if d > 16 {
                    for k in 16..d {
                        let u = (zi[k] - zj[k]).f64() / ls[k].f64();
                        grad[k] += f * u * u;
                    }
                }
            }
        }
    }
    Some(Lml { value, grad })
}

/// Deterministic starting lengthscales: a Halton design on `[0.03, 3]` in log space.
fn start_points(d: usize, count: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = (0.03f64.ln(), 3.0f64.ln());
    let mut out = vec![vec![0.3f64.ln(); d]];
    let mut i = 1u64;
    while out.len() < count {
        out.push((0..d).map(|k| lo + halton(i, k) * (hi - lo)).collect());
        i += 1;
    }
    out.truncate(count.max(1));
    out
}

fn subset<T: Real>(z: &PointSet<T>, y: &[T], max: usize) -> (PointSet<T>, Vec<T>) {
    let n = z.len();
    if n <= max {
        return (z.clone(), y.to_vec());
    }
    let mut zs = PointSet::with_capacity(z.dim(), max);
    let mut ys = Vec::with_capacity(max);
    for k in 0..max {
        let i = k * n / max;
        zs.push(z.row(i));
        ys.push(y[i]);
    }
    (zs, ys)
}

/// Fit a GP by maximizing the profiled marginal likelihood.
pub fn fit_gp<T: Real>(
    data: &Dataset<T>,
    standardizer: &Standardizer,
    family: KernelFamily,
    opts: &FitOptions,
) -> Result<GpPosterior<T>> {
    let s = standardize(data, standardizer)?;
    let d = data.dim();
    // below a few ulps the jitter does nothing in low precision
    let nugget = opts.nugget.max(16.0 * T::epsilon().f64());
    if s.scale == T::zero() {
        return Ok(GpPosterior::constant(standardizer.clone(), family, s, nugget));
    }
    let (zf, yf) = subset(&s.z, &s.y, opts.max_fit_points.max(2));
    let lo = vec![opts.min_lengthscale.ln(); d];
    let hi = vec![opts.max_lengthscale.ln(); d];
    let mut starts = start_points(d, opts.n_starts.max(1));
    if let Some(w) = &opts.warm_start {
        if w.len() == d && w.iter().all(|v| *v > 0.0) {
            starts.push(w.iter().map(|v| v.ln().clamp(lo[0], hi[0])).collect());
        }
    }
    let mut evals = 0usize;
    let mut scored: Vec<(f64, usize)> = Vec::new();
    let mut start_lml = Vec::with_capacity(starts.len());
    for (i, st) in starts.iter().enumerate() {
        evals += 1;
        let v = profiled_lml(&zf, &yf, st, family, nugget, opts.max_nugget, false).map(|l| l.value);
        let v = v.unwrap_or(f64::NEG_INFINITY);
        start_lml.push(v);
        if v.is_finite() {
            scored.push((v, i));
        }
    }
    if scored.is_empty() {
        return Err(Error::GpFit("kernel matrix not positive definite at any start, even after jitter escalation".into()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut chosen: Vec<usize> = scored.iter().take(opts.n_local.max(1)).map(|s| s.1).collect();
    if opts.warm_start.is_some() && starts.len() > opts.n_starts && !chosen.contains(&(starts.len() - 1)) {
        chosen.push(starts.len() - 1);
    }
    let (mut best_x, mut best_v) = (starts[scored[0].1].clone(), scored[0].0);
    for &i in &chosen {
        let f = |x: &[f64]| {
            profiled_lml(&zf, &yf, x, family, nugget, opts.max_nugget, true).map(|l| {
                evals += 1;
                (l.value, l.grad)
            })
        };
        if let Some(r) = maximize(f, &starts[i], &lo, &hi, &opts.lbfgs) {
            if r.value > best_v {
                best_v = r.value;
                best_x = r.x;
            }
        }
    }
    let ls: Vec<T> = best_x.iter().map(|v| T::c(v.exp())).collect();
    let report = FitReport { start_lml, best_lml: best_v, likelihood_evals: evals, fit_points: zf.len(), nugget: 0.0 };
    GpPosterior::condition(standardizer.clone(), family, ls, s, nugget, opts.max_nugget, None, report)
}

impl<T: Real> GpPosterior<T> {
    fn constant(standardizer: Standardizer, family: KernelFamily, s: Standardized<T>, nugget: f64) -> Self {
        let d = s.z.dim();
        Self {
            standardizer,
            family,
            lengthscales: vec![T::one(); d],
            cols: vec![Vec::new(); d],
            z_train: s.z,
            y_mean: s.mean,
            y_scale: T::one(),
            sf2: T::zero(),
            nugget: T::c(nugget),
            chol: None,
            train_corr: Vec::new(),
            alpha: Vec::new(),
            report: FitReport::default(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn condition(
        standardizer: Standardizer,
        family: KernelFamily,
        ls: Vec<T>,
        s: Standardized<T>,
        nugget: f64,
        max_nugget: f64,
        fixed_sf2: Option<T>,
        mut report: FitReport,
    ) -> Result<Self> {
        let (ch, nug) = factor_with_jitter(&s.z, &ls, family, nugget, max_nugget)
            .ok_or_else(|| Error::GpFit(format!("kernel matrix not positive definite with nugget {max_nugget:e}")))?;
        let mut alpha = ch.solve(&s.y);
        let sf2 = fixed_sf2.unwrap_or_else(|| {
            let q = dot(&s.y, &alpha);
            (q / T::from_usize_c(s.y.len())).max(T::c(1e-300))
        });
        if nug <= nugget {
            refine_interpolant(&ch, &s.z, &ls, family, &s.y, &mut alpha);
        }
        let train_corr = corr_matrix(&s.z, &ls, family, T::c(nug));
        report.nugget = nug;
        let cols = (0..s.z.dim())
            .map(|k| s.z.iter().map(|r| r[k] / ls[k]).collect())
            .collect();
        Ok(Self {
            standardizer,
            family,
            lengthscales: ls,
            cols,
            z_train: s.z,
            y_mean: s.mean,
            y_scale: s.scale,
            sf2,
            nugget: T::c(nug),
            chol: Some(ch),
            train_corr,
            alpha,
            report,
        })
    }

    /// Condition on `data` with hyperparameters held fixed.
    ///
    /// With `center_outputs = false` the prior mean is zero and
    /// `kernel.signal_variance` is taken in output units as given.
    pub fn with_kernel(
        data: &Dataset<T>,
        standardizer: &Standardizer,
        kernel: &KernelConfig<T>,
        center_outputs: bool,
    ) -> Result<Self> {
        kernel.validate()?;
        let mut s = standardize(data, standardizer)?;
        let sf2 = if center_outputs && s.scale > T::zero() {
            kernel.signal_variance / (s.scale * s.scale)
        } else {
            s.y = data.y.clone();
            s.mean = T::zero();
            s.scale = T::one();
            kernel.signal_variance
        };
        if center_outputs && s.scale == T::zero() {
            return Ok(Self::constant(standardizer.clone(), kernel.family, s, kernel.nugget.f64()));
        }
        let nug = kernel.nugget.f64();
        Self::condition(
            standardizer.clone(),
            kernel.family,
            kernel.lengthscales.clone(),
            s,
            nug,
            nug.max(1e-2),
            Some(sf2),
            FitReport::default(),
        )
    }

    pub fn dim(&self) -> usize {
        self.z_train.dim()
    }

    pub fn n_train(&self) -> usize {
        self.z_train.len()
    }

    pub fn is_constant(&self) -> bool {
        self.chol.is_none()
    }

    pub fn report(&self) -> &FitReport {
        &self.report
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// Hyperparameters in output units.
    pub fn kernel(&self) -> KernelConfig<T> {
        KernelConfig {
            family: self.family,
            lengthscales: self.lengthscales.clone(),
            signal_variance: self.sf2 * self.y_scale * self.y_scale,
            nugget: self.nugget,
        }
    }

    pub fn output_scale(&self) -> T {
        self.y_scale
    }

    pub fn prior_mean(&self) -> T {
        self.y_mean
    }

    /// Correlations between a standardized point and every training input.
    fn corr_row(&self, z: &[T], buf: &mut Vec<T>) {
        let n = self.n_train();
        buf.clear();
        buf.resize(n, T::zero());
        for (k, col) in self.cols.iter().enumerate() {
            let q = z[k] / self.lengthscales[k];
            for (b, c) in buf.iter_mut().zip(col) {
                let u = q - *c;
                *b = u.mul_add(u, *b);
            }
        }
        self.family.corr_in_place(buf);
    }

    /// Posterior mean and variance at a standardized point, in output units.
    pub fn predict_z(&self, z: &[T]) -> (T, T) {
        let Some(ch) = &self.chol else {
            return (self.y_mean, T::zero());
        };
        let mut r = Vec::new();
        self.corr_row(z, &mut r);
        let m = dot(&r, &self.alpha);
        ch.forward_in_place(&mut r);
        let v = (T::one() - dot(&r, &r)).max(T::zero()) * self.sf2;
        (self.y_mean + self.y_scale * m, v * self.y_scale * self.y_scale)
    }

    /// Posterior mean and variance at a point in native input units.
    pub fn posterior(&self, x: &[T]) -> Result<(T, T)> {
        if x.len() != self.dim() {
            return Err(invalid("query point dimension mismatch"));
        }
        let mut z = vec![T::zero(); x.len()];
        self.standardizer.to_z(x, &mut z);
        Ok(self.predict_z(&z))
    }

    pub fn soft_failure_prob(&self, x: &[T], t: T) -> Result<T> {
        let (m, v) = self.posterior(x)?;
        Ok(self.soft_prob_from(m, v, t))
    }

    pub fn soft_failure_prob_z(&self, z: &[T], t: T) -> T {
        let (m, v) = self.predict_z(z);
        self.soft_prob_from(m, v, t)
    }

    /// `1 - Phi((t - m) / s)`, or the indicator `m > t` when `s` is below the floor.
    pub fn soft_prob_from(&self, mean: T, var: T, t: T) -> T {
        soft_failure_prob(mean, var.sqrt(), t, T::c(SIGMA_FLOOR) * self.y_scale)
    }

    /// Posterior means at many standardized points.
    pub fn predict_mean_batch_z(&self, zs: &PointSet<T>) -> Vec<T> {
        if self.chol.is_none() {
            return vec![self.y_mean; zs.len()];
        }
        let mut buf = Vec::new();
        zs.iter()
            .map(|z| {
                self.corr_row(z, &mut buf);
                self.y_mean + self.y_scale * dot(&buf, &self.alpha)
            })
            .collect()
    }

    /// Posterior variances (output units) for up to `B` points at once.
    fn exact_variances_block<const B: usize>(&self, zs: &[&[T]], out: &mut [T]) {
        let ch = self.chol.as_ref().expect("non-constant model");
        let n = self.n_train();
        let mut blk = vec![[T::zero(); B]; n];
        let mut buf = Vec::new();
        for (c, z) in zs.iter().enumerate() {
            self.corr_row(z, &mut buf);
            for i in 0..n {
                blk[i][c] = buf[i];
            }
        }
        ch.forward_block(&mut blk);
        let s2 = self.sf2 * self.y_scale * self.y_scale;
        for c in 0..zs.len() {
            let mut q = T::zero();
            for row in &blk {
                q = row[c].mul_add(row[c], q);
            }
            out[c] = (T::one() - q).max(T::zero()) * s2;
        }
    }

    /// Overlapping groups of mutually correlated training points, each with
    /// its own Cholesky factor, and the group each training point belongs to.
    fn neighbourhoods(&self, size: usize) -> Neighbourhoods<T> {
        let n = self.n_train();
        let size = size.min(n);
        let mut owner = vec![usize::MAX; n];
        let mut groups = Vec::new();
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for seed in 0..n {
            if owner[seed] != usize::MAX {
                continue;
            }
            let row = &self.train_corr[seed * n..(seed + 1) * n];
            order.clear();
            order.extend(0..n);
            order.select_nth_unstable_by(size - 1, |a, b| row[*b].f64().total_cmp(&row[*a].f64()).then(a.cmp(b)));
            let mut members = order[..size].to_vec();
            members.sort_unstable();
            if !members.contains(&seed) {
                members[0] = seed;
                members.sort_unstable();
            }
            let mut sub = Vec::with_capacity(size * size);
            for &a in &members {
                sub.extend(members.iter().map(|&b| self.train_corr[a * n + b]));
            }
            let Ok(ch) = Cholesky::new(sub, size) else {
                continue;
            };
            let g = groups.len();
            for &m in &members {
                if owner[m] == usize::MAX {
                    owner[m] = g;
                }
            }
            groups.push((members, ch));
        }
        Neighbourhoods { owner, groups }
    }

    /// Variance bound from conditioning on the group of the most correlated
    /// training point.
    fn group_variance_bound(&self, r: &[T], nb: &Neighbourhoods<T>, scratch: &mut Vec<T>) -> T {
        let s2 = self.sf2 * self.y_scale * self.y_scale;
        let best = r.iter().enumerate().fold(0, |b, (i, v)| if *v > r[b] { i } else { b });
        let Some((members, ch)) = nb.owner.get(best).and_then(|&g| nb.groups.get(g)) else {
            return s2;
        };
        scratch.clear();
        scratch.extend(members.iter().map(|&i| r[i]));
        ch.forward_in_place(scratch);
        let q = dot(scratch, scratch);
        let ub = (T::one() - q).max(T::zero()) * s2;
        ub * T::c(1.0 + 1e-9) + s2 * T::c(1e-14)
    }

    /// Variance bound from conditioning on the `K` most correlated training
    /// points only; never smaller than the full posterior variance.
    fn variance_upper_bound<const K: usize>(&self, r: &[T]) -> T {
        let n = r.len();
        let k = K.min(n);
        let mut idx = [0usize; K];
        let mut val = [T::neg_infinity(); K];
        for (i, &v) in r.iter().enumerate() {
            if v > val[K - 1] {
                let mut p = K - 1;
                while p > 0 && val[p - 1] < v {
                    val[p] = val[p - 1];
                    idx[p] = idx[p - 1];
                    p -= 1;
                }
                val[p] = v;
                idx[p] = i;
            }
        }
        // Cholesky of the K x K sub-block and a forward solve, on the stack
        let mut l = [[T::zero(); K]; K];
        let mut v = [T::zero(); K];
        for a in 0..k {
            for b in 0..=a {
                let mut s = self.train_corr[idx[a] * n + idx[b]];
                for c in 0..b {
                    s -= l[a][c] * l[b][c];
                }
                if a == b {
                    if !(s > T::zero()) {
                        return self.sf2 * self.y_scale * self.y_scale;
                    }
                    l[a][a] = s.sqrt();
                } else {
                    l[a][b] = s / l[b][b];
                }
            }
            let mut s = val[a];
            for c in 0..a {
                s -= l[a][c] * v[c];
            }
            v[a] = s / l[a][a];
        }
        let q: T = v[..k].iter().map(|x| *x * *x).sum();
        let s2 = self.sf2 * self.y_scale * self.y_scale;
        let ub = (T::one() - q).max(T::zero()) * s2;
        ub * T::c(1.0 + 1e-9) + s2 * T::c(1e-14)
    }

    /// Soft failure probabilities at many standardized points.
    ///
    /// With `screen = Some((alpha, floor))`, a point whose weight
    /// `pi^alpha` is provably below `floor / m` times the running total is
    /// reported as zero without computing its full posterior variance, and
    /// points provably at `pi = 1` skip it too. Every other point gets the
    /// exact value.
    pub fn soft_failure_probs_batch(&self, zs: &PointSet<T>, t: T, screen: Option<(T, f64)>) -> SoftProbBatch<T> {
        let m = zs.len();
        if self.chol.is_none() {
            let means = vec![self.y_mean; m];
            let probs = means.iter().map(|&mu| if mu > t { T::one() } else { T::zero() }).collect();
            return SoftProbBatch { probs, means, exact_variances: 0 };
        }
        let mut means = vec![T::zero(); m];
        let mut probs = vec![T::zero(); m];
        let mut exact_variances = 0;
        let mut pending: Vec<(f64, usize)> = Vec::new();
        let mut settled_sum = 0.0f64;
        let alpha = screen.map(|s| s.0.f64()).unwrap_or(1.0);
        let mut buf = Vec::new();
        let mut scratch = Vec::new();
        // a tighter bound pays for itself once exact variances get expensive
        let groups = (screen.is_some() && self.n_train() >= 128).then(|| self.neighbourhoods(GROUP_SIZE.max(self.n_train() / 8)));
        // Some(ub on pi) when the point still needs its exact variance
        let classify = |mu: T, sd_ub: T, settled: &mut f64, p: &mut T| -> Option<f64> {
            if sd_ub <= T::c(SIGMA_FLOOR) * self.y_scale {
                // the exact sd is below the floor as well
                *p = if mu > t { T::one() } else { T::zero() };
                *settled += p.f64();
                return None;
            }
            let zscore = ((mu - t) / sd_ub).f64();
            if zscore >= 8.3 {
                *p = T::one();
                *settled += 1.0;
                None
            } else {
                Some(if mu <= t { norm_sf(-zscore) } else { 1.0 })
            }
        };
        for (j, z) in zs.iter().enumerate() {
            self.corr_row(z, &mut buf);
            let mu = self.y_mean + self.y_scale * dot(&buf, &self.alpha);
            means[j] = mu;
            if screen.is_none() {
                pending.push((1.0, j));
                continue;
            }
            let mut var_ub = self.variance_upper_bound::<8>(&buf);
            if let Some(nb) = &groups {
                var_ub = var_ub.min(self.group_variance_bound(&buf, nb, &mut scratch));
            }
            let sd_ub = var_ub.sqrt();
            if let Some(ub) = classify(mu, sd_ub, &mut settled_sum, &mut probs[j]) {
                pending.push((ub, j));
            }
        }
        if screen.is_some() {
            pending.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        }
        let floor = screen.map(|s| s.1 / m as f64).unwrap_or(0.0);
        let mut start = 0;
        const B: usize = 8;
        let mut vars = [T::zero(); B];
        while start < pending.len() {
            if screen.is_some() && settled_sum > 0.0 {
                let ub_w = pending[start].0.powf(alpha);
                if ub_w < 0.1 * floor * settled_sum {
                    break;
                }
            }
            let end = (start + B).min(pending.len());
            let rows: Vec<&[T]> = pending[start..end].iter().map(|&(_, j)| zs.row(j)).collect();
            self.exact_variances_block::<B>(&rows, &mut vars);
            for (c, &(_, j)) in pending[start..end].iter().enumerate() {
                let p = self.soft_prob_from(means[j], vars[c], t);
                probs[j] = p;
                settled_sum += p.f64().powf(alpha);
            }
            exact_variances += end - start;
            start = end;
        }
        SoftProbBatch { probs, means, exact_variances }
    }
}

/// `1 - Phi((t - mean) / sd)`; the indicator `mean > t` once `sd <= sd_floor`.
pub fn soft_failure_prob<T: Real>(mean: T, sd: T, t: T, sd_floor: T) -> T {
    if !(sd > sd_floor) {
        return if mean > t { T::one() } else { T::zero() };
    }
    norm_sf((t - mean) / sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::input_models::{InputDensity, Marginal};
    use crate::rng::{open_unit, stream, StreamTag};
    use crate::special::norm_ppf;

    fn unit_box(d: usize) -> Standardizer {
        InputDensity::new(vec![Marginal::uniform(0.0, 1.0).unwrap(); d]).unwrap().standardizer()
    }

    fn line_data(n: usize) -> Dataset<f64> {
        let mut ds = Dataset::new(1);
        for i in 0..n {
            let x = i as f64 / (n - 1) as f64;
            ds.push(&[x], x);
        }
        ds
    }

    #[test]
    fn interpolates_linear_data() {
        let ds = line_data(5);
        let gp = fit_gp(&ds, &unit_box(1), KernelFamily::SquaredExponential, &FitOptions::default()).unwrap();
        for i in 0..5 {
            let (m, v) = gp.posterior(ds.x.row(i)).unwrap();
            assert!((m - ds.y[i]).abs() <= 1e-6 * gp.output_scale(), "{m} vs {}", ds.y[i]);
            let vs = v / gp.kernel().signal_variance;
            assert!(vs <= gp.kernel().nugget + 1e-8, "{vs}");
        }
    }

    #[test]
    fn lml_not_below_any_start() {
        let mut ds = Dataset::new(2);
        for i in 0..30 {
            let x = [((i * 7) % 30) as f64 / 29.0, (i as f64 * 0.618).fract()];
            ds.push(&x, (3.0 * x[0]).sin() + x[1] * x[1]);
        }
        let gp = fit_gp(&ds, &unit_box(2), KernelFamily::SquaredExponential, &FitOptions::default()).unwrap();
        let r = gp.report();
        assert_eq!(r.start_lml.len(), 8);
        for v in &r.start_lml {
            assert!(r.best_lml >= *v);
        }
    }

    #[test]
    fn duplicate_points_fit_via_jitter() {
        let mut ds = Dataset::new(1);
        ds.push(&[0.5], 1.0);
        ds.push(&[0.5], 1.0);
        ds.push(&[0.1], 0.0);
        let gp = fit_gp(&ds, &unit_box(1), KernelFamily::SquaredExponential, &FitOptions::default()).unwrap();
        let (m, _): (f64, f64) = gp.posterior(&[0.5]).unwrap();
        assert!((m - 1.0).abs() < 1e-3);
    }

    #[test]
    fn identical_points_constant_fallback() {
        let mut ds = Dataset::new(1);
        ds.push(&[0.5], 2.0);
        ds.push(&[0.5], 2.0);
        let gp = fit_gp(&ds, &unit_box(1), KernelFamily::SquaredExponential, &FitOptions::default()).unwrap();
        assert!(gp.is_constant());
        assert_eq!(gp.posterior(&[0.2]).unwrap(), (2.0, 0.0));
        assert_eq!(gp.soft_failure_prob(&[0.2], 1.0).unwrap(), 1.0);
    }

    #[test]
    fn rejects_too_little_data() {
        let mut ds = Dataset::new(1);
        ds.push(&[0.5], 2.0);
        assert!(fit_gp(&ds, &unit_box(1), KernelFamily::SquaredExponential, &FitOptions::default()).is_err());
    }

    #[test]
    fn prior_reversion_far_away() {
        let ds = line_data(6);
        let std = InputDensity::new(vec![Marginal::uniform(0.0, 1.0).unwrap()]).unwrap().standardizer();
        let gp = fit_gp(&ds, &std, KernelFamily::SquaredExponential, &FitOptions::default()).unwrap();
        let l = gp.kernel().lengthscales[0];
        let (m, v) = gp.posterior(&[1.0 + 12.0 * l]).unwrap();
        let sv = gp.kernel().signal_variance;
        assert!((m - gp.prior_mean()).abs() <= 1e-3 * gp.output_scale());
        assert!((v / sv - 1.0).abs() < 1e-3, "{v} vs {sv}");
    }

    #[test]
    fn two_point_fixed_hyperparameters_match_explicit_solve() {
        let mut ds = Dataset::new(1);
        ds.push(&[0.2], 1.5);
        ds.push(&[0.6], -0.5);
        let ker = KernelConfig { family: KernelFamily::SquaredExponential, lengthscales: vec![0.3], signal_variance: 2.0, nugget: 0.0 };
        let gp = GpPosterior::with_kernel(&ds, &unit_box(1), &ker, false).unwrap();
        let k = |a: f64, b: f64| 2.0 * (-0.5 * ((a - b) / 0.3).powi(2)).exp();
        let (k11, k12, k22) = (k(0.2, 0.2), k(0.2, 0.6), k(0.6, 0.6));
        let det = k11 * k22 - k12 * k12;
        let inv = [k22 / det, -k12 / det, -k12 / det, k11 / det];
        let x = 0.45;
        let kx = [k(x, 0.2), k(x, 0.6)];
        let a = [inv[0] * 1.5 + inv[1] * -0.5, inv[2] * 1.5 + inv[3] * -0.5];
        let mean = kx[0] * a[0] + kx[1] * a[1];
        let q = kx[0] * (inv[0] * kx[0] + inv[1] * kx[1]) + kx[1] * (inv[2] * kx[0] + inv[3] * kx[1]);
        let var = k(x, x) - q;
        let (m, v) = gp.posterior(&[x]).unwrap();
        assert!((m - mean).abs() < 1e-10, "{m} {mean}");
        assert!((v - var).abs() < 1e-10, "{v} {var}");
    }

    fn naive_profiled_lml(x: &[f64], y: &[f64], l: f64, nug: f64) -> f64 {
        // Gaussian elimination with partial pivoting, independent of linalg
        let n = x.len();
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (-0.5 * ((x[i] - x[j]) / l).powi(2)).exp() + if i == j { nug } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut b = y.to_vec();
        let mut logdet = 0.0;
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            logdet += a[c][c].abs().ln();
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut sol = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * sol[k]).sum();
            sol[r] = (b[r] - s) / a[r][r];
        }
        let quad: f64 = y.iter().zip(&sol).map(|(u, v)| u * v).sum();
        let nf = n as f64;
        -0.5 * nf * (quad / nf).ln() - 0.5 * logdet
    }

    #[test]
    fn recovers_lengthscale_of_known_gp() {
        let n = 40;
        let mut r = stream(2024, StreamTag::Misc, 0);
        let xs: Vec<f64> = (0..n).map(|_| open_unit(&mut r)).collect();
        let a: Vec<f64> = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                (-0.5 * ((xs[i] - xs[j]) / 0.2).powi(2)).exp() + if i == j { 1e-8 } else { 0.0 }
            })
            .collect();
        let ch = Cholesky::new(a, n).unwrap();
        let e: Vec<f64> = (0..n).map(|_| norm_ppf(open_unit(&mut r))).collect();
        let y: Vec<f64> = (0..n).map(|i| dot(&ch.row(i)[..=i], &e[..=i])).collect();
        let mut ds = Dataset::new(1);
        for i in 0..n {
            ds.push(&[xs[i]], y[i]);
        }
        let gp = fit_gp(&ds, &unit_box(1), KernelFamily::SquaredExponential, &FitOptions::default()).unwrap();
        let l_fit = gp.kernel().lengthscales[0];
        // grid oracle on standardized outputs
        let mean = y.iter().sum::<f64>() / n as f64;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let ys: Vec<f64> = y.iter().map(|v| (v - mean) / sd).collect();
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..=400 {
            let l = (0.02f64.ln() + k as f64 * (2.0f64.ln() - 0.02f64.ln()) / 400.0).exp();
            let v = naive_profiled_lml(&xs, &ys, l, 1e-8);
            if v > best.0 {
                best = (v, l);
            }
        }
        assert!(l_fit / best.1 < 1.05 && best.1 / l_fit < 1.05, "fit {l_fit} grid {}", best.1);
        assert!(l_fit < 0.4 && l_fit > 0.1, "{l_fit}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut ds = Dataset::new(2);
        for i in 0..15 {
            let x = [(i as f64 * 0.37).fract(), (i as f64 * 0.71).fract()];
            ds.push(&x, (4.0 * x[0]).cos() * x[1]);
        }
        let s = standardize(&ds, &unit_box(2)).unwrap();
        for fam in [KernelFamily::SquaredExponential, KernelFamily::Matern52] {
            let th = [(0.3f64).ln(), (0.6f64).ln()];
            let l = profiled_lml(&s.z, &s.y, &th, fam, 1e-8, 1e-2, true).unwrap();
            for k in 0..2 {
                let h = 1e-5;
                let mut tp = th;
                tp[k] += h;
                let mut tm = th;
                tm[k] -= h;
                let fp = profiled_lml(&s.z, &s.y, &tp, fam, 1e-8, 1e-2, false).unwrap().value;
                let fm = profiled_lml(&s.z, &s.y, &tm, fam, 1e-8, 1e-2, false).unwrap().value;
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - l.grad[k]).abs() < 1e-4 * fd.abs().max(1.0), "{fam:?} k={k}: {fd} vs {}", l.grad[k]);
            }
        }
    }

    #[test]
    fn soft_probability_values() {
        assert_eq!(soft_failure_prob(2.0, 0.7, 2.0, 1e-12), 0.5);
        assert_eq!(soft_failure_prob(2.1, 0.0, 2.0, 1e-12), 1.0);
        assert_eq!(soft_failure_prob(1.9, 0.0, 2.0, 1e-12), 0.0);
        let p = soft_failure_prob(2.5, 0.5, 2.0, 1e-12);
        let oracle = 0.5 * libm::erfc(-1.0 / 2f64.sqrt());
        assert!((p - oracle).abs() < 1e-6);
        assert!((p - 0.841_345).abs() < 1e-6);
    }

    #[test]
    fn superset_refit_still_interpolates() {
        let mut ds = Dataset::new(1);
        for i in 0..6 {
            let x = i as f64 / 5.0;
            ds.push(&[x], (5.0 * x).sin());
        }
        let old = ds.clone();
        ds.push(&[0.33], (5.0f64 * 0.33).sin());
        ds.push(&[0.77], (5.0f64 * 0.77).sin());
        let gp = fit_gp(&ds, &unit_box(1), KernelFamily::Matern52, &FitOptions::default()).unwrap();
        for i in 0..old.len() {
            let (m, _) = gp.posterior(old.x.row(i)).unwrap();
            assert!((m - old.y[i]).abs() <= 1e-6 * gp.output_scale());
        }
    }

    #[test]
    fn screened_batch_matches_exact() {
        let mut ds = Dataset::new(2);
        for i in 0..40 {
            let x = [(i as f64 * 0.618_034).fract(), (i as f64 * 0.414_214).fract()];
            ds.push(&x, 3.0 * (x[0] - 0.7).powi(2).min(0.2) + x[1]);
        }
        let gp = fit_gp(&ds, &unit_box(2), KernelFamily::SquaredExponential, &FitOptions::default()).unwrap();
        let mut zs = PointSet::new(2);
        for i in 0..3000 {
            zs.push(&[(i as f64 * 0.754_877_67).fract(), (i as f64 * 0.569_840_29).fract()]);
        }
        let t = 1.05;
        let exact = gp.soft_failure_probs_batch(&zs, t, None);
        let screened = gp.soft_failure_probs_batch(&zs, t, Some((0.97, 1e-12)));
        let tot: f64 = exact.probs.iter().map(|p| p.powf(0.97)).sum();
        for j in 0..zs.len() {
            let single = gp.soft_failure_prob_z(zs.row(j), t);
            assert!((exact.probs[j] - single).abs() <= 1e-7 * single.max(1e-3), "{} vs {single}", exact.probs[j]);
            let (a, b) = (exact.probs[j], screened.probs[j]);
            if b == 0.0 {
                assert!(a.powf(0.97) < 1e-12 / 3000.0 * tot, "dropped a non-negligible point");
            } else {
                assert!((a - b).abs() <= 1e-12 + 1e-10 * a, "{a} vs {b}");
            }
        }
        assert!(screened.exact_variances <= exact.exact_variances);
    }

    #[test]
    fn subset_bounds_dominate_the_posterior_variance() {
        let mut ds = Dataset::new(3);
        for i in 0..300u64 {
            let x = [halton(i + 1, 0), halton(i + 1, 1), halton(i + 1, 2)];
            ds.push(&x, (4.0 * x[0]).sin() + x[1] * x[2]);
        }
        let gp = fit_gp(&ds, &unit_box(3), KernelFamily::SquaredExponential, &FitOptions::default()).unwrap();
        let nb = gp.neighbourhoods(GROUP_SIZE);
        let mut covered = vec![false; 300];
        for (members, _) in &nb.groups {
            members.iter().for_each(|&m| covered[m] = true);
        }
        assert!(covered.iter().all(|c| *c));
        let (mut buf, mut scratch) = (Vec::new(), Vec::new());
        for i in 0..500u64 {
            let z = [halton(i + 7, 3), halton(i + 7, 4), halton(i + 7, 5)];
            let (_, v) = gp.predict_z(&z);
            let v = v / (gp.output_scale() * gp.output_scale());
            gp.corr_row(&z, &mut buf);
            let s = gp.output_scale() * gp.output_scale();
            let k8 = gp.variance_upper_bound::<8>(&buf) / s;
            let grp = gp.group_variance_bound(&buf, &nb, &mut scratch) / s;
            assert!(k8 >= v * (1.0 - 1e-9) && grp >= v * (1.0 - 1e-9), "{v} {k8} {grp}");
        }
        let mut zs = PointSet::new(3);
        for i in 0..4000u64 {
            zs.push(&[halton(i + 11, 6), halton(i + 11, 7), halton(i + 11, 8)]);
        }
        let t = 1.2;
        let exact = gp.soft_failure_probs_batch(&zs, t, None);
        let screened = gp.soft_failure_probs_batch(&zs, t, Some((0.97, 1e-12)));
        let tot: f64 = exact.probs.iter().map(|p| p.powf(0.97)).sum();
        for (a, b) in exact.probs.iter().zip(&screened.probs) {
            if *b == 0.0 {
                assert!(a.powf(0.97) < 1e-12 / 4000.0 * tot);
            } else {
                assert!((a - b).abs() <= 1e-12 + 1e-10 * a, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn variance_within_prior_bound() {
        let ds = line_data(7);
        let gp = fit_gp(&ds, &unit_box(1), KernelFamily::Matern52, &FitOptions::default()).unwrap();
        let k = gp.kernel();
        let cap = k.signal_variance * (1.0 + k.nugget);
        for i in 0..200 {
            let (_, v) = gp.posterior(&[-1.0 + 3.0 * i as f64 / 199.0]).unwrap();
            assert!(v >= 0.0 && v <= cap * (1.0 + 1e-12));
        }
    }

    #[test]
    fn works_in_f32() {
        let mut ds = Dataset::<f32>::new(1);
        for i in 0..6 {
            let x = i as f32 / 5.0;
            ds.push(&[x], x * x);
        }
        let gp = fit_gp(&ds, &unit_box(1), KernelFamily::SquaredExponential, &FitOptions::default()).unwrap();
        let (m, _) = gp.posterior(&[0.4]).unwrap();
        assert!((m - 0.16).abs() < 1e-3);
    }
}
