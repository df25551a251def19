//! Failure-probability estimators: naive Monte Carlo, single-proposal IS,
//! balance-heuristic MIS, multifidelity MIS and the surrogate-error estimate.
//!
//! The `*_from_parts` functions take importance weights that were computed
//! elsewhere (the driver evaluates the mixture density incrementally); the
//! other entry points compute the weights from a [`ProposalHistory`].

use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::gp_surrogate::GpPosterior;
use crate::input_models::InputDensity;
use crate::proposal_kde::MixtureProposal;
use crate::real::Real;
use crate::special::log_sum_exp;

/// Anything with a log density on the input space.
pub trait Density<T>: Send + Sync {
    fn log_density(&self, x: &[T]) -> Result<T>;
}

impl<T: Real> Density<T> for InputDensity {
    fn log_density(&self, x: &[T]) -> Result<T> {
        InputDensity::log_density(self, x)
    }
}

impl<T: Real> Density<T> for MixtureProposal<T> {
    fn log_density(&self, x: &[T]) -> Result<T> {
        self.mixture_log_density(x)
    }
}

/// Point predictions the estimators need from a surrogate.
pub trait Surrogate<T>: Send + Sync {
    /// Posterior mean (the point surrogate used in indicators).
    fn predict_mean(&self, x: &[T]) -> Result<T>;
    /// Probability that the response exceeds `t`.
    fn soft_failure_prob(&self, x: &[T], t: T) -> Result<T>;
}

impl<T: Real> Surrogate<T> for GpPosterior<T> {
    fn predict_mean(&self, x: &[T]) -> Result<T> {
        Ok(self.posterior(x)?.0)
    }

    fn soft_failure_prob(&self, x: &[T], t: T) -> Result<T> {
        GpPosterior::soft_failure_prob(self, x, t)
    }
}

/// One proposal that generated samples.
#[derive(Clone)]
pub enum Snapshot<T> {
    /// The input density itself.
    Input,
    Mixture(MixtureProposal<T>),
    Custom(Arc<dyn Density<T>>),
}

impl<T> std::fmt::Debug for Snapshot<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Snapshot::Input => write!(f, "Input"),
            Snapshot::Mixture(_) => write!(f, "Mixture"),
            Snapshot::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Proposals in the order they were used, with their sample counts.
#[derive(Clone, Debug)]
pub struct ProposalHistory<T> {
    input: Arc<InputDensity>,
    entries: Vec<(Snapshot<T>, usize)>,
    total: usize,
}

impl<T: Real> ProposalHistory<T> {
    /// Starts with `n0` draws from the input density.
    pub fn new(input: Arc<InputDensity>, n0: usize) -> Result<Self> {
        if n0 == 0 {
            return Err(invalid("initial sample count must be at least 1"));
        }
        Ok(Self { input, entries: vec![(Snapshot::Input, n0)], total: n0 })
    }

    pub fn push(&mut self, snapshot: Snapshot<T>, count: usize) -> Result<usize> {
        if count == 0 {
            return Err(invalid("proposal sample count must be at least 1"));
        }
        self.entries.push((snapshot, count));
        self.total += count;
        Ok(self.entries.len() - 1)
    }

    pub fn entries(&self) -> &[(Snapshot<T>, usize)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn input(&self) -> &Arc<InputDensity> {
        &self.input
    }

    /// `ln qbar(x)` given `ln p(x)`.
    pub fn log_mixture_density_with(&self, x: &[T], log_p: T) -> Result<T> {
        let ln_tot = T::from_usize_c(self.total).ln();
        let mut terms = Vec::with_capacity(self.entries.len());
        for (snap, n) in &self.entries {
            let lq = match snap {
                Snapshot::Input => log_p,
                Snapshot::Mixture(q) => {
                    if q.eta() == T::one() {
                        log_p
                    } else {
                        q.combine(q.kde().log_density(x)?, log_p)
                    }
                }
                Snapshot::Custom(q) => q.log_density(x)?,
            };
            terms.push(T::from_usize_c(*n).ln() - ln_tot + lq);
        }
        Ok(log_sum_exp(&terms))
    }

    pub fn log_mixture_density(&self, x: &[T]) -> Result<T> {
        let lp = self.input.log_density(x)?;
        self.log_mixture_density_with(x, lp)
    }
}

/// `qbar(x) = sum_k (N_k / N_tot) q_k(x)`.
pub fn mixture_density_bar_q<T: Real>(history: &ProposalHistory<T>, x: &[T]) -> Result<T> {
    Ok(history.log_mixture_density(x)?.exp())
}

/// A point produced by one of the history's proposals.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample<T> {
    pub x: Vec<T>,
    /// Oracle value; `None` for surrogate-only points.
    pub y: Option<T>,
    pub proposal_index: usize,
}

#[inline]
fn fails<T: Real>(y: T, t: T) -> bool {
    y > t
}

/// `exp(ln p - ln q)`, zero outside the support of `p`.
pub fn importance_weight<T: Real>(log_p: T, log_q: T) -> Result<T> {
    if log_p == T::neg_infinity() {
        return Ok(T::zero());
    }
    if log_q == T::neg_infinity() || log_q.is_nan() {
        return Err(Error::Numerical("proposal density vanishes where the input density does not".into()));
    }
    Ok((log_p - log_q).exp())
}

/// `(1/N) sum 1{y_i > t}`.
pub fn naive_mc<T: Real>(ys: &[T], t: T) -> Result<T> {
    if ys.is_empty() {
        return Err(invalid("naive Monte Carlo needs at least one sample"));
    }
    let k = ys.iter().filter(|y| fails(**y, t)).count();
    Ok(T::from_usize_c(k) / T::from_usize_c(ys.len()))
}

/// Single-proposal importance sampling.
pub fn is_estimate<T: Real>(
    xs: &[Vec<T>],
    ys: &[T],
    q: &dyn Density<T>,
    p: &InputDensity,
    t: T,
) -> Result<T> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(invalid("need one oracle value per sample and at least one sample"));
    }
    let mut s = T::zero();
    for (x, y) in xs.iter().zip(ys) {
        let lq = q.log_density(x)?;
        if lq == T::neg_infinity() {
            return Err(Error::Numerical("proposal density is zero at one of its own samples".into()));
        }
        if fails(*y, t) {
            s += importance_weight(p.log_density(x)?, lq)?;
        }
    }
    Ok(s / T::from_usize_c(xs.len()))
}

/// `(1/N) sum_i w_i 1{F_i}`.
pub fn mis_from_parts<T: Real>(weights: &[T], failed: &[bool]) -> T {
    let mut s = T::zero();
    for (w, f) in weights.iter().zip(failed) {
        if *f {
            s += *w;
        }
    }
    s / T::from_usize_c(weights.len().max(1))
}

/// Both halves of the multifidelity estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MfMis<T> {
    /// Reported value, clamped at zero.
    pub value: T,
    pub raw: T,
    pub surrogate_term: T,
    pub correction: T,
}

/// Multifidelity MIS from precomputed weights and indicator flags.
/// `surrogate` pairs (weight, surrogate says fail) over the cheap pool;
/// `expensive` triples (weight, oracle says fail, surrogate says fail).
pub fn mf_mis_from_parts<T: Real>(surrogate: &[(T, bool)], expensive: &[(T, bool, bool)]) -> MfMis<T> {
    let n = T::from_usize_c(expensive.len().max(1));
    let mut corr = T::zero();
    for &(w, f, g) in expensive {
        if f != g {
            corr += if f { w } else { -w };
        }
    }
    let correction = corr / n;
    if surrogate.is_empty() {
        let mut s = T::zero();
        for &(w, f, _) in expensive {
            if f {
                s += w;
            }
        }
        let m = s / n;
        return MfMis { value: m.max(T::zero()), raw: m, surrogate_term: m, correction: T::zero() };
    }
    let mut s = T::zero();
    for &(w, g) in surrogate {
        if g {
            s += w;
        }
    }
    let surrogate_term = s / T::from_usize_c(surrogate.len());
    let raw = surrogate_term + correction;
    MfMis { value: raw.max(T::zero()), raw, surrogate_term, correction }
}

/// The three MIS averages behind the surrogate-error estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateError<T> {
    /// `P_hat + E[pi] - 2 E[pi 1_F]`.
    pub r_hat: T,
    pub p_hat: T,
    pub mean_pi: T,
    pub mean_pi_fail: T,
}

pub fn surrogate_error_from_parts<T: Real>(weights: &[T], failed: &[bool], pi: &[T]) -> SurrogateError<T> {
    let n = T::from_usize_c(weights.len().max(1));
    let (mut a, mut b, mut c, mut r) = (T::zero(), T::zero(), T::zero(), T::zero());
    for ((w, f), p) in weights.iter().zip(failed).zip(pi) {
        let z = if *f { T::one() } else { T::zero() };
        a += *w * z;
        b += *w * *p;
        c += *w * *p * z;
        // per-sample |z - pi| form keeps the exact identities exact
        r += *w * (z + *p - (*p + *p) * z);
    }
    SurrogateError { r_hat: r / n, p_hat: a / n, mean_pi: b / n, mean_pi_fail: c / n }
}

fn check_counts<T: Real>(samples: &[LabeledSample<T>], history: &ProposalHistory<T>) -> Result<()> {
    let mut counts = vec![0usize; history.len()];
    for s in samples {
        if s.proposal_index >= history.len() {
            return Err(invalid(format!("sample refers to proposal {} of {}", s.proposal_index, history.len())));
        }
        counts[s.proposal_index] += 1;
    }
    for (k, ((_, n), c)) in history.entries().iter().zip(&counts).enumerate() {
        if n != c {
            return Err(invalid(format!("proposal {k} records {n} samples but {c} were supplied")));
        }
    }
    Ok(())
}

fn weights_for<T: Real>(samples: &[LabeledSample<T>], history: &ProposalHistory<T>) -> Result<Vec<T>> {
    samples
        .iter()
        .map(|s| {
            let lp = history.input().log_density(&s.x)?;
            if lp == T::neg_infinity() {
                return Ok(T::zero());
            }
            importance_weight(lp, history.log_mixture_density_with(&s.x, lp)?)
        })
        .collect()
}

fn labels<T: Real>(samples: &[LabeledSample<T>], t: T) -> Result<Vec<bool>> {
    samples
        .iter()
        .map(|s| s.y.map(|y| fails(y, t)).ok_or_else(|| invalid("expensive sample without an oracle value")))
        .collect()
}

fn check_input<T: Real>(history: &ProposalHistory<T>, p: &InputDensity) -> Result<()> {
    if history.input().as_ref() != p {
        return Err(invalid("history was built for a different input density"));
    }
    Ok(())
}

/// Balance-heuristic MIS over every sample in the history.
pub fn mis_estimate<T: Real>(
    samples: &[LabeledSample<T>],
    history: &ProposalHistory<T>,
    p: &InputDensity,
    t: T,
) -> Result<T> {
    check_input(history, p)?;
    check_counts(samples, history)?;
    let w = weights_for(samples, history)?;
    Ok(mis_from_parts(&w, &labels(samples, t)?))
}

/// Multifidelity MIS: surrogate-indicator average over the cheap pool plus
/// an oracle-based correction over the expensive samples. The pool must be
/// drawn with the same mixture proportions as the expensive samples.
pub fn mf_mis_estimate<T: Real>(
    surrogate_samples: &[LabeledSample<T>],
    expensive_samples: &[LabeledSample<T>],
    history: &ProposalHistory<T>,
    surrogate: &dyn Surrogate<T>,
    p: &InputDensity,
    t: T,
) -> Result<MfMis<T>> {
    check_input(history, p)?;
    check_counts(expensive_samples, history)?;
    let we = weights_for(expensive_samples, history)?;
    let fe = labels(expensive_samples, t)?;
    let mut exp = Vec::with_capacity(we.len());
    for ((w, f), s) in we.iter().zip(&fe).zip(expensive_samples) {
        exp.push((*w, *f, fails(surrogate.predict_mean(&s.x)?, t)));
    }
    if surrogate_samples.is_empty() {
        return Ok(mf_mis_from_parts(&[], &exp));
    }
    if surrogate_samples.iter().any(|s| s.proposal_index >= history.len()) {
        return Err(invalid("surrogate sample refers to an unknown proposal"));
    }
    let ws = weights_for(surrogate_samples, history)?;
    let mut sur = Vec::with_capacity(ws.len());
    for (w, s) in ws.iter().zip(surrogate_samples) {
        sur.push((*w, fails(surrogate.predict_mean(&s.x)?, t)));
    }
    Ok(mf_mis_from_parts(&sur, &exp))
}

/// `r_hat = P_hat + E[pi] - 2 E[pi 1_F]` with shared MIS weights; reuses the
/// oracle labels already in hand.
pub fn surrogate_error_estimate<T: Real>(
    samples: &[LabeledSample<T>],
    history: &ProposalHistory<T>,
    surrogate: &dyn Surrogate<T>,
    p: &InputDensity,
    t: T,
) -> Result<SurrogateError<T>> {
    check_input(history, p)?;
    check_counts(samples, history)?;
    let w = weights_for(samples, history)?;
    let f = labels(samples, t)?;
    let pi = samples.iter().map(|s| surrogate.soft_failure_prob(&s.x, t)).collect::<Result<Vec<T>>>()?;
    Ok(surrogate_error_from_parts(&w, &f, &pi))
}
