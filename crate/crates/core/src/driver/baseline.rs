//! Two-stage comparator: fit once on a space-filling design, then spend the
//! rest of the budget on plain importance sampling from one KDE proposal.
//! Stage-one evaluations do not enter the estimate.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::estimators::{is_estimate, Snapshot};
use crate::gp_surrogate::{fit_gp, FitOptions};
use crate::points::{halton, PointSet};
use crate::proposal_kde::{eta_schedule, MixtureProposal, WeightedKde, WEIGHT_FLOOR};
use crate::real::Real;
use crate::rng::{open_unit, stream, StreamTag};

use super::{GpSummary, Problem, RunAbort, RunConfig, RunTrace, TraceRow};

/// Randomly shifted Halton points pushed through the marginal quantiles.
fn space_filling<T: Real>(problem: &Problem, n: usize, seed: u64) -> PointSet<T> {
    let d = problem.dim();
    let mut rng = stream(seed, StreamTag::Baseline, 0);
    let shift: Vec<f64> = (0..d).map(|_| open_unit(&mut rng)).collect();
    let mut pts = PointSet::with_capacity(d, n);
    let mut x = vec![T::zero(); d];
    for i in 0..n {
        for (k, m) in problem.input.marginals().iter().enumerate() {
            let u = (halton(i as u64 + 1, k) + shift[k]).fract().clamp(1e-12, 1.0 - 1e-12);
            x[k] = T::c(m.quantile(u));
        }
        pts.push(&x);
    }
    pts
}

pub fn run_two_stage_is_baseline<T: Real>(problem: &Problem, cfg: &RunConfig) -> std::result::Result<RunTrace<T>, RunAbort<T>> {
    cfg.validate()?;
    let budget = cfg.budget();
    let n1 = (cfg.baseline_split * budget as f64).floor() as usize;
    let n2 = budget - n1;
    if n1 < 2 || n2 < 1 {
        return Err(Error::Config(format!("split {} of budget {budget} leaves an empty stage", cfg.baseline_split)).into());
    }
    let mut trace = RunTrace::empty(cfg.seed, problem.input.clone(), n1)?;
    match stages(problem, cfg, n1, n2, &mut trace) {
        Ok(()) => Ok(trace),
        Err(error) => Err(RunAbort { error, partial: Some(Box::new(trace)) }),
    }
}

fn stages<T: Real>(problem: &Problem, cfg: &RunConfig, n1: usize, n2: usize, trace: &mut RunTrace<T>) -> Result<()> {
    let ls = problem.limit_state.as_ref();
    let oracle = crate::limit_states::Oracle::new(ls);
    let t = T::c(cfg.threshold);
    let std = problem.input.standardizer();

    let design = space_filling::<T>(problem, n1, cfg.seed);
    for x in design.iter() {
        trace.dataset.push(x, oracle.evaluate(x)?);
        trace.sample_proposal.push(0);
    }
    let gp = fit_gp(&trace.dataset, &std, cfg.kernel, &FitOptions::default())?;
    trace.gp = Some(GpSummary::of(&gp));

    let pilot = problem.input.sample(&mut stream(cfg.seed, StreamTag::Baseline, 1), cfg.pilot)?;
    let pilot_z = std.points_to_z(&pilot);
    let screen = cfg.screen_pilot.then(|| (T::c(cfg.alpha), WEIGHT_FLOOR));
    let batch = gp.soft_failure_probs_batch(&pilot_z, t, screen);
    let predicted = batch.means.iter().any(|m| *m > t);
    let kde = WeightedKde::build(&pilot_z, &batch.probs, T::c(cfg.alpha), cfg.bandwidth, &std)?;

    let mut rng = stream(cfg.seed, StreamTag::Baseline, 2);
    let (xs, eta, snapshot) = if !predicted || kde.is_degenerate() {
        trace.degenerate_iterations.push(1);
        trace.notes.push("no predicted failures after stage one; stage two samples the input density".into());
        (problem.input.sample(&mut rng, n2)?, 1.0, None)
    } else {
        let eta = eta_schedule(1, cfg.c, cfg.gamma)?;
        let q = MixtureProposal::new(Arc::new(kde), T::c(eta), problem.input.clone())?;
        trace.first_proposal = Some(q.clone());
        trace.final_proposal = Some(q.clone());
        (q.sample_mixture(&mut rng, n2)?, eta, Some(q))
    };
    let index = match &snapshot {
        Some(q) => trace.history.push(Snapshot::Mixture(q.clone()), n2)?,
        None => trace.history.push(Snapshot::Input, n2)?,
    };
    let mut ys = Vec::with_capacity(n2);
    for x in xs.iter() {
        let y = oracle.evaluate(x)?;
        trace.dataset.push(x, y);
        trace.sample_proposal.push(index);
        ys.push(y);
    }
    let rows = xs.to_rows();
    let est = match &snapshot {
        Some(q) => is_estimate(&rows, &ys, q, &problem.input, t)?,
        None => is_estimate(&rows, &ys, problem.input.as_ref(), &problem.input, t)?,
    };
    trace.oracle_calls = oracle.calls();
    if trace.oracle_calls != (n1 + n2) as u64 {
        return Err(Error::Numerical(format!("budget audit: {} oracle calls for budget {}", trace.oracle_calls, n1 + n2)));
    }
    trace.rows.push(TraceRow {
        n_evals: n1 + n2,
        p_mis: est.f64(),
        p_mf_mis: f64::NAN,
        p_mf_mis_raw: f64::NAN,
        r_hat: f64::NAN,
        eta,
        wall_ms: 0.0,
    });
    Ok(())
}

/// Stage-two sample count for a config.
pub fn stage_two_count(cfg: &RunConfig) -> usize {
    cfg.budget() - (cfg.baseline_split * cfg.budget() as f64).floor() as usize
}
