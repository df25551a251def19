use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimators::Density;
use crate::input_models::InputDensity;
use crate::limit_states::LimitState;
use crate::proposal_kde::MixtureProposal;
use crate::real::Real;
use crate::rng::{stream, StreamTag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub mean: f64,
    /// Standard error of `mean` across the repeats.
    pub stderr: f64,
    pub per_repeat: Vec<f64>,
    pub samples_per_repeat: usize,
}

/// `repeats` independent naive Monte Carlo estimates with `n` samples each.
pub fn dense_mc_ground_truth(
    limit_state: &dyn LimitState,
    input: &InputDensity,
    t: f64,
    n: usize,
    repeats: usize,
    seed: u64,
) -> Result<GroundTruth> {
    if n == 0 || repeats == 0 {
        return Err(invalid("dense Monte Carlo needs n >= 1 and repeats >= 1"));
    }
    const CHUNK: usize = 1 << 14;
    let per_repeat = (0..repeats)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let mut rng = stream(seed, StreamTag::Truth, r as u64);
            let mut hits = 0u64;
            let mut left = n;
            while left > 0 {
                let k = left.min(CHUNK);
                let xs = input.sample::<f64, _>(&mut rng, k)?;
                for x in xs.iter() {
                    if limit_state.evaluate(x)? > t {
                        hits += 1;
                    }
                }
                left -= k;
            }
            Ok(hits as f64 / n as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let r = repeats as f64;
    let mean = per_repeat.iter().sum::<f64>() / r;
    let stderr = if repeats > 1 {
        (per_repeat.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0) / r).sqrt()
    } else {
        (mean * (1.0 - mean) / n as f64).sqrt()
    };
    Ok(GroundTruth { mean, stderr, per_repeat, samples_per_repeat: n })
}

/// Total variation between `q` and the optimal density
/// `p 1{g > t} / P_F` on a uniform midpoint grid with `resolution` cells per
/// axis over the standardized box of `input` (`P_F` from the same grid).
pub fn tv_distance_grid<T: Real>(
    q: &dyn Density<T>,
    limit_state: &dyn LimitState,
    input: &InputDensity,
    t: f64,
    resolution: usize,
) -> Result<f64> {
    let d = input.dim();
    if d == 0 || d > 2 {
        return Err(invalid(format!("grid TV check needs a 1-D or 2-D problem, got d = {d}")));
    }
    if resolution == 0 {
        return Err(invalid("grid resolution must be positive"));
    }
    let std = input.standardizer();
    let (zl, zh) = std.z_support();
    let lo: Vec<f64> = zl.iter().map(|v| v.max(0.0)).collect();
    let hi: Vec<f64> = zh.iter().map(|v| v.min(1.0)).collect();
    let cells = resolution.pow(d as u32);
    let mut zc = vec![0.0; d];
    let mut xc = vec![0.0; d];
    let mut xt = vec![T::zero(); d];
    let mut pf = Vec::with_capacity(cells);
    let mut qv = Vec::with_capacity(cells);
    let mut vol_z = 1.0;
    for k in 0..d {
        vol_z *= (hi[k] - lo[k]) / resolution as f64;
    }
    let vol = vol_z * std.log_jacobian().exp();
    for c in 0..cells {
        let mut rem = c;
        for k in 0..d {
            let i = rem % resolution;
            rem /= resolution;
            zc[k] = lo[k] + (i as f64 + 0.5) * (hi[k] - lo[k]) / resolution as f64;
        }
        std.to_x(&zc, &mut xc);
        for k in 0..d {
            xt[k] = T::c(xc[k]);
        }
        let p = input.log_density(&xc)?.exp();
        let fail = limit_state.evaluate(&xc)? > t;
        pf.push(if fail { p } else { 0.0 });
        qv.push(q.log_density(&xt)?.f64().exp());
    }
    let mass: f64 = pf.iter().sum::<f64>() * vol;
    if !(mass > 0.0) {
        return Err(invalid("no failing grid cell; the optimal density is undefined on this grid"));
    }
    let tv = 0.5 * pf.iter().zip(&qv).map(|(a, b)| (a / mass - b).abs()).sum::<f64>() * vol;
    Ok(tv.clamp(0.0, 1.0))
}

pub fn tv_distance_check<T: Real>(
    proposal: &MixtureProposal<T>,
    limit_state: &dyn LimitState,
    t: f64,
    resolution: usize,
) -> Result<f64> {
    tv_distance_grid(proposal, limit_state, proposal.input(), t, resolution)
}
