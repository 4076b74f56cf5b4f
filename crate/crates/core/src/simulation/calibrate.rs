//! Choosing the Weibull censoring scale for a target censoring rate.
//!
//! A subject counts as censored when it is not followed into the absorbing
//! state, so for absorption time `T` the rate at scale `g` is
//! `E[F_C(T)] = E[1 - exp{-(T/g)^k}]`, estimated on a pilot sample of
//! uncensored subjects and solved for `g` by bisection on `ln g`.

use crate::error::Result;
use crate::panel::Panel;

use super::{cluster_rng, draw_cluster, splitmix64, SimConfig};

const PILOT_SALT: u64 = 0x7069_6c6f_745f_6331;

/// Absorption times of at least `count` uncensored subjects, drawn from
/// panels shaped like `config` on a seed stream separate from the studies.
pub fn pilot_absorption_times(config: &SimConfig, count: usize) -> Result<Vec<f64>> {
    let base = splitmix64(config.seed ^ PILOT_SALT);
    let mut out = Vec::with_capacity(count);
    let mut panel = 0u64;
    while out.len() < count {
        let seed = splitmix64(base.wrapping_add(panel));
        for i in 0..config.m {
            let cluster = draw_cluster(config, f64::INFINITY, &mut cluster_rng(seed, i), i)?;
            out.extend(cluster.subjects.iter().map(|s| s.absorption_time()));
            if out.len() >= count {
                break;
            }
        }
        panel += 1;
    }
    Ok(out)
}

/// Expected censoring rate when absorption times are `times`.
pub fn expected_rate(times: &[f64], shape: f64, ln_scale: f64) -> f64 {
    let sum: f64 = times
        .iter()
        .map(|&t| {
            let x = (shape * (t.ln() - ln_scale)).min(700.0).exp();
            -(-x).exp_m1()
        })
        .sum();
    sum / times.len() as f64
}

/// Weibull scale whose expected censoring rate over `times` is `target`.
pub fn calibrate_censor_scale(times: &[f64], shape: f64, target: f64) -> f64 {
    if target <= 0.0 {
        return f64::INFINITY;
    }
    let (min, max) = times
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t.ln()), b.max(t.ln())));
    // The rate falls from 1 to 0 as ln g sweeps this range.
    let reach = 750.0 / shape;
    let (mut lo, mut hi) = (min - reach, max + reach);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_rate(times, shape, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Fraction of subjects not followed into an absorbing state.
pub fn censoring_rate(panel: &Panel) -> f64 {
    let n = panel.num_subjects();
    let censored = panel
        .subjects()
        .filter(|s| !s.trajectory.is_absorbed(&panel.state_space))
        .count();
    censored as f64 / n as f64
}
