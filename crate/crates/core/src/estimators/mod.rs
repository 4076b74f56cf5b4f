//! Nelson-Aalen intensities, Aalen-Johansen transition matrices and state
//! occupation probabilities (SOPs) under any [`WeightScheme`].
//!
//! The counting process and at-risk totals entering each increment are the
//! IPCW-scaled, `w_ij`-weighted sums of [`crate::panel::counting_process`]
//! and [`crate::panel::at_risk`]. The SOP is
//! `pi_l(t) = sum_k pi_k(0) P_kl(0, t)`, with the initial distribution
//! weighted by the same scheme and renormalised to sum to 1.

pub(crate) mod engine;


use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{censoring_km, Panel, WeightScheme};
use crate::step::StepFunction;

use self::engine::{check_factor, mat_mat, vec_mat, EventTable};

/// Jumps `dA(u)` of the cumulative intensity matrix, one `Q x Q` row-major
/// block per jump time. Off-diagonals are nonnegative and rows sum to 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntensityPath {
    num_states: usize,
    jump_times: Vec<f64>,
    increments: Vec<Vec<f64>>,
}

impl IntensityPath {
    pub fn new(num_states: usize, jump_times: Vec<f64>, increments: Vec<Vec<f64>>) -> Result<Self> {
        if jump_times.len() != increments.len()
            || increments.iter().any(|m| m.len() != num_states * num_states)
        {
            return Err(Error::InvalidArgument("intensity path shape mismatch".into()));
        }
        if jump_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("jump times must be strictly increasing".into()));
        }
        Ok(Self {
            num_states,
            jump_times,
            increments,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    /// `dA(u)` at the `k`-th jump time.
    pub fn increment(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.num_states, self.num_states, &self.increments[k])
    }

    /// Cumulative `A(t)`, entry `(l, l')` 0-based.
    pub fn cumulative(&self, t: f64) -> DMatrix<f64> {
        let q = self.num_states;
        let mut a = DMatrix::zeros(q, q);
        for (k, &u) in self.jump_times.iter().enumerate() {
            if u > t {
                break;
            }
            a += self.increment(k);
        }
        a
    }

    pub fn is_empty(&self) -> bool {
        self.jump_times.is_empty()
    }
}

/// `P(s, t)`: entry `(l, l')` (0-based) is `Pr{X(t) = l'+1 | X(s) = l+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub entries: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[(from - 1, to - 1)]
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.entries
            .row_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Weighted Nelson-Aalen increments at every observed transition time.
///
/// Times where no one is at risk in a state contribute nothing for that row.
pub fn nelson_aalen(panel: &Panel, weights: WeightScheme) -> Result<IntensityPath> {
    nelson_aalen_until(panel, weights, f64::INFINITY)
}

fn nelson_aalen_until(panel: &Panel, weights: WeightScheme, horizon: f64) -> Result<IntensityPath> {
    let q = panel.num_states();
    let w = weights.weights(panel)?;
    let k_hat = censoring_km(panel, weights)?;
    let records = engine::records(panel);
    let mut table = EventTable::build(q, &records, &w, horizon);

    // N and M both carry 1/K(u-); scale them as the counting-process
    // definitions do before forming the ratio.
    for k in 0..table.len() {
        let u = table.times[k];
        let kk = k_hat.left_limit(u);
        if !(kk > 0.0) {
            return Err(Error::IpcwUndefined(u));
        }
        table.at_risk[k * q..(k + 1) * q].iter_mut().for_each(|v| *v /= kk);
        table.trans[k * q * q..(k + 1) * q * q].iter_mut().for_each(|v| *v /= kk);
    }

    let mut factor = vec![0.0; q * q];
    let mut increments = Vec::with_capacity(table.len());
    for k in 0..table.len() {
        table.factor(k, &mut factor)?;
        let mut inc = factor.clone();
        for i in 0..q {
            inc[i * q + i] -= 1.0;
        }
        increments.push(inc);
    }
    IntensityPath::new(q, table.times.clone(), increments)
}

/// Product integral `prod_{(s,t]} (I + dA(u))` over the jump times in `(s, t]`.
pub fn aalen_johansen(intensity: &IntensityPath, s: f64, t: f64) -> Result<TransitionMatrix> {
    if s > t {
        return Err(Error::InvalidArgument(format!("need s <= t, got s = {s}, t = {t}")));
    }
    let q = intensity.num_states;
    let mut p = identity(q);
    let mut next = vec![0.0; q * q];
    let mut factor = vec![0.0; q * q];
    let start = intensity.jump_times.partition_point(|&u| u <= s);
    let end = intensity.jump_times.partition_point(|&u| u <= t);
    for k in start..end {
        factor.copy_from_slice(&intensity.increments[k]);
        for i in 0..q {
            factor[i * q + i] += 1.0;
        }
        check_factor(intensity.jump_times[k], q, &mut factor)?;
        mat_mat(q, &p, &factor, &mut next);
        std::mem::swap(&mut p, &mut next);
    }
    Ok(TransitionMatrix {
        entries: DMatrix::from_row_slice(q, q, &p),
    })
}

/// Weighted proportions of subjects by initial state, renormalised.
pub fn initial_distribution(panel: &Panel, weights: WeightScheme) -> Result<Vec<f64>> {
    let w = weights.weights(panel)?;
    let records = engine::records(panel);
    normalized_initial(panel.num_states(), &records, &w)
}

pub(crate) fn normalized_initial(
    q: usize,
    records: &[engine::SubjectRecord],
    weights: &[f64],
) -> Result<Vec<f64>> {
    let (totals, sum) = engine::initial_totals(q, records, weights);
    if !(sum > 0.0) {
        return Err(Error::EmptyInitialDistribution);
    }
    Ok(totals.into_iter().map(|v| v / sum).collect())
}

/// `pi_hat(t)`, indexed so that entry `l - 1` belongs to state `l`.
pub fn state_occupation(panel: &Panel, weights: WeightScheme, t: f64) -> Result<Vec<f64>> {
    let pi0 = initial_distribution(panel, weights)?;
    let intensity = nelson_aalen_until(panel, weights, t)?;
    let p = aalen_johansen(&intensity, 0.0, t)?;
    let q = panel.num_states();
    Ok((0..q)
        .map(|l| (0..q).map(|k| pi0[k] * p.entries[(k, l)]).sum())
        .collect())
}

/// SOP curves of every state under one weight scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SopCurve {
    pub weight_scheme: WeightScheme,
    pub grid: Vec<f64>,
    /// `estimates[g][l - 1]` is `pi_hat_l(grid[g])`.
    pub estimates: Vec<Vec<f64>>,
    /// Full-resolution curve of each state up to the last grid time, jumping
    /// at transition times.
    pub paths: Vec<StepFunction>,
}

impl SopCurve {
    pub fn state(&self, state: usize) -> &StepFunction {
        &self.paths[state - 1]
    }

    /// Long-format CSV: `time,state,estimate,weight_scheme`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["time", "state", "estimate", "weight_scheme"])?;
        for (t, row) in self.grid.iter().zip(&self.estimates) {
            for (l, v) in row.iter().enumerate() {
                wtr.write_record([
                    t.to_string(),
                    (l + 1).to_string(),
                    v.to_string(),
                    self.weight_scheme.label().to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `state_occupation` over an increasing grid, plus the full step curves.
pub fn sop_curve(panel: &Panel, weights: WeightScheme, grid: &[f64]) -> Result<SopCurve> {
    check_grid(grid)?;
    let q = panel.num_states();
    let pi0 = initial_distribution(panel, weights)?;
    let intensity = nelson_aalen_until(panel, weights, grid[grid.len() - 1])?;

    let mut pi = pi0.clone();
    let mut next = vec![0.0; q];
    let mut factor = vec![0.0; q * q];
    let mut points: Vec<Vec<(f64, f64)>> = vec![Vec::with_capacity(intensity.jump_times.len()); q];
    for (k, &u) in intensity.jump_times.iter().enumerate() {
        factor.copy_from_slice(&intensity.increments[k]);
        for i in 0..q {
            factor[i * q + i] += 1.0;
        }
        check_factor(u, q, &mut factor)?;
        vec_mat(&pi, &factor, &mut next);
        std::mem::swap(&mut pi, &mut next);
        for l in 0..q {
            points[l].push((u, pi[l]));
        }
    }
    let paths: Vec<StepFunction> = points
        .into_iter()
        .zip(&pi0)
        .map(|(pts, &init)| StepFunction::from_points(init, pts))
        .collect();
    let estimates = grid
        .iter()
        .map(|&t| paths.iter().map(|p| p.eval(t)).collect())
        .collect();
    Ok(SopCurve {
        weight_scheme: weights,
        grid: grid.to_vec(),
        estimates,
        paths,
    })
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    if grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::InvalidArgument("grid times must be finite and >= 0".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
    }
    Ok(())
}

fn identity(q: usize) -> Vec<f64> {
    let mut m = vec![0.0; q * q];
    for i in 0..q {
        m[i * q + i] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests;
