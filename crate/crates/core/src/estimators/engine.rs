//! Weighted event table: at-risk totals and transition totals at every
//! distinct observed transition time, plus the Aalen-Johansen factor built
//! from them.

use crate::error::{Error, Result};
use crate::panel::index_range;
use crate::panel::Panel;

/// Row sums of a factor may drift from 1 by less than this before repair.
pub(crate) const ROW_REPAIR_TOL: f64 = 1e-8;
/// Negative probability mass tolerated in a factor entry.
pub(crate) const ENTRY_TOL: f64 = 1e-10;

/// A subject reduced to what the estimators need, with 0-based states.
#[derive(Debug, Clone)]
pub(crate) struct SubjectRecord {
    pub initial: usize,
    /// Observed sojourns `(state, start, end]` in non-absorbing states.
    pub sojourns: Vec<(usize, f64, f64)>,
    /// Observed transitions `(time, from, to)`.
    pub jumps: Vec<(f64, usize, usize)>,
}

pub(crate) fn records(panel: &Panel) -> Vec<SubjectRecord> {
    let space = &panel.state_space;
    panel
        .subjects()
        .map(|s| {
            let tr = &s.trajectory;
            SubjectRecord {
                initial: tr.initial_state - 1,
                sojourns: tr
                    .observed_sojourns()
                    .into_iter()
                    .filter(|so| !space.is_absorbing(so.state))
                    .map(|so| (so.state - 1, so.start, so.end))
                    .collect(),
                jumps: tr
                    .jumps()
                    .filter(|&(t, _, _)| t <= tr.censor_time && t > tr.truncation_time)
                    .map(|(t, f, to)| (t, f - 1, to - 1))
                    .collect(),
            }
        })
        .collect()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EventTable {
    pub q: usize,
    pub times: Vec<f64>,
    /// `J x Q` weighted at-risk totals.
    pub at_risk: Vec<f64>,
    pub at_risk_n: Vec<i64>,
    /// `J x Q x Q` weighted transition totals.
    pub trans: Vec<f64>,
    pub trans_n: Vec<i64>,
}

impl EventTable {
    /// Builds the table over transition times `<= horizon`.
    pub fn build(q: usize, records: &[SubjectRecord], weights: &[f64], horizon: f64) -> Self {
        let mut times: Vec<f64> = records
            .iter()
            .flat_map(|r| r.jumps.iter().map(|j| j.0))
            .filter(|&t| t <= horizon)
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let j = times.len();

        let mut diff = vec![0.0; (j + 1) * q];
        let mut diff_n = vec![0i64; (j + 1) * q];
        let mut trans = vec![0.0; j * q * q];
        let mut trans_n = vec![0i64; j * q * q];
        for (r, &w) in records.iter().zip(weights) {
            for &(state, a, b) in &r.sojourns {
                let (lo, hi) = index_range(&times, a, b);
                if lo < hi {
                    diff[lo * q + state] += w;
                    diff[hi * q + state] -= w;
                    diff_n[lo * q + state] += 1;
                    diff_n[hi * q + state] -= 1;
                }
            }
            for &(t, from, to) in &r.jumps {
                if t > horizon {
                    continue;
                }
                let k = times.partition_point(|&x| x < t);
                trans[(k * q + from) * q + to] += w;
                trans_n[(k * q + from) * q + to] += 1;
            }
        }

        let mut at_risk = vec![0.0; j * q];
        let mut at_risk_n = vec![0i64; j * q];
        for state in 0..q {
            let mut acc = Accumulator::default();
            let mut n = 0i64;
            for k in 0..j {
                acc.add(diff[k * q + state]);
                n += diff_n[k * q + state];
                at_risk_n[k * q + state] = n;
                at_risk[k * q + state] = if n == 0 { 0.0 } else { acc.value() };
            }
        }
        Self {
            q,
            times,
            at_risk,
            at_risk_n,
            trans,
            trans_n,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    /// Writes `I + dA(t_k)` into `out` (row-major `Q x Q`).
    pub fn factor(&self, k: usize, out: &mut [f64]) -> Result<()> {
        let q = self.q;
        let rows = (0..q).map(|from| {
            let base = (k * q + from) * q;
            RowInput {
                at_risk: self.at_risk[k * q + from],
                at_risk_n: self.at_risk_n[k * q + from],
                trans: &self.trans[base..base + q],
                trans_n: &self.trans_n[base..base + q],
            }
        });
        for (from, row) in rows.enumerate() {
            fill_row(self.times[k], from, &row, &mut out[from * q..(from + 1) * q])?;
        }
        Ok(())
    }
}

pub(crate) struct RowInput<'a> {
    pub at_risk: f64,
    pub at_risk_n: i64,
    pub trans: &'a [f64],
    pub trans_n: &'a [i64],
}

/// One row of `I + dA(u)` from the weighted counts in `row`.
///
/// Rows with no one at risk or no transitions are identity rows. When every
/// subject at risk leaves, the diagonal is exactly 0.
pub(crate) fn fill_row(time: f64, from: usize, row: &RowInput<'_>, out: &mut [f64]) -> Result<()> {
    out.iter_mut().for_each(|x| *x = 0.0);
    let leaving_n: i64 = row
        .trans_n
        .iter()
        .enumerate()
        .filter(|&(to, _)| to != from)
        .map(|(_, &n)| n)
        .sum();
    if row.at_risk_n <= 0 || leaving_n == 0 {
        out[from] = 1.0;
        return Ok(());
    }
    if leaving_n > row.at_risk_n {
        return Err(Error::InvalidIncrement {
            time,
            reason: format!("more transitions out of state {} than subjects at risk", from + 1),
        });
    }
    let mut off = 0.0;
    for (to, &dn) in row.trans.iter().enumerate() {
        if to != from && row.trans_n[to] > 0 {
            let v = dn / row.at_risk;
            out[to] = v;
            off += v;
        }
    }
    if leaving_n == row.at_risk_n {
        for (to, x) in out.iter_mut().enumerate() {
            if to != from {
                *x /= off;
            }
        }
        out[from] = 0.0;
    } else {
        let diag = 1.0 - off;
        if diag < -ENTRY_TOL {
            return Err(Error::InvalidIncrement {
                time,
                reason: format!("negative diagonal {diag} in row {}", from + 1),
            });
        }
        out[from] = diag.max(0.0);
    }
    Ok(())
}

/// Checks one user-supplied factor `I + dA` and repairs small row-sum drift.
pub(crate) fn check_factor(time: f64, q: usize, factor: &mut [f64]) -> Result<()> {
    for r in 0..q {
        let row = &mut factor[r * q..(r + 1) * q];
        if let Some(v) = row.iter().find(|&&v| !(-ENTRY_TOL..=1.0 + ENTRY_TOL).contains(&v)) {
            return Err(Error::InvalidIncrement {
                time,
                reason: format!("entry {v} outside [0, 1] in row {}", r + 1),
            });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() >= ROW_REPAIR_TOL {
            return Err(Error::InvalidIncrement {
                time,
                reason: format!("row {} sums to {sum}", r + 1),
            });
        }
        if sum != 1.0 {
            row.iter_mut().for_each(|v| *v /= sum);
        }
    }
    Ok(())
}

/// `out = v * F` for a row vector `v` and a row-major `Q x Q` matrix `F`.
#[inline]
pub(crate) fn vec_mat(v: &[f64], f: &[f64], out: &mut [f64]) {
    let q = v.len();
    out.iter_mut().for_each(|x| *x = 0.0);
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        let row = &f[i * q..(i + 1) * q];
        for (o, &fij) in out.iter_mut().zip(row) {
            *o += vi * fij;
        }
    }
}

/// `out = A * B` for row-major `Q x Q` matrices.
#[inline]
pub(crate) fn mat_mat(q: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..q {
        vec_mat(&a[i * q..(i + 1) * q], b, &mut out[i * q..(i + 1) * q]);
    }
}

/// Weighted initial-state totals and the total weight.
pub(crate) fn initial_totals(q: usize, records: &[SubjectRecord], weights: &[f64]) -> (Vec<f64>, f64) {
    let mut acc = vec![Accumulator::default(); q];
    let mut total = Accumulator::default();
    for (r, &w) in records.iter().zip(weights) {
        acc[r.initial].add(w);
        total.add(w);
    }
    (acc.iter().map(Accumulator::value).collect(), total.value())
}
