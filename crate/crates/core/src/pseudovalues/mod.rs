//! Jackknife pseudo-values for state occupation probabilities.
//!
//! Two constructions are offered, each tied to its own estimator:
//!
//! * [`Method::One`] uses the unweighted estimator and the subject-level
//!   jackknife `Y_ij(t) = n pi(t) - (n - 1) pi_{-ij}(t)`.
//! * [`Method::Two`] uses the inverse-cluster-size weighted estimator and a
//!   two-stage jackknife,
//!   `Y_ij(t) = m {n_i pi(t) - (n_i - 1) pi_{-ij}(t)} - (m - 1) pi_{-i}(t)`,
//!   where `pi_{-i}` drops cluster `i` and `pi_{-ij}` keeps cluster `i` at
//!   size `n_i - 1` (reweighted to `1 / (n_i - 1)`).
//!
//! The weighted estimator is never combined with the subject-level formula.
//!
//! [`pseudo_values`] uses an exact incremental algorithm;
//! [`pseudo_values_naive`] rebuilds every reduced panel and calls
//! [`crate::estimators::sop_curve`], and exists to check it.

mod fast;
mod support;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{check_grid, normalized_initial, sop_curve};
use crate::panel::{Panel, WeightScheme};

use self::fast::Prepared;
use self::support::Support;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Unweighted estimator, subject-level jackknife.
    #[serde(rename = "method1")]
    One,
    /// Inverse-cluster-size estimator, cluster-then-subject jackknife.
    #[serde(rename = "method2")]
    Two,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::One => "method1",
            Method::Two => "method2",
        }
    }

    /// The estimator this method is paired with.
    pub fn weight_scheme(self) -> WeightScheme {
        match self {
            Method::One => WeightScheme::Unweighted,
            Method::Two => WeightScheme::InverseClusterSize,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "method1" | "1" => Ok(Method::One),
            "method2" | "2" => Ok(Method::Two),
            other => Err(Error::InvalidArgument(format!("unknown pseudo-value method '{other}'"))),
        }
    }
}

/// Pseudo-values of one state for every subject on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoValueSet {
    pub method: Method,
    /// 1-based state label.
    pub state: usize,
    pub grid: Vec<f64>,
    /// Cluster index of each subject, cluster-major as in [`Panel::subjects`].
    pub cluster_index: Vec<usize>,
    pub cluster_ids: Vec<String>,
    pub subject_ids: Vec<String>,
    /// Full-data estimate of the state's occupation probability on the grid.
    pub estimate: Vec<f64>,
    values: Vec<f64>,
}

impl PseudoValueSet {
    pub fn num_subjects(&self) -> usize {
        self.cluster_index.len()
    }

    pub fn value(&self, subject: usize, g: usize) -> f64 {
        self.values[subject * self.grid.len() + g]
    }

    /// The subject's pseudo-values across the grid.
    pub fn row(&self, subject: usize) -> &[f64] {
        let r = self.grid.len();
        &self.values[subject * r..(subject + 1) * r]
    }

    /// Subject-major `n x r` values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(1/n) sum_ij Y_ij(t)` for Method 1, `(1/m) sum_i (1/n_i) sum_j
    /// Y_ij(t)` for Method 2, at each grid time.
    pub fn mean(&self) -> Vec<f64> {
        let r = self.grid.len();
        let n = self.num_subjects();
        let m = self.cluster_index.last().map_or(0, |&i| i + 1);
        let mut sizes = vec![0usize; m];
        for &i in &self.cluster_index {
            sizes[i] += 1;
        }
        let mut out = vec![0.0; r];
        for s in 0..n {
            let w = match self.method {
                Method::One => 1.0 / n as f64,
                Method::Two => 1.0 / (m as f64 * sizes[self.cluster_index[s]] as f64),
            };
            for (o, v) in out.iter_mut().zip(self.row(s)) {
                *o += w * v;
            }
        }
        out
    }

    /// Long-format CSV: `cluster,subject,time,value,method,state`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        write_rows(&mut wtr, self, true)?;
        wtr.flush()?;
        Ok(())
    }
}

/// Writes several sets into one long CSV with a single header.
pub fn write_pseudo_csv<W: Write>(sets: &[PseudoValueSet], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (i, set) in sets.iter().enumerate() {
        write_rows(&mut wtr, set, i == 0)?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_rows<W: Write>(wtr: &mut csv::Writer<W>, set: &PseudoValueSet, header: bool) -> Result<()> {
    if header {
        wtr.write_record(["cluster", "subject", "time", "value", "method", "state"])?;
    }
    for s in 0..set.num_subjects() {
        for (g, t) in set.grid.iter().enumerate() {
            wtr.write_record([
                set.cluster_ids[s].as_str(),
                set.subject_ids[s].as_str(),
                &t.to_string(),
                &set.value(s, g).to_string(),
                set.method.label(),
                &set.state.to_string(),
            ])?;
        }
    }
    Ok(())
}

pub fn pseudo_method1(panel: &Panel, state: usize, grid: &[f64]) -> Result<PseudoValueSet> {
    pseudo_values(panel, Method::One, state, grid)
}

pub fn pseudo_method2(panel: &Panel, state: usize, grid: &[f64]) -> Result<PseudoValueSet> {
    pseudo_values(panel, Method::Two, state, grid)
}

pub fn pseudo_values(panel: &Panel, method: Method, state: usize, grid: &[f64]) -> Result<PseudoValueSet> {
    check_state(panel, state)?;
    let mut all = pseudo_values_all_states(panel, method, grid)?;
    Ok(all.swap_remove(state - 1))
}

/// Pseudo-values of every state, indexed by `state - 1`. All states come out
/// of the same leave-out estimates, so this costs the same as one state.
pub fn pseudo_values_all_states(panel: &Panel, method: Method, grid: &[f64]) -> Result<Vec<PseudoValueSet>> {
    check_inputs(panel, method, grid)?;
    let q = panel.num_states();
    let r = grid.len();
    let weights = method.weight_scheme().weights(panel)?;
    let prep = Prepared::new(panel, &weights, grid);
    let n = panel.num_subjects();
    check_support(panel, method, grid)?;
    let pi0 = normalized_initial(q, &prep.records, &weights)?;
    let full = prep.full(&pi0)?;

    let mut values = vec![0.0; n * r * q];
    match method {
        Method::One => {
            let loo = prep.leave_one_out()?;
            let nf = n as f64;
            for (s, curve) in loo.iter().enumerate() {
                for (i, (f, d)) in full.iter().zip(curve).enumerate() {
                    values[s * r * q + i] = nf * f - (nf - 1.0) * d;
                }
            }
        }
        Method::Two => {
            let deletions = prep.cluster_deletions()?;
            let mf = deletions.len() as f64;
            let mut s = 0;
            for (without_cluster, subjects) in &deletions {
                let ni = prep.cluster_sizes[prep.cluster_of[s]] as f64;
                for without_subject in subjects.iter().take(ni as usize) {
                    for i in 0..r * q {
                        values[s * r * q + i] = mf * (ni * full[i] - (ni - 1.0) * without_subject[i])
                            - (mf - 1.0) * without_cluster[i];
                    }
                    s += 1;
                }
            }
        }
    }
    Ok(split_states(panel, method, grid, &full, &values))
}

/// Every panel the jackknife estimates must keep censoring support up to
/// the last grid time.
fn check_support(panel: &Panel, method: Method, grid: &[f64]) -> Result<()> {
    let support = Support::new(panel, *grid.last().expect("nonempty grid"));
    support.check(0..0)?;
    let mut start = 0;
    for size in panel.cluster_sizes() {
        if method == Method::Two {
            support.check(start..start + size)?;
        }
        for s in start..start + size {
            support.check(s..s + 1)?;
        }
        start += size;
    }
    Ok(())
}

/// Reference construction: every reduced panel is rebuilt and re-estimated
/// from scratch, censoring distribution included.
pub fn pseudo_values_naive(panel: &Panel, method: Method, state: usize, grid: &[f64]) -> Result<PseudoValueSet> {
    check_inputs(panel, method, grid)?;
    check_state(panel, state)?;
    let q = panel.num_states();
    let r = grid.len();
    let w = method.weight_scheme();
    let sop = |p: &Panel| -> Result<Vec<f64>> {
        let curve = sop_curve(p, w, grid)?;
        Ok(curve.estimates.into_iter().flatten().collect())
    };
    let full = sop(panel)?;
    let n = panel.num_subjects();
    let m = panel.num_clusters();
    let mut values = vec![0.0; n * r * q];
    let mut s = 0;
    for (i, cluster) in panel.clusters.iter().enumerate() {
        let ni = cluster.size() as f64;
        let without_cluster = match method {
            Method::One => None,
            Method::Two => Some(sop(&panel.without_cluster(i))?),
        };
        for j in 0..cluster.size() {
            let reduced = panel.without_subject(i, j);
            for k in 0..r * q {
                values[s * r * q + k] = match &without_cluster {
                    None => {
                        let d = sop(&reduced)?;
                        n as f64 * full[k] - (n as f64 - 1.0) * d[k]
                    }
                    Some(wc) => {
                        let d = if cluster.size() == 1 { wc.clone() } else { sop(&reduced)? };
                        m as f64 * (ni * full[k] - (ni - 1.0) * d[k]) - (m as f64 - 1.0) * wc[k]
                    }
                };
            }
            s += 1;
        }
    }
    let mut all = split_states(panel, method, grid, &full, &values);
    Ok(all.swap_remove(state - 1))
}

fn check_state(panel: &Panel, state: usize) -> Result<()> {
    if !panel.state_space.contains(state) {
        return Err(Error::InvalidArgument(format!(
            "state {state} outside 1..={}",
            panel.num_states()
        )));
    }
    Ok(())
}

fn check_inputs(panel: &Panel, method: Method, grid: &[f64]) -> Result<()> {
    check_grid(grid)?;
    panel.ensure_valid()?;
    match method {
        Method::One if panel.num_subjects() < 2 => {
            Err(Error::JackknifeUndefined("jackknife undefined: fewer than 2 subjects"))
        }
        Method::Two if panel.num_clusters() < 2 => {
            Err(Error::JackknifeUndefined("cluster jackknife undefined: fewer than 2 clusters"))
        }
        _ => Ok(()),
    }
}

/// `full` is `r x q`, `values` is `n x r x q`.
fn split_states(panel: &Panel, method: Method, grid: &[f64], full: &[f64], values: &[f64]) -> Vec<PseudoValueSet> {
    let q = panel.num_states();
    let r = grid.len();
    let n = panel.num_subjects();
    let cluster_index: Vec<usize> = panel.indexed_subjects().map(|(i, _)| i).collect();
    let cluster_ids: Vec<String> = panel.indexed_subjects().map(|(i, _)| panel.clusters[i].id.clone()).collect();
    let subject_ids: Vec<String> = panel.subjects().map(|s| s.id.clone()).collect();
    (0..q)
        .map(|l| PseudoValueSet {
            method,
            state: l + 1,
            grid: grid.to_vec(),
            cluster_index: cluster_index.clone(),
            cluster_ids: cluster_ids.clone(),
            subject_ids: subject_ids.clone(),
            estimate: (0..r).map(|g| full[g * q + l]).collect(),
            values: (0..n * r).map(|i| values[i * q + l]).collect(),
        })
        .collect()
}

/// `r` grid times at the `k / (r + 1)` quantiles (`k = 1..=r`) of the
/// observed transition times, interpolated linearly between order
/// statistics; ties collapse, so fewer than `r` times may come back.
pub fn grid_quantiles(panel: &Panel, r: usize) -> Result<Vec<f64>> {
    if r == 0 {
        return Err(Error::InvalidArgument("grid needs at least one point".into()));
    }
    let mut times: Vec<f64> = panel
        .subjects()
        .flat_map(|s| {
            let tr = &s.trajectory;
            tr.jumps()
                .filter(move |&(t, _, _)| t <= tr.censor_time && t > tr.truncation_time)
                .map(|(t, _, _)| t)
        })
        .collect();
    if times.is_empty() {
        return Err(Error::InvalidArgument("no observed transitions to place a grid on".into()));
    }
    times.sort_by(f64::total_cmp);
    let last = (times.len() - 1) as f64;
    let mut grid: Vec<f64> = (1..=r)
        .map(|k| {
            let h = last * k as f64 / (r + 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            times[lo] + (h - lo as f64) * (times[hi] - times[lo])
        })
        .collect();
    grid.dedup();
    Ok(grid)
}

#[cfg(test)]
mod tests;
