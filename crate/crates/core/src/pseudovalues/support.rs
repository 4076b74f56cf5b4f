//! Censoring support of the leave-out panels.
//!
//! The fast path never forms `K`, because `1/K(u-)` cancels in every
//! increment. The estimator is still undefined when `K` reaches zero before a
//! transition time inside the horizon, so every deletion is checked here
//! against the same risk sets the censoring Kaplan-Meier uses.
//!
//! `K` drops to zero at a censoring time `c` exactly when everyone at risk
//! for censoring at `c` is censored there. Only counts matter, since all
//! weights are positive.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::panel::{index_range, Panel};

pub(super) struct Support {
    times: Vec<f64>,
    /// At risk for censoring and not censored, per censoring time.
    open: Vec<i64>,
    censored: Vec<i64>,
    /// Per subject: index range at risk, and the censoring index if censored.
    ranges: Vec<(usize, usize)>,
    censor_at: Vec<Option<usize>>,
    /// Censoring times where `K` is already zero in the full panel.
    zeros: Vec<usize>,
    /// Censoring times with exactly one subject left open.
    ones: Vec<usize>,
    /// Transitions up to the horizon, sorted by time, with their subject.
    jumps: Vec<(f64, usize)>,
}

impl Support {
    pub fn new(panel: &Panel, horizon: f64) -> Self {
        let space = &panel.state_space;
        let subjects: Vec<_> = panel.subjects().collect();
        let mut times: Vec<f64> = subjects
            .iter()
            .filter(|s| !s.trajectory.is_absorbed(space))
            .map(|s| s.trajectory.censor_time)
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();

        let j = times.len();
        let mut diff = vec![0i64; j + 1];
        let mut censored = vec![0i64; j];
        let mut ranges = Vec::with_capacity(subjects.len());
        let mut censor_at = Vec::with_capacity(subjects.len());
        let mut jumps = Vec::new();
        for (s, subj) in subjects.iter().enumerate() {
            let tr = &subj.trajectory;
            let (lo, hi) = index_range(&times, tr.truncation_time, tr.exit_time(space));
            diff[lo] += 1;
            diff[hi] -= 1;
            ranges.push((lo, hi));
            let at = (!tr.is_absorbed(space)).then(|| times.partition_point(|&x| x < tr.censor_time));
            if let Some(k) = at {
                censored[k] += 1;
            }
            censor_at.push(at);
            jumps.extend(
                tr.jumps()
                    .map(|(t, _, _)| t)
                    .filter(|&t| t <= horizon && t <= tr.censor_time && t > tr.truncation_time)
                    .map(|t| (t, s)),
            );
        }
        jumps.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut open = vec![0i64; j];
        let mut y = 0;
        for k in 0..j {
            y += diff[k];
            open[k] = y - censored[k];
        }
        let zeros = (0..j).filter(|&k| censored[k] > 0 && open[k] <= 0).collect();
        let ones = (0..j).filter(|&k| censored[k] > 0 && open[k] == 1).collect();
        Self {
            times,
            open,
            censored,
            ranges,
            censor_at,
            zeros,
            ones,
            jumps,
        }
    }

    /// Fails if the panel without the subjects in `removed` has no censoring
    /// support at one of its transition times.
    pub fn check(&self, removed: Range<usize>) -> Result<()> {
        let zero = match removed.len() {
            0 => self.zeros.first().copied(),
            1 => self.first_zero_without(removed.start),
            _ => self.first_zero_without_range(removed.clone()),
        };
        let Some(k) = zero else { return Ok(()) };
        let c = self.times[k];
        let start = self.jumps.partition_point(|&(t, _)| t <= c);
        match self.jumps[start..].iter().find(|(_, s)| !removed.contains(s)) {
            Some(&(u, _)) => Err(Error::IpcwUndefined(u)),
            None => Ok(()),
        }
    }

    fn censored_here(&self, s: usize, k: usize) -> i64 {
        i64::from(self.censor_at[s] == Some(k))
    }

    fn first_zero_without(&self, s: usize) -> Option<usize> {
        let from_zeros = self
            .zeros
            .iter()
            .copied()
            .find(|&k| self.censored[k] > self.censored_here(s, k));
        let (lo, hi) = self.ranges[s];
        let start = self.ones.partition_point(|&k| k < lo);
        let from_ones = self.ones[start..]
            .iter()
            .copied()
            .take_while(|&k| k < hi)
            .find(|&k| self.censor_at[s] != Some(k));
        match (from_zeros, from_ones) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn first_zero_without_range(&self, removed: Range<usize>) -> Option<usize> {
        let lo = removed.clone().map(|s| self.ranges[s].0).min().unwrap_or(0);
        let hi = removed.clone().map(|s| self.ranges[s].1).max().unwrap_or(0);
        let len = hi.saturating_sub(lo);
        let mut diff = vec![0i64; len + 1];
        let mut gone = vec![0i64; len];
        for s in removed {
            let (a, b) = self.ranges[s];
            diff[a - lo] += 1;
            diff[b - lo] -= 1;
            if let Some(k) = self.censor_at[s] {
                gone[k - lo] += 1;
            }
        }
        let mut y = 0;
        let inside = (0..len).find(|&i| {
            y += diff[i];
            let k = lo + i;
            let left = self.censored[k] - gone[i];
            left > 0 && self.open[k] - (y - gone[i]) <= 0
        });
        let outside = self.zeros.iter().copied().find(|&k| k < lo || k >= hi);
        match (inside.map(|i| lo + i), outside) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}
