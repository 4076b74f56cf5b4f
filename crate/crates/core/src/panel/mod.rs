//! Clustered multistate trajectories and the weighted counting-process
//! primitives built on them.
//!
//! States are labelled `1..=Q` throughout the public API. A subject's path
//! starts in `initial_state` at time 0 and moves through the listed
//! transitions. The subject is observed on `(L, C]`, where `L` is the
//! left-truncation time (0 when absent) and `C` the right-censoring time
//! (`+inf` when the subject is followed into an absorbing state).

mod csv;
mod processes;
mod validate;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::csv::{read_panel, read_panel_from, write_panel, write_panel_to};
pub use self::processes::{at_risk, censoring_km, counting_process, AtRiskProcess};
pub(crate) use self::processes::index_range;
pub use self::validate::{validate_panel, Violation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    num_states: usize,
    absorbing: BTreeSet<usize>,
}

impl StateSpace {
    pub fn new(num_states: usize, absorbing: impl IntoIterator<Item = usize>) -> Result<Self> {
        if num_states < 2 {
            return Err(Error::InvalidArgument(format!(
                "state space needs at least 2 states, got {num_states}"
            )));
        }
        let absorbing: BTreeSet<usize> = absorbing.into_iter().collect();
        if let Some(&bad) = absorbing.iter().find(|&&s| s == 0 || s > num_states) {
            return Err(Error::InvalidArgument(format!(
                "absorbing state {bad} outside 1..={num_states}"
            )));
        }
        Ok(Self {
            num_states,
            absorbing,
        })
    }

    /// Healthy (1) -> ill (2) -> dead (3), with 1 -> 3 allowed.
    pub fn illness_death() -> Self {
        Self::new(3, [3]).expect("static state space")
    }

    /// Alive (1) -> event (2).
    pub fn two_state() -> Self {
        Self::new(2, [2]).expect("static state space")
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn contains(&self, state: usize) -> bool {
        (1..=self.num_states).contains(&state)
    }

    pub fn is_absorbing(&self, state: usize) -> bool {
        self.absorbing.contains(&state)
    }

    pub fn absorbing(&self) -> impl Iterator<Item = usize> + '_ {
        self.absorbing.iter().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub time: f64,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial_state: usize,
    pub transitions: Vec<Transition>,
    pub censor_time: f64,
    pub truncation_time: f64,
}

/// A maximal interval `(start, end]` during which a subject occupies `state`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sojourn {
    pub state: usize,
    pub start: f64,
    pub end: f64,
}

impl Trajectory {
    pub fn new(initial_state: usize) -> Self {
        Self {
            initial_state,
            transitions: Vec::new(),
            censor_time: f64::INFINITY,
            truncation_time: 0.0,
        }
    }

    pub fn with_transition(mut self, time: f64, to: usize) -> Self {
        self.transitions.push(Transition { time, to });
        self
    }

    pub fn censored_at(mut self, time: f64) -> Self {
        self.censor_time = time;
        self
    }

    pub fn truncated_at(mut self, time: f64) -> Self {
        self.truncation_time = time;
        self
    }

    /// State occupied at `t` (right-continuous in `t`).
    pub fn state_at(&self, t: f64) -> usize {
        self.transitions
            .iter()
            .take_while(|tr| tr.time <= t)
            .last()
            .map_or(self.initial_state, |tr| tr.to)
    }

    pub fn final_state(&self) -> usize {
        self.transitions.last().map_or(self.initial_state, |tr| tr.to)
    }

    /// `T*`, the time of the last observed transition (0 without transitions).
    pub fn last_transition_time(&self) -> f64 {
        self.transitions.last().map_or(0.0, |tr| tr.time)
    }

    pub fn is_absorbed(&self, space: &StateSpace) -> bool {
        space.is_absorbing(self.final_state())
    }

    /// End of follow-up: the absorption time when absorbed, else `C`.
    pub fn exit_time(&self, space: &StateSpace) -> f64 {
        if self.is_absorbed(space) {
            self.last_transition_time()
        } else {
            self.censor_time
        }
    }

    /// Sojourns of the full path, ignoring truncation and censoring.
    pub fn sojourns(&self) -> Vec<Sojourn> {
        let mut out = Vec::with_capacity(self.transitions.len() + 1);
        let mut state = self.initial_state;
        let mut start = 0.0;
        for tr in &self.transitions {
            out.push(Sojourn {
                state,
                start,
                end: tr.time,
            });
            state = tr.to;
            start = tr.time;
        }
        out.push(Sojourn {
            state,
            start,
            end: f64::INFINITY,
        });
        out
    }

    /// Sojourns clipped to the observation window `(L, C]`; empty pieces dropped.
    pub fn observed_sojourns(&self) -> Vec<Sojourn> {
        self.sojourns()
            .into_iter()
            .filter_map(|s| {
                let start = s.start.max(self.truncation_time);
                let end = s.end.min(self.censor_time);
                (start < end).then_some(Sojourn {
                    state: s.state,
                    start,
                    end,
                })
            })
            .collect()
    }

    /// Observed transitions as `(time, from, to)`.
    pub fn jumps(&self) -> impl Iterator<Item = (f64, usize, usize)> + '_ {
        let mut from = self.initial_state;
        self.transitions.iter().map(move |tr| {
            let out = (tr.time, from, tr.to);
            from = tr.to;
            out
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub trajectory: Trajectory,
    pub covariates: Vec<f64>,
    /// Intra-cluster group label (0 or 1) for multilevel designs.
    pub group: Option<u8>,
}

impl Subject {
    pub fn new(id: impl Into<String>, trajectory: Trajectory) -> Self {
        Self {
            id: id.into(),
            trajectory,
            covariates: Vec::new(),
            group: None,
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn with_group(mut self, group: u8) -> Self {
        self.group = Some(group);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: String,
    pub subjects: Vec<Subject>,
}

impl Cluster {
    pub fn new(id: impl Into<String>, subjects: Vec<Subject>) -> Self {
        Self {
            id: id.into(),
            subjects,
        }
    }

    pub fn size(&self) -> usize {
        self.subjects.len()
    }
}

/// The full clustered dataset.
///
/// Construction does not check the trajectory invariants; use
/// [`Panel::validated`] or [`validate_panel`] before estimating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub state_space: StateSpace,
    pub covariate_names: Vec<String>,
    pub clusters: Vec<Cluster>,
}

impl Panel {
    pub fn new(state_space: StateSpace, covariate_names: Vec<String>, clusters: Vec<Cluster>) -> Self {
        Self {
            state_space,
            covariate_names,
            clusters,
        }
    }

    pub fn validated(
        state_space: StateSpace,
        covariate_names: Vec<String>,
        clusters: Vec<Cluster>,
    ) -> Result<Self> {
        let panel = Self::new(state_space, covariate_names, clusters);
        panel.ensure_valid()?;
        Ok(panel)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = validate_panel(self);
        if violations.is_empty() {
            Ok(())
        } else {
            let msg = violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::InvalidPanel(msg))
        }
    }

    pub fn num_states(&self) -> usize {
        self.state_space.num_states()
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn num_subjects(&self) -> usize {
        self.clusters.iter().map(Cluster::size).sum()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Cluster::size).collect()
    }

    /// Subjects in cluster-major order, the order used by every per-subject
    /// output of this crate.
    pub fn subjects(&self) -> impl Iterator<Item = &Subject> {
        self.clusters.iter().flat_map(|c| c.subjects.iter())
    }

    /// `(cluster index, subject)` pairs in cluster-major order.
    pub fn indexed_subjects(&self) -> impl Iterator<Item = (usize, &Subject)> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.subjects.iter().map(move |s| (i, s)))
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Copy of the panel with subject `subject` of cluster `cluster` removed;
    /// a cluster left empty is dropped.
    pub fn without_subject(&self, cluster: usize, subject: usize) -> Self {
        let mut out = self.clone();
        out.clusters[cluster].subjects.remove(subject);
        if out.clusters[cluster].subjects.is_empty() {
            out.clusters.remove(cluster);
        }
        out
    }

    pub fn without_cluster(&self, cluster: usize) -> Self {
        let mut out = self.clone();
        out.clusters.remove(cluster);
        out
    }
}

/// Per-subject weights `w_ij` used by every estimator in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    /// `w_ij = 1`
    Unweighted,
    /// `w_ij = 1 / n_i`
    InverseClusterSize,
    /// `w_ij = 1 / (G_i n_iq)`, `G_i` the number of nonempty groups in
    /// cluster `i`; this is `1 / (2 n_iq)` when both groups are present.
    InverseGroupSize,
}

impl WeightScheme {
    pub const ALL: [WeightScheme; 3] = [
        WeightScheme::Unweighted,
        WeightScheme::InverseClusterSize,
        WeightScheme::InverseGroupSize,
    ];

    pub fn label(self) -> &'static str {
        match self {
            WeightScheme::Unweighted => "none",
            WeightScheme::InverseClusterSize => "inverse-cluster",
            WeightScheme::InverseGroupSize => "inverse-group",
        }
    }

    /// Weights in cluster-major subject order.
    pub fn weights(self, panel: &Panel) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(panel.num_subjects());
        for cluster in &panel.clusters {
            let n = cluster.size();
            match self {
                WeightScheme::Unweighted => out.extend(std::iter::repeat_n(1.0, n)),
                WeightScheme::InverseClusterSize => {
                    out.extend(std::iter::repeat_n(1.0 / n as f64, n))
                }
                WeightScheme::InverseGroupSize => {
                    let mut counts = [0usize; 2];
                    for s in &cluster.subjects {
                        match s.group {
                            Some(g @ (0 | 1)) => counts[g as usize] += 1,
                            Some(g) => {
                                return Err(Error::InvalidArgument(format!(
                                    "subject {} of cluster {} has group {g}; expected 0 or 1",
                                    s.id, cluster.id
                                )))
                            }
                            None => {
                                return Err(Error::InvalidArgument(format!(
                                    "inverse-group weights need a group label on every subject; \
                                     subject {} of cluster {} has none",
                                    s.id, cluster.id
                                )))
                            }
                        }
                    }
                    let nonempty = counts.iter().filter(|&&c| c > 0).count() as f64;
                    for s in &cluster.subjects {
                        let nq = counts[s.group.unwrap() as usize] as f64;
                        out.push(1.0 / (nonempty * nq));
                    }
                }
            }
        }
        Ok(out)
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "unweighted" => Ok(WeightScheme::Unweighted),
            "inverse-cluster" => Ok(WeightScheme::InverseClusterSize),
            "inverse-group" => Ok(WeightScheme::InverseGroupSize),
            other => Err(Error::InvalidArgument(format!(
                "unknown weight scheme '{other}' (expected none, inverse-cluster, inverse-group)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subj(id: &str, g: u8) -> Subject {
        Subject::new(id, Trajectory::new(1).censored_at(1.0)).with_group(g)
    }

    #[test]
    fn trajectory_state_lookup() {
        let tr = Trajectory::new(1).with_transition(1.0, 2).with_transition(3.0, 3);
        assert_eq!(tr.state_at(0.5), 1);
        assert_eq!(tr.state_at(1.0), 2);
        assert_eq!(tr.state_at(10.0), 3);
        assert_eq!(tr.last_transition_time(), 3.0);
        let space = StateSpace::illness_death();
        assert!(tr.is_absorbed(&space));
        assert_eq!(tr.exit_time(&space), 3.0);
    }

    #[test]
    fn observed_sojourns_clip_to_window() {
        let tr = Trajectory::new(1)
            .with_transition(2.0, 2)
            .censored_at(5.0)
            .truncated_at(1.0);
        let s = tr.observed_sojourns();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].state, s[0].start, s[0].end), (1, 1.0, 2.0));
        assert_eq!((s[1].state, s[1].start, s[1].end), (2, 2.0, 5.0));
    }

    #[test]
    fn group_weights_handle_both_and_single_groups() {
        let space = StateSpace::two_state();
        let panel = Panel::new(
            space,
            vec![],
            vec![
                Cluster::new("a", vec![subj("1", 0), subj("2", 1), subj("3", 1)]),
                Cluster::new("b", vec![subj("4", 1), subj("5", 1)]),
            ],
        );
        let w = WeightScheme::InverseGroupSize.weights(&panel).unwrap();
        assert_eq!(w, vec![0.5, 0.25, 0.25, 0.5, 0.5]);
        let w = WeightScheme::InverseClusterSize.weights(&panel).unwrap();
        assert_eq!(w[0], 1.0 / 3.0);
        assert_eq!(w[4], 0.5);
    }

    #[test]
    fn group_weights_require_labels() {
        let panel = Panel::new(
            StateSpace::two_state(),
            vec![],
            vec![Cluster::new("a", vec![Subject::new("1", Trajectory::new(1))])],
        );
        assert!(WeightScheme::InverseGroupSize.weights(&panel).is_err());
    }

    #[test]
    fn weight_scheme_labels_round_trip() {
        for w in WeightScheme::ALL {
            assert_eq!(w.label().parse::<WeightScheme>().unwrap(), w);
        }
    }
}
