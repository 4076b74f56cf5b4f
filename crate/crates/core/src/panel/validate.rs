use std::fmt;

use serde::Serialize;

use super::{Panel, Subject};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub cluster: String,
    /// `None` for cluster-level rules.
    pub subject: Option<String>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.subject {
            Some(s) => write!(f, "cluster {}, subject {}: {}", self.cluster, s, self.rule),
            None => write!(f, "cluster {}: {}", self.cluster, self.rule),
        }
    }
}

/// Every broken invariant of the panel. Empty iff the panel is valid.
pub fn validate_panel(panel: &Panel) -> Vec<Violation> {
    let mut out = Vec::new();
    let ncov = panel.covariate_names.len();
    for cluster in &panel.clusters {
        if cluster.subjects.is_empty() {
            out.push(Violation {
                cluster: cluster.id.clone(),
                subject: None,
                rule: "empty cluster".into(),
            });
        }
        for subject in &cluster.subjects {
            for rule in subject_rules(panel, subject, ncov) {
                out.push(Violation {
                    cluster: cluster.id.clone(),
                    subject: Some(subject.id.clone()),
                    rule,
                });
            }
        }
    }
    out
}

fn subject_rules(panel: &Panel, subject: &Subject, ncov: usize) -> Vec<String> {
    let space = &panel.state_space;
    let tr = &subject.trajectory;
    let mut rules = Vec::new();

    if subject.covariates.len() != ncov {
        rules.push(format!(
            "covariate length {} differs from panel's {ncov}",
            subject.covariates.len()
        ));
    }
    if let Some(g) = subject.group {
        if g > 1 {
            rules.push(format!("group label {g} not in {{0, 1}}"));
        }
    }
    if !space.contains(tr.initial_state) {
        rules.push(format!("state {} outside state space", tr.initial_state));
    }
    if !(tr.truncation_time >= 0.0 && tr.truncation_time.is_finite()) {
        rules.push("truncation time must be finite and nonnegative".into());
    }
    if tr.censor_time.is_nan() || tr.censor_time <= 0.0 {
        rules.push("censoring time must be positive".into());
    }
    if tr.truncation_time >= tr.censor_time {
        rules.push("truncation time not before censoring time".into());
    }

    let mut prev_time = 0.0;
    let mut state = tr.initial_state;
    let mut monotone_reported = false;
    for t in &tr.transitions {
        if !(t.time > prev_time) && !monotone_reported {
            rules.push("non-monotone times".into());
            monotone_reported = true;
        }
        if !space.contains(t.to) {
            rules.push(format!("state {} outside state space", t.to));
        }
        if space.is_absorbing(state) {
            rules.push(format!("transition out of absorbing state {state}"));
        }
        if t.to == state {
            rules.push(format!("self-transition in state {state}"));
        }
        if t.time > tr.censor_time {
            rules.push(format!("transition at {} after censoring", t.time));
        }
        if t.time <= tr.truncation_time {
            rules.push(format!("transition at {} not after truncation", t.time));
        }
        prev_time = t.time;
        state = t.to;
    }
    if !space.is_absorbing(state) && tr.censor_time.is_infinite() {
        rules.push("no censoring time for a subject not followed into an absorbing state".into());
    }
    rules
}
