//! Censoring survival, IPCW-weighted transition counts and at-risk sets.

use crate::error::{Error, Result};
use crate::step::StepFunction;

use super::{Panel, WeightScheme};

/// Weighted Kaplan-Meier estimate `K(t)` of the censoring survival function.
///
/// A censoring time `C` is the "event"; a subject followed into an absorbing
/// state at `T*` is a censored observation of `C` at `T*`. Subjects enter the
/// risk set after their truncation time. A transition at exactly `C` counts as
/// observed, so the subject is censored-for-`K` there.
pub fn censoring_km(panel: &Panel, weights: WeightScheme) -> Result<StepFunction> {
    let w = weights.weights(panel)?;
    let space = &panel.state_space;

    struct Obs {
        entry: f64,
        exit: f64,
        event: bool,
        weight: f64,
    }
    let obs: Vec<Obs> = panel
        .subjects()
        .zip(&w)
        .map(|(s, &weight)| {
            let tr = &s.trajectory;
            let absorbed = tr.is_absorbed(space);
            Obs {
                entry: tr.truncation_time,
                exit: tr.exit_time(space),
                event: !absorbed,
                weight,
            }
        })
        .collect();

    let mut times: Vec<f64> = obs.iter().filter(|o| o.event).map(|o| o.exit).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    if times.is_empty() {
        return Ok(StepFunction::constant(1.0));
    }

    let j = times.len();
    let mut risk = vec![0.0; j + 1];
    let mut risk_n = vec![0i64; j + 1];
    let mut dead = vec![0.0; j];
    let mut dead_n = vec![0i64; j];
    for o in &obs {
        let (lo, hi) = index_range(&times, o.entry, o.exit);
        if lo < hi {
            risk[lo] += o.weight;
            risk[hi] -= o.weight;
            risk_n[lo] += 1;
            risk_n[hi] -= 1;
        }
        if o.event {
            let k = times.partition_point(|&x| x < o.exit);
            dead[k] += o.weight;
            dead_n[k] += 1;
        }
    }

    let mut surv = 1.0;
    let mut y = 0.0;
    let mut y_n = 0i64;
    let mut points = Vec::with_capacity(j);
    for k in 0..j {
        y += risk[k];
        y_n += risk_n[k];
        if dead_n[k] > 0 {
            let factor = if dead_n[k] >= y_n { 0.0 } else { 1.0 - dead[k] / y };
            surv *= factor;
        }
        points.push((times[k], surv));
    }
    Ok(StepFunction::from_points(1.0, points))
}

/// IPCW-weighted count `N_{from,to}(t)` of observed `from -> to` transitions.
///
/// Each transition at `T` contributes `w_ij / K(T-)`.
pub fn counting_process(
    panel: &Panel,
    from: usize,
    to: usize,
    weights: WeightScheme,
    censoring: &StepFunction,
) -> Result<StepFunction> {
    check_states(panel, &[from, to])?;
    if from == to {
        return Err(Error::InvalidArgument(
            "counting process needs distinct from/to states".into(),
        ));
    }
    let w = weights.weights(panel)?;
    let mut jumps: Vec<(f64, f64)> = Vec::new();
    for (s, &weight) in panel.subjects().zip(&w) {
        let tr = &s.trajectory;
        for (time, f, t) in tr.jumps() {
            if f != from || t != to || time > tr.censor_time || time <= tr.truncation_time {
                continue;
            }
            let k = censoring.left_limit(time);
            if !(k > 0.0) {
                return Err(Error::IpcwUndefined(time));
            }
            jumps.push((time, weight / k));
        }
    }
    jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let points = jumps.into_iter().map(|(t, v)| {
        total += v;
        (t, total)
    });
    Ok(StepFunction::from_points(0.0, points.collect::<Vec<_>>()))
}

/// The at-risk process `M_l(t)`, which is left-continuous in `t`.
///
/// Stored as the right-continuous function `h` with `M(t) = h(t-)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtRiskProcess {
    inner: StepFunction,
}

impl AtRiskProcess {
    /// `M_l(t)`: weighted, IPCW-scaled number at risk of leaving `l` at `t`.
    pub fn value(&self, t: f64) -> f64 {
        self.inner.left_limit(t)
    }

    pub fn as_step(&self) -> &StepFunction {
        &self.inner
    }
}

/// Weighted at-risk process for `state`: each subject occupying `state` on
/// `(a, b]` inside its window `(L, C]` contributes `w_ij / K(t-)` for `t`
/// in that interval.
pub fn at_risk(
    panel: &Panel,
    state: usize,
    weights: WeightScheme,
    censoring: &StepFunction,
) -> Result<AtRiskProcess> {
    check_states(panel, &[state])?;
    let w = weights.weights(panel)?;
    // (time, weight delta, count delta)
    let mut events: Vec<(f64, f64, i64)> = Vec::new();
    for (s, &weight) in panel.subjects().zip(&w) {
        for so in s.trajectory.observed_sojourns() {
            if so.state != state {
                continue;
            }
            events.push((so.start, weight, 1));
            if so.end.is_finite() {
                events.push((so.end, -weight, -1));
            }
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut breaks: Vec<f64> = events
        .iter()
        .map(|e| e.0)
        .chain(censoring.jump_times().iter().copied())
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut points = Vec::with_capacity(breaks.len());
    let mut g = 0.0;
    let mut g_n = 0i64;
    let mut e = 0;
    for &b in &breaks {
        while e < events.len() && events[e].0 <= b {
            g += events[e].1;
            g_n += events[e].2;
            e += 1;
        }
        let value = if g_n == 0 {
            0.0
        } else {
            let k = censoring.eval(b);
            if !(k > 0.0) {
                return Err(Error::IpcwUndefined(b));
            }
            g / k
        };
        points.push((b, value));
    }
    Ok(AtRiskProcess {
        inner: StepFunction::from_points(0.0, points),
    })
}

/// Indices `lo..hi` of sorted `times` lying in `(a, b]`.
pub(crate) fn index_range(times: &[f64], a: f64, b: f64) -> (usize, usize) {
    let lo = times.partition_point(|&x| x <= a);
    let hi = times.partition_point(|&x| x <= b);
    (lo, hi.max(lo))
}

fn check_states(panel: &Panel, states: &[usize]) -> Result<()> {
    for &s in states {
        if !panel.state_space.contains(s) {
            return Err(Error::InvalidArgument(format!(
                "state {s} outside 1..={}",
                panel.num_states()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Cluster, StateSpace, Subject, Trajectory};

    fn single_cluster(trs: Vec<Trajectory>) -> Panel {
        Panel::new(
            StateSpace::illness_death(),
            vec![],
            vec![Cluster::new(
                "c",
                trs.into_iter()
                    .enumerate()
                    .map(|(i, t)| Subject::new(i.to_string(), t))
                    .collect(),
            )],
        )
    }

    /// A absorbed at 1, B censored at 2, C absorbed at 4, D censored at 5.
    fn four_subjects() -> Panel {
        Panel::new(
            StateSpace::illness_death(),
            vec![],
            ["a", "b", "c", "d"]
                .iter()
                .zip([
                    Trajectory::new(1).with_transition(1.0, 3),
                    Trajectory::new(1).censored_at(2.0),
                    Trajectory::new(1).with_transition(4.0, 3),
                    Trajectory::new(1).with_transition(3.0, 2).censored_at(5.0),
                ])
                .map(|(id, t)| Cluster::new(*id, vec![Subject::new(*id, t)]))
                .collect(),
        )
    }

    #[test]
    fn km_without_censoring_is_one() {
        let p = single_cluster(vec![
            Trajectory::new(1).with_transition(1.0, 3),
            Trajectory::new(1).with_transition(2.0, 2).with_transition(3.0, 3),
        ]);
        let k = censoring_km(&p, WeightScheme::Unweighted).unwrap();
        assert_eq!(k.eval(0.0), 1.0);
        assert_eq!(k.eval(100.0), 1.0);
    }

    #[test]
    fn km_single_censored_subject() {
        let p = single_cluster(vec![Trajectory::new(1).censored_at(3.0)]);
        let k = censoring_km(&p, WeightScheme::Unweighted).unwrap();
        assert_eq!(k.eval(2.999), 1.0);
        assert_eq!(k.eval(3.0), 0.0);
        assert_eq!(k.eval(7.0), 0.0);
    }

    #[test]
    fn km_hand_computed() {
        // Risk set at 2: {b, c, d} -> 2/3. Risk set at 5: {d} -> 0.
        let k = censoring_km(&four_subjects(), WeightScheme::Unweighted).unwrap();
        assert_eq!(k.eval(1.5), 1.0);
        assert!((k.eval(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((k.eval(4.9) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(k.eval(5.0), 0.0);
        assert!(k.is_nonincreasing());
    }

    #[test]
    fn counting_process_scaled_by_censoring_survival() {
        let p = four_subjects();
        let k = censoring_km(&p, WeightScheme::Unweighted).unwrap();
        let n13 = counting_process(&p, 1, 3, WeightScheme::Unweighted, &k).unwrap();
        // jump 1/K(1-) = 1 at t=1, then 1/K(4-) = 3/2 at t=4
        assert_eq!(n13.eval(0.5), 0.0);
        assert_eq!(n13.eval(1.0), 1.0);
        assert!((n13.eval(4.0) - 2.5).abs() < 1e-14);
        let n12 = counting_process(&p, 1, 2, WeightScheme::Unweighted, &k).unwrap();
        assert!((n12.eval(3.0) - 1.5).abs() < 1e-14);
    }

    #[test]
    fn at_risk_hand_computed() {
        let p = four_subjects();
        let k = censoring_km(&p, WeightScheme::Unweighted).unwrap();
        let m1 = at_risk(&p, 1, WeightScheme::Unweighted, &k).unwrap();
        // t=1: all four in state 1, K(1-) = 1
        assert_eq!(m1.value(1.0), 4.0);
        // t=2: b, c, d at risk (a gone at 1), K(2-) = 1
        assert_eq!(m1.value(2.0), 3.0);
        // t=3: c, d at risk, K(3-) = 2/3
        assert!((m1.value(3.0) - 3.0).abs() < 1e-14);
        let m2 = at_risk(&p, 2, WeightScheme::Unweighted, &k).unwrap();
        assert_eq!(m2.value(3.0), 0.0);
        assert!((m2.value(4.0) - 1.5).abs() < 1e-14);
        assert_eq!(m2.value(5.5), 0.0);
    }

    #[test]
    fn truncated_subject_not_at_risk_before_entry() {
        let p = single_cluster(vec![
            Trajectory::new(1).with_transition(3.0, 3).truncated_at(2.0),
            Trajectory::new(1).with_transition(4.0, 3),
        ]);
        let k = censoring_km(&p, WeightScheme::Unweighted).unwrap();
        let m = at_risk(&p, 1, WeightScheme::Unweighted, &k).unwrap();
        assert_eq!(m.value(1.0), 1.0);
        assert_eq!(m.value(2.0), 1.0);
        assert_eq!(m.value(2.5), 2.0);
        assert_eq!(m.value(3.0), 2.0);
        assert_eq!(m.value(3.5), 1.0);
    }

    #[test]
    fn weighted_counts() {
        let tr = || Trajectory::new(1).with_transition(1.0, 2).censored_at(5.0);
        let stay = || Trajectory::new(1).censored_at(5.0);
        let p = Panel::new(
            StateSpace::illness_death(),
            vec![],
            vec![
                Cluster::new("a", vec![Subject::new("1", tr()), Subject::new("2", stay())]),
                Cluster::new(
                    "b",
                    vec![
                        Subject::new("3", tr()),
                        Subject::new("4", stay()),
                        Subject::new("5", stay()),
                        Subject::new("6", stay()),
                    ],
                ),
            ],
        );
        let one = StepFunction::constant(1.0);
        let n = counting_process(&p, 1, 2, WeightScheme::InverseClusterSize, &one).unwrap();
        assert_eq!(n.eval(10.0), 0.75);
    }
}
