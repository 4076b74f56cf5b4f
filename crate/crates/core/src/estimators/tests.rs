use super::*;
use crate::panel::{Cluster, StateSpace, Subject, Trajectory};

fn four_subjects() -> Panel {
    let subjects = [
        Subject::new("a", Trajectory::new(1).with_transition(1.0, 3)),
        Subject::new("b", Trajectory::new(1).censored_at(2.0)),
        Subject::new("c", Trajectory::new(1).with_transition(4.0, 3)),
        Subject::new("d", Trajectory::new(1).with_transition(3.0, 2).censored_at(5.0)),
    ];
    Panel::validated(
        StateSpace::illness_death(),
        vec![],
        vec![Cluster::new("1", subjects[..2].to_vec()), Cluster::new("2", subjects[2..].to_vec())],
    )
    .unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn hand_computed_occupation() {
    // t=1: 1 of 4 leaves to 3. t=3: 1 of 2 leaves to 2. t=4: the last one
    // at risk in state 1 leaves to 3.
    let p = four_subjects();
    let w = WeightScheme::Unweighted;
    assert!(close(&state_occupation(&p, w, 0.5).unwrap(), &[1.0, 0.0, 0.0], 1e-15));
    assert!(close(&state_occupation(&p, w, 1.0).unwrap(), &[0.75, 0.0, 0.25], 1e-15));
    assert!(close(&state_occupation(&p, w, 3.0).unwrap(), &[0.375, 0.375, 0.25], 1e-15));
    assert!(close(&state_occupation(&p, w, 9.0).unwrap(), &[0.0, 0.375, 0.625], 1e-15));
}

#[test]
fn intensity_rows_sum_to_zero() {
    let na = nelson_aalen(&four_subjects(), WeightScheme::InverseClusterSize).unwrap();
    assert_eq!(na.jump_times(), &[1.0, 3.0, 4.0]);
    for k in 0..na.jump_times().len() {
        let inc = na.increment(k);
        for r in inc.row_iter() {
            assert!(r.sum().abs() < 1e-15);
        }
    }
    let a = na.cumulative(10.0);
    assert!((a[(0, 1)] - 0.5).abs() < 1e-15);
}

#[test]
fn transition_matrix_properties() {
    let na = nelson_aalen(&four_subjects(), WeightScheme::Unweighted).unwrap();
    let p = aalen_johansen(&na, 0.0, 9.0).unwrap();
    assert!(p.max_row_sum_error() < 1e-14);
    assert_eq!(p.get(3, 3), 1.0);
    assert_eq!(aalen_johansen(&na, 2.0, 2.0).unwrap().entries, DMatrix::identity(3, 3));
    assert!(aalen_johansen(&na, 3.0, 2.0).is_err());

    let p02 = aalen_johansen(&na, 0.0, 2.0).unwrap().entries;
    let p29 = aalen_johansen(&na, 2.0, 9.0).unwrap().entries;
    assert!((p02 * p29 - p.entries).abs().max() < 1e-15);
}

#[test]
fn two_state_matches_kaplan_meier() {
    let times = [(1.0, true), (2.0, false), (2.0, true), (3.5, true), (4.0, false), (6.0, true), (7.0, false)];
    let subjects: Vec<Subject> = times
        .iter()
        .enumerate()
        .map(|(i, &(t, event))| {
            let tr = if event {
                Trajectory::new(1).with_transition(t, 2)
            } else {
                Trajectory::new(1).censored_at(t)
            };
            Subject::new(i.to_string(), tr)
        })
        .collect();
    let panel = Panel::validated(StateSpace::two_state(), vec![], vec![Cluster::new("1", subjects)]).unwrap();

    // Product-limit on (time, event) pairs, events before censorings at ties.
    let km = |t: f64| {
        let mut s = 1.0;
        let mut event_times: Vec<f64> = times.iter().filter(|x| x.1).map(|x| x.0).collect();
        event_times.dedup();
        for u in event_times.into_iter().filter(|&u| u <= t) {
            let n = times.iter().filter(|x| x.0 >= u).count() as f64;
            let d = times.iter().filter(|x| x.1 && x.0 == u).count() as f64;
            s *= 1.0 - d / n;
        }
        s
    };
    for t in [0.5, 1.0, 2.0, 3.0, 3.5, 5.0, 6.0, 8.0] {
        let pi = state_occupation(&panel, WeightScheme::Unweighted, t).unwrap();
        assert!((pi[0] - km(t)).abs() < 1e-15, "t = {t}");
    }
}

#[test]
fn equal_cluster_sizes_make_weighting_irrelevant() {
    let p = four_subjects();
    for t in [1.0, 3.0, 4.5] {
        let a = state_occupation(&p, WeightScheme::Unweighted, t).unwrap();
        let b = state_occupation(&p, WeightScheme::InverseClusterSize, t).unwrap();
        assert!(close(&a, &b, 1e-15));
    }
}

#[test]
fn complete_data_gives_weighted_fractions() {
    let c1 = vec![
        Subject::new("1", Trajectory::new(1).with_transition(1.0, 2).with_transition(2.0, 3)),
        Subject::new("2", Trajectory::new(1).with_transition(3.0, 3)),
        Subject::new("3", Trajectory::new(1).with_transition(1.5, 2).censored_at(9.0)),
    ];
    let c2 = vec![Subject::new("4", Trajectory::new(2).with_transition(2.5, 3))];
    let panel = Panel::validated(
        StateSpace::illness_death(),
        vec![],
        vec![Cluster::new("a", c1), Cluster::new("b", c2)],
    )
    .unwrap();
    for w in [WeightScheme::Unweighted, WeightScheme::InverseClusterSize] {
        let weights = w.weights(&panel).unwrap();
        let total: f64 = weights.iter().sum();
        for t in [0.0, 1.0, 1.7, 2.0, 2.6, 3.0, 8.0] {
            let mut frac = vec![0.0; 3];
            for (s, wt) in panel.subjects().zip(&weights) {
                frac[s.trajectory.state_at(t) - 1] += wt / total;
            }
            let pi = state_occupation(&panel, w, t).unwrap();
            assert!(close(&pi, &frac, 1e-14), "{w} t={t}: {pi:?} vs {frac:?}");
        }
    }
}

#[test]
fn sop_curve_agrees_with_pointwise() {
    let p = four_subjects();
    let grid = [0.5, 1.0, 2.5, 3.0, 4.0, 10.0];
    let curve = sop_curve(&p, WeightScheme::InverseClusterSize, &grid).unwrap();
    for (t, row) in grid.iter().zip(&curve.estimates) {
        let direct = state_occupation(&p, WeightScheme::InverseClusterSize, *t).unwrap();
        assert!(close(row, &direct, 1e-15));
    }
    assert!(curve.state(3).is_nondecreasing());

    let mut buf = Vec::new();
    curve.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("time,state,estimate,weight_scheme\n0.5,1,1,inverse-cluster\n"));
    assert_eq!(text.lines().count(), 1 + grid.len() * 3);

    assert!(sop_curve(&p, WeightScheme::Unweighted, &[2.0, 1.0]).is_err());
}

#[test]
fn no_subjects_is_an_error() {
    let panel = Panel::new(StateSpace::illness_death(), vec![], vec![]);
    assert!(matches!(
        state_occupation(&panel, WeightScheme::Unweighted, 1.0),
        Err(Error::EmptyInitialDistribution)
    ));
}
