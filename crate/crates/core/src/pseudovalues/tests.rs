use super::*;
use crate::panel::{Cluster, StateSpace, Subject, Trajectory};

fn subject(id: &str, tr: Trajectory) -> Subject {
    Subject::new(id, tr)
}

fn complete_panel() -> Panel {
    let c1 = vec![
        subject("1", Trajectory::new(1).with_transition(1.0, 2).with_transition(2.0, 3)),
        subject("2", Trajectory::new(1).with_transition(3.0, 3)),
        subject("3", Trajectory::new(1).with_transition(1.5, 2).censored_at(9.0)),
    ];
    let c2 = vec![subject("4", Trajectory::new(2).with_transition(2.5, 3))];
    let c3 = vec![
        subject("5", Trajectory::new(1).censored_at(9.0)),
        subject("6", Trajectory::new(1).with_transition(0.5, 3)),
    ];
    Panel::validated(
        StateSpace::illness_death(),
        vec![],
        vec![Cluster::new("a", c1), Cluster::new("b", c2), Cluster::new("c", c3)],
    )
    .unwrap()
}

/// Right-censored and left-truncated, with tied event times across clusters.
fn censored_panel() -> Panel {
    let c1 = vec![
        subject("1", Trajectory::new(1).with_transition(1.0, 2).with_transition(2.0, 3)),
        subject("2", Trajectory::new(1).censored_at(1.5)),
        subject("3", Trajectory::new(1).with_transition(2.0, 2).censored_at(2.5)),
    ];
    let c2 = vec![
        subject("4", Trajectory::new(1).with_transition(2.0, 3)),
        subject("5", Trajectory::new(1).with_transition(0.7, 2).censored_at(3.0).truncated_at(0.4)),
    ];
    let c3 = vec![
        subject("6", Trajectory::new(2).with_transition(1.2, 3)),
        subject("7", Trajectory::new(1).with_transition(3.5, 2).with_transition(4.0, 3).truncated_at(1.1)),
        subject("8", Trajectory::new(1).censored_at(2.0)),
        subject("9", Trajectory::new(1).with_transition(1.0, 3)),
    ];
    let c4 = vec![subject("10", Trajectory::new(1).with_transition(2.6, 2).censored_at(5.0))];
    Panel::validated(
        StateSpace::illness_death(),
        vec![],
        vec![
            Cluster::new("a", c1),
            Cluster::new("b", c2),
            Cluster::new("c", c3),
            Cluster::new("d", c4),
        ],
    )
    .unwrap()
}

#[test]
fn complete_data_gives_indicators() {
    let panel = complete_panel();
    let grid = [0.25, 0.5, 1.0, 1.7, 2.0, 2.6, 3.0, 8.0];
    for method in [Method::One, Method::Two] {
        for set in pseudo_values_all_states(&panel, method, &grid).unwrap() {
            for (s, subj) in panel.subjects().enumerate() {
                for (g, &t) in grid.iter().enumerate() {
                    let ind = f64::from(subj.trajectory.state_at(t) == set.state);
                    assert!(
                        (set.value(s, g) - ind).abs() < 1e-12,
                        "{method} state {} subject {s} t {t}: {}",
                        set.state,
                        set.value(s, g)
                    );
                }
            }
        }
    }
}

#[test]
fn two_subjects_complete() {
    let panel = Panel::validated(
        StateSpace::two_state(),
        vec![],
        vec![Cluster::new(
            "1",
            vec![
                subject("a", Trajectory::new(1).with_transition(1.0, 2)),
                subject("b", Trajectory::new(1).with_transition(3.0, 2)),
            ],
        )],
    )
    .unwrap();
    let set = pseudo_method1(&panel, 1, &[2.0]).unwrap();
    assert_eq!(set.values(), &[0.0, 1.0]);
}

#[test]
fn fast_path_matches_naive() {
    let panel = censored_panel();
    let grid = [0.5, 1.0, 1.2, 2.0, 2.55, 3.6, 4.5];
    for method in [Method::One, Method::Two] {
        for state in 1..=3 {
            let fast = pseudo_values(&panel, method, state, &grid).unwrap();
            let naive = pseudo_values_naive(&panel, method, state, &grid).unwrap();
            for (a, b) in fast.values().iter().zip(naive.values()) {
                assert!((a - b).abs() < 1e-12, "{method} state {state}: {a} vs {b}");
            }
            for (a, b) in fast.estimate.iter().zip(&naive.estimate) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn grid_before_any_event() {
    let panel = censored_panel();
    let set = pseudo_method2(&panel, 1, &[0.1]).unwrap();
    assert!(set.values().iter().all(|&v| (v - 1.0).abs() < 1e-12 || v.abs() < 1e-12));
}

#[test]
fn undefined_jackknives() {
    let one = Panel::validated(
        StateSpace::two_state(),
        vec![],
        vec![Cluster::new("1", vec![subject("a", Trajectory::new(1).with_transition(1.0, 2))])],
    )
    .unwrap();
    assert!(matches!(pseudo_method1(&one, 1, &[1.0]), Err(Error::JackknifeUndefined(_))));
    let mut two = one.clone();
    two.clusters[0].subjects.push(subject("b", Trajectory::new(1).censored_at(2.0)));
    assert!(pseudo_method1(&two, 1, &[1.0]).is_ok());
    assert!(matches!(pseudo_method2(&two, 1, &[1.0]), Err(Error::JackknifeUndefined(_))));
    assert!(pseudo_method1(&two, 3, &[1.0]).is_err());
}

#[test]
fn complete_data_means_recover_the_estimate() {
    let panel = complete_panel();
    let grid = [0.5, 1.7, 2.6];
    for method in [Method::One, Method::Two] {
        let set = pseudo_values(&panel, method, 2, &grid).unwrap();
        for (a, b) in set.mean().iter().zip(&set.estimate) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn csv_layout() {
    let panel = complete_panel();
    let set = pseudo_method2(&panel, 3, &[1.0, 2.0]).unwrap();
    let mut buf = Vec::new();
    set.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("cluster,subject,time,value,method,state"));
    assert_eq!(lines.next(), Some("a,1,1,0,method2,3"));
    assert_eq!(text.lines().count(), 1 + 6 * 2);
}

#[test]
fn quantile_grid() {
    // Observed transition times 0.5, 1, 1.5, 2, 2.5, 3; the k/5 quantiles sit
    // exactly on order statistics 1..=4.
    assert_eq!(grid_quantiles(&complete_panel(), 4).unwrap(), vec![1.0, 1.5, 2.0, 2.5]);
    // k/3 quantiles: positions 5/3 and 10/3.
    let g = grid_quantiles(&complete_panel(), 2).unwrap();
    assert!((g[0] - (1.0 + 2.0 / 3.0 * 0.5)).abs() < 1e-15);
    assert!((g[1] - (2.0 + 1.0 / 3.0 * 0.5)).abs() < 1e-15);
}
