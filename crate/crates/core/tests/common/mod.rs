//! Random panels shared by the integration tests.
#![allow(dead_code)]

use pseudoreg::panel::{Cluster, Panel, StateSpace, Subject, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

#[derive(Debug, Clone, Copy)]
pub struct Gen {
    pub max_clusters: usize,
    pub max_size: usize,
    pub censor: bool,
    pub truncate: bool,
    pub two_state: bool,
    /// Round times to a coarse lattice so that ties occur.
    pub ties: bool,
}

impl Default for Gen {
    fn default() -> Self {
        Self {
            max_clusters: 6,
            max_size: 5,
            censor: true,
            truncate: false,
            two_state: false,
            ties: false,
        }
    }
}

fn round(t: f64, ties: bool) -> f64 {
    if ties {
        ((t * 4.0).ceil() / 4.0).max(0.25)
    } else {
        t
    }
}

/// A valid panel with covariate `x` and alternating group labels.
pub fn random_panel(seed: u64, g: Gen) -> Panel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(1.0).unwrap();
    let cens = Exp::new(0.4).unwrap();
    let m = rng.random_range(2..=g.max_clusters.max(2));
    let clusters = (0..m)
        .map(|i| {
            let n = rng.random_range(1..=g.max_size.max(1));
            let subjects = (0..n)
                .map(|j| {
                    let tr = loop {
                        let t1 = round(exp.sample(&mut rng), g.ties);
                        let ill = !g.two_state && rng.random_bool(0.6);
                        let t23 = round(t1 + exp.sample(&mut rng), g.ties);
                        let c = if g.censor { round(cens.sample(&mut rng), g.ties) } else { f64::INFINITY };
                        let l = if g.truncate { rng.random::<f64>() * 0.5 } else { 0.0 };
                        if !(l < t1 && l < c) {
                            continue;
                        }
                        let mut tr = Trajectory::new(1);
                        let absorbing = if g.two_state { 2 } else { 3 };
                        let mut absorbed = false;
                        if t1 <= c {
                            if ill {
                                tr = tr.with_transition(t1, 2);
                                if t23 <= c && t23 > t1 {
                                    tr = tr.with_transition(t23, 3);
                                    absorbed = true;
                                }
                            } else {
                                tr = tr.with_transition(t1, absorbing);
                                absorbed = true;
                            }
                        }
                        if !absorbed {
                            tr = tr.censored_at(c);
                        }
                        if g.truncate {
                            tr = tr.truncated_at(l);
                        }
                        break tr;
                    };
                    let mut s = Subject::new(format!("{i}-{j}"), tr).with_covariates(vec![rng.random()]);
                    s.group = Some((j % 2) as u8);
                    s
                })
                .collect();
            Cluster::new(i.to_string(), subjects)
        })
        .collect();
    let space = if g.two_state { StateSpace::two_state() } else { StateSpace::illness_death() };
    let panel = Panel::new(space, vec!["x".into()], clusters);
    panel.ensure_valid().expect("generator yields valid panels");
    panel
}

/// A few times spread over the observed range, including one past the end.
pub fn grid_for(panel: &Panel) -> Vec<f64> {
    let max = panel
        .subjects()
        .flat_map(|s| s.trajectory.transitions.iter().map(|t| t.time))
        .fold(0.0, f64::max);
    let top = max.max(1.0);
    vec![0.05, 0.5 * top, 0.9 * top, top + 1.0]
}
