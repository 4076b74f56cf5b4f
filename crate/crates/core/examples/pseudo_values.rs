//! Jackknife pseudo-values by both methods on a small censored panel, and
//! their agreement with full leave-one-out recomputation.

use pseudoreg::panel::{Cluster, Panel, StateSpace, Subject, Trajectory};
use pseudoreg::pseudovalues::{pseudo_values, pseudo_values_naive, Method};

fn main() -> pseudoreg::Result<()> {
    let s = |id: &str, tr: Trajectory| Subject::new(id, tr);
    let panel = Panel::validated(
        StateSpace::illness_death(),
        vec![],
        vec![
            Cluster::new("a", vec![
                s("a1", Trajectory::new(1).with_transition(1.0, 2).with_transition(2.5, 3)),
                s("a2", Trajectory::new(1).censored_at(1.8)),
            ]),
            Cluster::new("b", vec![
                s("b1", Trajectory::new(1).with_transition(0.7, 3)),
                s("b2", Trajectory::new(1).with_transition(1.4, 2).censored_at(3.0)),
                s("b3", Trajectory::new(1).with_transition(2.2, 3)),
            ]),
            Cluster::new("c", vec![s("c1", Trajectory::new(1).with_transition(3.1, 2).censored_at(4.0))]),
        ],
    )?;
    let grid = [1.0, 2.0, 3.0];

    for method in [Method::One, Method::Two] {
        let pv = pseudo_values(&panel, method, 2, &grid)?;
        let check = pseudo_values_naive(&panel, method, 2, &grid)?;
        let gap = pv
            .values()
            .iter()
            .zip(check.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("{method}: estimate {:?}, max gap to recomputation {gap:.1e}", pv.estimate);
        for (k, id) in pv.subject_ids.iter().enumerate() {
            println!("  {id}: {:?}", pv.row(k));
        }
    }
    Ok(())
}
