//! Weighted and unweighted state occupation probabilities of a simulated
//! panel with informative cluster sizes.

use pseudoreg::estimators::sop_curve;
use pseudoreg::panel::WeightScheme;
use pseudoreg::simulation::{simulate_panel, SimConfig};

fn main() -> pseudoreg::Result<()> {
    let config = SimConfig {
        m: 60,
        pilot_subjects: 20_000,
        ..SimConfig::default()
    };
    let panel = simulate_panel(&config)?;
    println!("{} clusters, {} subjects", panel.num_clusters(), panel.num_subjects());

    let grid = [0.5, 1.0, 1.5, 2.0, 3.0, 5.0];
    let plain = sop_curve(&panel, WeightScheme::Unweighted, &grid)?;
    let weighted = sop_curve(&panel, WeightScheme::InverseClusterSize, &grid)?;

    println!("{:>5} {:>24} {:>24}", "t", "unweighted (1/2/3)", "1/n_i (1/2/3)");
    for (g, t) in grid.iter().enumerate() {
        let fmt = |v: &[f64]| v.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join(" ");
        println!("{t:>5} {:>24} {:>24}", fmt(&plain.estimates[g]), fmt(&weighted.estimates[g]));
    }
    Ok(())
}
