//! Pseudo-value regression of state-1 occupancy on the cluster covariate,
//! under GEE and the cluster-weighted GEE.

use pseudoreg::pseudovalues::{grid_quantiles, pseudo_values};
use pseudoreg::regression::{coefficient_table, fit_gee, Correlation, Equation, ModelSpec};
use pseudoreg::simulation::{simulate_panel, SimConfig};

fn main() -> pseudoreg::Result<()> {
    let config = SimConfig {
        m: 80,
        delta: [-0.85, 0.8],
        pilot_subjects: 20_000,
        ..SimConfig::default()
    };
    let panel = simulate_panel(&config)?;
    let grid = grid_quantiles(&panel, 5)?;

    for ee in [Equation::Gee, Equation::Cwgee] {
        let pv = pseudo_values(&panel, ee.pseudo_method(), 1, &grid)?;
        let spec = ModelSpec::new(&["Z1", "Z2"], &grid)
            .with_weights(ee.weight_scheme())
            .with_correlation(Correlation::Ar1);
        let fit = fit_gee(&pv, &panel, &spec)?;
        println!("{ee}: rho = {:.3}, {} iterations", fit.rho.unwrap_or(0.0), fit.iterations);
        for row in coefficient_table(&fit)? {
            println!("  {:<28} {:>9.4} {:>9.4} {:>9.4}", row.term, row.estimate, row.se, row.p_value);
        }
    }
    Ok(())
}
