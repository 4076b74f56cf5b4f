//! One simulated illness-death panel written as CSV, with its censoring rate.

use pseudoreg::panel::write_panel_to;
use pseudoreg::simulation::{censoring_rate, simulate_panel, ClusterSizes, SimConfig};

fn main() -> pseudoreg::Result<()> {
    let config = SimConfig {
        m: 4,
        cluster_sizes: ClusterSizes::NonInformative,
        censor_rate: 0.5,
        pilot_subjects: 20_000,
        ..SimConfig::default()
    };
    let panel = simulate_panel(&config)?;
    eprintln!("censored: {:.1}%", 100.0 * censoring_rate(&panel));
    write_panel_to(&panel, std::io::stdout().lock())
}
