//! Absolute error of the Z1 coefficient around its pseudo-true value.
//!
//! cargo run --release --example bias_study -- [replicates]

use pseudoreg::simulation::{bias_study, SimConfig};

fn main() -> pseudoreg::Result<()> {
    let replicates = std::env::args().nth(1).map_or(30, |s| s.parse().expect("replicates"));
    let config = SimConfig {
        delta: [-0.85, 0.8],
        reference_clusters: 5_000,
        ..SimConfig::default()
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let result = bias_study(&config, replicates, threads, None)?;
    for row in result.rows.iter().filter(|r| r.metric == "median_abs_error") {
        println!("state {} {:>14}: median |error| {:.4}", row.state, row.strategy, row.value);
    }
    Ok(())
}
