//! Group-null rejection rates when group sizes inform the outcome.
//!
//! cargo run --release --example icg_study -- [replicates] [m] [seed]

use pseudoreg::simulation::{icg_study, IcgConfig, SimConfig};

fn main() -> pseudoreg::Result<()> {
    let mut args = std::env::args().skip(1);
    let replicates = args.next().map_or(50, |s| s.parse().expect("replicates"));
    let m = args.next().map_or(50, |s| s.parse().expect("m"));
    let seed = args.next().map_or(1, |s| s.parse().expect("seed"));
    let config = SimConfig {
        m,
        seed,
        icg: Some(IcgConfig::default()),
        ..SimConfig::default()
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let result = icg_study(&config, replicates, threads)?;
    for row in result.rows.iter().filter(|r| r.metric == "rejection_rate") {
        println!("state {} {:>14}: {:.4}", row.state, row.strategy, row.value);
    }
    Ok(())
}
