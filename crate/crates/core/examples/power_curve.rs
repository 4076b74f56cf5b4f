//! Power of the Wald test of H0: delta1 = 0 for the four strategies.
//!
//! cargo run --release --example power_curve -- [replicates] [m] [informative|noninformative] [seed]

use pseudoreg::simulation::{power_study, ClusterSizes, SimConfig};

fn main() -> pseudoreg::Result<()> {
    let mut args = std::env::args().skip(1);
    let replicates = args.next().map_or(20, |s| s.parse().expect("replicates"));
    let m = args.next().map_or(30, |s| s.parse().expect("m"));
    let sizes = args.next().map_or(Ok(ClusterSizes::Informative), |s| s.parse())?;
    let seed = args.next().map_or(1, |s| s.parse().expect("seed"));
    let config = SimConfig {
        m,
        seed,
        cluster_sizes: sizes,
        ..SimConfig::default()
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let result = power_study(&config, &[-1.0, -0.5, 0.0, 0.5, 1.0], replicates, threads)?;
    result.write_csv(std::io::stdout().lock())?;
    Ok(())
}
