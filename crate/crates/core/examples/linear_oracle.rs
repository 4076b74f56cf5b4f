//! Estimating-function expectations in the linear random-effects model.

use pseudoreg::linear_oracle::{oracle_report, LinearConfig, SizeLink};

fn main() -> pseudoreg::Result<()> {
    for link in [SizeLink::Exponential { a: 3.0, b: 5.0 }, SizeLink::Constant(23)] {
        let config = LinearConfig {
            size_link: link,
            ..LinearConfig::default()
        };
        let report = oracle_report(&config, 5_000)?;
        println!("{link:?}");
        for r in &report.results {
            println!("  w = {:<5} mean {:>9.4}  se {:.4}  |mean|/se {:.1}", r.weight.label(), r.mean, r.se, r.z());
        }
    }
    Ok(())
}
