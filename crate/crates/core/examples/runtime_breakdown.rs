//! Compute / communication / stall fractions of every strategy, from timing alone.

use halos::cluster::ClusterSpec;
use halos::engine::StopRule;
use halos::run::breakdown_table;
use halos::strategy::StrategyKind;

fn main() -> halos::Result<()> {
    let rows = breakdown_table(
        &ClusterSpec::paper_default(),
        &StrategyKind::ALL,
        StopRule::SimTime(3600.0),
        0,
    )?;
    println!("{:<16} {:>8} {:>8} {:>8}", "strategy", "compute", "comm", "stall");
    for (kind, b) in rows {
        println!(
            "{:<16} {:>7.1}% {:>7.1}% {:>7.1}%",
            kind.name(),
            100.0 * b.compute_fraction,
            100.0 * b.comm_fraction,
            100.0 * b.stall_fraction
        );
    }
    Ok(())
}
