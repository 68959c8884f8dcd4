//! Time-to-loss of every strategy on the reference quadratic.
//!
//! Usage: `cargo run --release --example compare_strategies [config.toml]`

use halos::config::RunConfig;
use halos::run::{compare_rows, execute_all, with_strategy};
use halos::strategy::StrategyKind;

fn main() -> halos::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/reference_quadratic.toml").into());
    let base = RunConfig::load(&path, &[])?;
    let configs = StrategyKind::ALL
        .iter()
        .map(|&k| with_strategy(&base, k))
        .collect::<halos::Result<Vec<_>>>()?;
    let outcomes = execute_all(&configs)?;
    println!("target loss {:?}", base.target_loss);
    println!(
        "{:<16} {:>10} {:>12} {:>9}",
        "strategy", "final", "time-to-loss", "speedup"
    );
    for row in compare_rows(&outcomes, base.target_loss) {
        let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        println!(
            "{:<16} {:>10} {:>12} {:>9}",
            row.strategy.name(),
            opt(row.final_loss, 4),
            opt(row.time_to_loss, 1),
            opt(row.speedup_vs_diloco, 2)
        );
    }
    Ok(())
}
