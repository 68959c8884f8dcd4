//! Measured model staleness at both server tiers for each strategy.

use halos::config::RunConfig;
use halos::engine::{measure_staleness, replay};
use halos::run::{build_workload, with_strategy};
use halos::strategy::StrategyKind;

fn main() -> halos::Result<()> {
    let base = RunConfig::load(
        concat!(env!("CARGO_MANIFEST_DIR"), "/configs/reference_quadratic.toml"),
        &["stop.sim_time=600".into()],
    )?;
    println!("{:<16} {:>10} {:>10} {:>8}", "strategy", "global", "local", "updates");
    for kind in StrategyKind::ALL {
        let cfg = with_strategy(&base, kind)?;
        let trace = halos::engine::generate_trace(&cfg.timing())?;
        let mut opts = cfg.replay_options();
        opts.retain_snapshots = true;
        let r = replay(&trace, &cfg.timing(), &build_workload(&cfg)?, &opts)?;
        let s = measure_staleness(&trace, &r.snapshots)?;
        println!(
            "{:<16} {:>10.4} {:>10.4} {:>8}",
            kind.name(),
            s.d_g_hat,
            s.d_l_hat,
            s.series.len()
        );
    }
    Ok(())
}
