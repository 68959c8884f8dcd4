//! Global momentum on and off when each region trains on a different text source.

use halos::config::RunConfig;
use halos::run::run_sweep;

fn main() -> halos::Result<()> {
    let base = RunConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/noniid_charlm.toml"), &[])?;
    for seed in [1u64, 2, 3] {
        let cfg = base.with_override(&format!("seed={seed}"))?;
        let (summary, _) = run_sweep(&cfg, "beta_g", &[0.0, 0.5])?;
        let loss = |i: usize| {
            summary.rows[i]
                .final_loss
                .map_or("diverged".into(), |l| format!("{l:.4}"))
        };
        println!("seed {seed}: beta_g = 0 -> {}, beta_g = 0.5 -> {}", loss(0), loss(1));
    }
    Ok(())
}
