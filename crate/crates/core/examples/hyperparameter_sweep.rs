//! Sweeps global momentum and the merge weight on the reference quadratic.

use halos::config::RunConfig;
use halos::run::run_sweep;

fn main() -> halos::Result<()> {
    let base = RunConfig::load(
        concat!(env!("CARGO_MANIFEST_DIR"), "/configs/reference_quadratic.toml"),
        &[],
    )?;
    for (axis, values) in [
        ("beta_g", vec![0.1, 0.3, 0.5, 0.7, 0.9]),
        ("alpha", vec![0.0, 0.25, 0.5, 0.75, 1.0]),
        ("k", vec![8.0, 16.0, 32.0, 64.0]),
    ] {
        let (summary, _) = run_sweep(&base, axis, &values)?;
        println!("{axis}:");
        for (i, row) in summary.rows.iter().enumerate() {
            let mark = if summary.argmin == Some(i) { "  <- best" } else { "" };
            match row.final_loss {
                Some(l) if !row.diverged => println!("  {:>5}  final loss {l:.4}{mark}", row.value),
                _ => println!("  {:>5}  diverged", row.value),
            }
        }
    }
    Ok(())
}
