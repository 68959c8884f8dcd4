//! Saves a trace, reads it back, replays it under different momentum settings,
//! and shows that tampering is detected.

use halos::config::RunConfig;
use halos::engine::{EventKind, Trace};
use halos::run::{build_workload, execute, execute_trace};

fn main() -> halos::Result<()> {
    let cfg = RunConfig::load(
        concat!(env!("CARGO_MANIFEST_DIR"), "/configs/reference_quadratic.toml"),
        &["stop.sim_time=900".into()],
    )?;
    let original = execute(&cfg)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("trace.ndjson.gz");
    original.trace.write(&path)?;
    println!(
        "wrote {} events ({} bytes)",
        original.trace.events.len(),
        std::fs::metadata(&path)?.len()
    );

    let trace = Trace::read(&path)?;
    let workload = build_workload(&cfg)?;
    let again = execute_trace(&cfg, trace.clone(), &workload)?;
    println!(
        "replayed from disk: final model hash {:016x} (original {:016x})",
        again.report().final_model_hash,
        original.report().final_model_hash
    );

    // Momentum does not change event timing, so the same trace serves a sweep.
    for beta in [0.0, 0.3, 0.7] {
        let variant = cfg.with_override(&format!("beta_g={beta}"))?;
        let out = execute_trace(&variant, trace.clone(), &workload)?;
        println!("beta_g = {beta}: final loss {:?}", out.report().final_loss);
    }

    let mut tampered = trace.clone();
    if let Some(e) = tampered
        .events
        .iter_mut()
        .find(|e| matches!(e.kind, EventKind::MsgArrive { .. }))
    {
        e.t += 0.5;
    }
    match execute_trace(&cfg, tampered, &workload) {
        Ok(_) => println!("tampered trace was accepted"),
        Err(e) => println!("tampered trace rejected: {e}"),
    }
    let k_changed = cfg.with_override("k=8")?;
    match execute_trace(&k_changed, trace, &workload) {
        Ok(_) => println!("mismatched config was accepted"),
        Err(e) => println!("mismatched config rejected: {e}"),
    }
    Ok(())
}
