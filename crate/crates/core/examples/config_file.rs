//! Loads a TOML config with presets and overrides, prints its canonical form and
//! hash, and shows a validation error.

use halos::config::RunConfig;

const TEXT: &str = r#"
seed = 3
cluster = "paper-default"
strategy = { preset = "halos-paper", k = 16 }
stop = { sim_time = 600.0 }

[workload]
kind = "quadratic"
dim = 32
noise_std = 0.5

[inner]
optimizer = { kind = "adamw" }
lr = 0.001
"#;

fn main() -> halos::Result<()> {
    let cfg = RunConfig::from_toml_str(TEXT, &["beta_g=0.3".into(), "output.dir=\"/tmp/halos-example\"".into()])?;
    println!("resolved config (hash {:016x}):\n{}", cfg.hash(), cfg.to_toml_string()?);
    println!("K = {}, beta_g = {}", cfg.strategy.k, cfg.strategy.global.beta);

    match RunConfig::from_toml_str(TEXT, &["alpha=1.5".into()]) {
        Ok(_) => println!("alpha = 1.5 was accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
