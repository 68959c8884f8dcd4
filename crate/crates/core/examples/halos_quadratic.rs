//! One hierarchical run on a noisy quadratic, built entirely in code.

use halos::analysis::time_to_loss;
use halos::cluster::ClusterSpec;
use halos::engine::{generate_trace, replay, ReplayOptions, StopRule, TimingConfig};
use halos::optim::InnerConfig;
use halos::strategy::StrategyConfig;
use halos::workload::{Hessian, QuadraticSpec, Workload, WorkloadSpec};

fn main() -> halos::Result<()> {
    let cluster = ClusterSpec::paper_default();
    let timing = TimingConfig::new(cluster, StrategyConfig::halos_paper(), StopRule::SimTime(1800.0), 7);

    let mut spec = QuadraticSpec::isotropic(64);
    spec.hessian = Hessian::Spectrum { min: 0.1, max: 1.0 };
    spec.noise_std = 1.0;
    let workload = Workload::build(
        &WorkloadSpec::Quadratic(spec),
        timing.cluster.num_workers(),
        timing.seed,
    )?;

    let trace = generate_trace(&timing)?;
    println!(
        "{} events, {} local steps",
        trace.events.len(),
        trace.header.total_worker_steps
    );

    let r = replay(
        &trace,
        &timing,
        &workload,
        &ReplayOptions::new(InnerConfig::adamw(1e-3)),
    )?;
    let report = &r.report;
    for s in report.loss_curve.iter().step_by(10) {
        println!("t = {:7.1} s  samples = {:7}  loss = {:.4}", s.time, s.samples, s.loss);
    }
    println!(
        "final loss {:?} after {} global updates; time to 0.5: {:?}",
        report.final_loss,
        report.global_updates,
        time_to_loss(report, 0.5).time()
    );
    Ok(())
}
