//! Point-to-point, ring all-reduce and compute times on the four-region default cluster.

use halos::cluster::{best_ring, compute_time, dyn_local_steps, p2p_time, ClusterSpec, PYTHIA_70M_MESSAGE_BYTES};

fn main() -> halos::Result<()> {
    let spec = ClusterSpec::paper_default();
    let bytes = PYTHIA_70M_MESSAGE_BYTES;

    println!("point-to-point transfer of {bytes} bytes (seconds):");
    for a in &spec.regions {
        let row: Vec<String> = spec
            .regions
            .iter()
            .map(|b| p2p_time(a, b, bytes, &spec).map(|t| format!("{t:8.3}")))
            .collect::<halos::Result<_>>()?;
        println!("  {a}: {}", row.join(" "));
    }

    let participants: Vec<usize> = (0..spec.num_workers())
        .map(|w| spec.region_index(&spec.workers[w].region))
        .collect::<halos::Result<_>>()?;
    let (ring, gbps) = best_ring(&participants, &spec)?;
    let names: Vec<&str> = ring.iter().map(|&r| spec.regions[r].as_str()).collect();
    let all: Vec<&str> = spec.workers.iter().map(|w| w.region.as_str()).collect();
    println!(
        "best ring {} bottleneck {gbps} Gbps, all-reduce {:.3} s",
        names.join(" -> "),
        halos::cluster::ring_allreduce_time(&all, bytes, &spec)?
    );

    println!("per-worker round times with H = 32:");
    let fastest = spec.fastest_speed();
    for (w, worker) in spec.workers.iter().enumerate() {
        let h = dyn_local_steps(32, worker.speed, fastest);
        println!(
            "  worker {w:2} ({}, speed {:4.1}): fixed {:6.2} s, dynamic H = {h:2} -> {:6.2} s",
            worker.region,
            worker.speed,
            compute_time(32, worker.speed, &spec),
            compute_time(h, worker.speed, &spec)
        );
    }
    Ok(())
}
