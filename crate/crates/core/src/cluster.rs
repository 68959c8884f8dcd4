//! Cluster topology and the timing model: α–β point-to-point transfers, ring
//! all-reduce, speed-scaled compute, and dynamic local-step counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of distinct regions for which rings are searched exhaustively.
pub const MAX_RING_REGIONS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerSpec {
    pub region: String,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpsSpec {
    pub region: String,
    pub workers: Vec<usize>,
}

/// Regions, links, workers and server placement.
///
/// `bandwidth_gbps[i][i]` is the intra-region bandwidth of region `i`. An empty
/// `latency_s` means zero propagation delay on every link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub regions: Vec<String>,
    pub bandwidth_gbps: Vec<Vec<f64>>,
    #[serde(default)]
    pub latency_s: Vec<Vec<f64>>,
    pub workers: Vec<WorkerSpec>,
    pub lps: Vec<LpsSpec>,
    pub gps_region: String,
    pub profiled_step_s: f64,
    pub message_bytes: u64,
}

/// Pythia-70M at two bytes per parameter on the wire.
pub const PYTHIA_70M_MESSAGE_BYTES: u64 = 140_000_000;
pub const PYTHIA_70M_STEP_S: f64 = 0.2384;
pub const PYTHIA_160M_STEP_S: f64 = 0.6230;
pub const PYTHIA_410M_STEP_S: f64 = 1.5897;

impl ClusterSpec {
    /// Four regions with four workers each, GPS in the first region, one LPS per region.
    pub fn paper_default() -> Self {
        let regions: Vec<String> = (1..=4).map(|i| format!("R-{i}")).collect();
        let bandwidth_gbps = vec![
            vec![100.0, 0.537, 0.935, 0.202],
            vec![0.537, 100.0, 0.386, 0.117],
            vec![0.935, 0.386, 100.0, 0.127],
            vec![0.202, 0.117, 0.127, 100.0],
        ];
        let speeds = [
            [10.0, 9.1, 3.8, 2.6],
            [9.4, 8.0, 6.3, 5.8],
            [9.9, 5.7, 2.1, 1.5],
            [9.1, 8.7, 5.8, 1.2],
        ];
        let mut workers = Vec::new();
        let mut lps = Vec::new();
        for (r, row) in speeds.iter().enumerate() {
            let members: Vec<usize> = (workers.len()..workers.len() + row.len()).collect();
            for &speed in row {
                workers.push(WorkerSpec {
                    region: regions[r].clone(),
                    speed,
                });
            }
            lps.push(LpsSpec {
                region: regions[r].clone(),
                workers: members,
            });
        }
        ClusterSpec {
            gps_region: regions[0].clone(),
            regions,
            bandwidth_gbps,
            latency_s: Vec::new(),
            workers,
            lps,
            profiled_step_s: PYTHIA_70M_STEP_S,
            message_bytes: PYTHIA_70M_MESSAGE_BYTES,
        }
    }

    /// A single region holding `speeds.len()` workers served by one LPS.
    pub fn single_region(speeds: &[f64], intra_gbps: f64, profiled_step_s: f64, message_bytes: u64) -> Self {
        let region = "R-1".to_string();
        ClusterSpec {
            regions: vec![region.clone()],
            bandwidth_gbps: vec![vec![intra_gbps]],
            latency_s: Vec::new(),
            workers: speeds
                .iter()
                .map(|&speed| WorkerSpec {
                    region: region.clone(),
                    speed,
                })
                .collect(),
            lps: vec![LpsSpec {
                region: region.clone(),
                workers: (0..speeds.len()).collect(),
            }],
            gps_region: region,
            profiled_step_s,
            message_bytes,
        }
    }

    pub fn region_index(&self, name: &str) -> Result<usize> {
        self.regions
            .iter()
            .position(|r| r == name)
            .ok_or_else(|| Error::UnknownRegion(name.to_string()))
    }

    pub fn num_workers(&self) -> usize {
        self.workers.len()
    }

    /// `S_fastest`: the largest worker speed.
    pub fn fastest_speed(&self) -> f64 {
        self.workers.iter().map(|w| w.speed).fold(0.0, f64::max)
    }

    pub fn bandwidth(&self, a: usize, b: usize) -> f64 {
        self.bandwidth_gbps[a][b]
    }

    pub fn latency(&self, a: usize, b: usize) -> f64 {
        self.latency_s.get(a).and_then(|row| row.get(b)).copied().unwrap_or(0.0)
    }

    pub(crate) fn worker_region(&self, worker: usize) -> usize {
        self.region_index(&self.workers[worker].region)
            .expect("validated worker region")
    }

    pub(crate) fn lps_region(&self, lps: usize) -> usize {
        self.region_index(&self.lps[lps].region).expect("validated lps region")
    }

    pub(crate) fn gps_region_index(&self) -> usize {
        self.region_index(&self.gps_region).expect("validated gps region")
    }

    /// LPS index serving each worker.
    pub fn lps_of_workers(&self) -> Vec<usize> {
        let mut owner = vec![usize::MAX; self.workers.len()];
        for (l, spec) in self.lps.iter().enumerate() {
            for &w in &spec.workers {
                if w < owner.len() {
                    owner[w] = l;
                }
            }
        }
        owner
    }

    /// Transfer time between two region indices for `bytes` bytes.
    pub(crate) fn p2p_by_index(&self, src: usize, dst: usize, bytes: u64) -> f64 {
        self.latency(src, dst) + 8.0 * bytes as f64 / (self.bandwidth(src, dst) * 1e9)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.regions.len();
        if n == 0 {
            return Err(Error::config("cluster.regions", "at least one region is required"));
        }
        if self.bandwidth_gbps.len() != n || self.bandwidth_gbps.iter().any(|r| r.len() != n) {
            return Err(Error::config(
                "cluster.bandwidth_gbps",
                format!("must be a {n}x{n} matrix"),
            ));
        }
        for i in 0..n {
            for j in 0..n {
                let b = self.bandwidth_gbps[i][j];
                if !(b > 0.0 && b.is_finite()) {
                    return Err(Error::config(
                        format!("cluster.bandwidth_gbps[{i}][{j}]"),
                        format!("bandwidth {b} must be positive"),
                    ));
                }
                if b != self.bandwidth_gbps[j][i] {
                    return Err(Error::config(
                        format!("cluster.bandwidth_gbps[{i}][{j}]"),
                        "bandwidth matrix must be symmetric",
                    ));
                }
            }
        }
        if !self.latency_s.is_empty() {
            if self.latency_s.len() != n || self.latency_s.iter().any(|r| r.len() != n) {
                return Err(Error::config("cluster.latency_s", format!("must be a {n}x{n} matrix")));
            }
            if self.latency_s.iter().flatten().any(|l| !(*l >= 0.0 && l.is_finite())) {
                return Err(Error::config("cluster.latency_s", "latencies must be non-negative"));
            }
        }
        if self.workers.is_empty() {
            return Err(Error::config("cluster.workers", "at least one worker is required"));
        }
        for (i, w) in self.workers.iter().enumerate() {
            self.region_index(&w.region).map_err(|_| {
                Error::config(
                    format!("cluster.workers[{i}].region"),
                    format!("unknown region `{}`", w.region),
                )
            })?;
            if !(w.speed > 0.0 && w.speed.is_finite()) {
                return Err(Error::config(
                    format!("cluster.workers[{i}].speed"),
                    format!("speed {} must be positive", w.speed),
                ));
            }
        }
        self.region_index(&self.gps_region)
            .map_err(|_| Error::config("cluster.gps_region", format!("unknown region `{}`", self.gps_region)))?;
        let mut seen = vec![0usize; self.workers.len()];
        for (l, spec) in self.lps.iter().enumerate() {
            self.region_index(&spec.region).map_err(|_| {
                Error::config(
                    format!("cluster.lps[{l}].region"),
                    format!("unknown region `{}`", spec.region),
                )
            })?;
            if spec.workers.is_empty() {
                return Err(Error::config(
                    format!("cluster.lps[{l}].workers"),
                    "an LPS needs at least one worker",
                ));
            }
            for &w in &spec.workers {
                if w >= self.workers.len() {
                    return Err(Error::config(
                        format!("cluster.lps[{l}].workers"),
                        format!("worker {w} does not exist"),
                    ));
                }
                seen[w] += 1;
            }
        }
        if let Some(w) = seen.iter().position(|&c| c != 1) {
            return Err(Error::config(
                "cluster.lps",
                format!("worker {w} belongs to {} LPSs; exactly one is required", seen[w]),
            ));
        }
        if !(self.profiled_step_s > 0.0 && self.profiled_step_s.is_finite()) {
            return Err(Error::config("cluster.profiled_step_s", "must be positive"));
        }
        if self.message_bytes == 0 {
            return Err(Error::config("cluster.message_bytes", "must be positive"));
        }
        Ok(())
    }
}

/// α–β transfer time in seconds: `latency + 8·bytes / (bandwidth·1e9)`.
pub fn p2p_time(src: &str, dst: &str, bytes: u64, spec: &ClusterSpec) -> Result<f64> {
    let (a, b) = (spec.region_index(src)?, spec.region_index(dst)?);
    Ok(spec.p2p_by_index(a, b, bytes))
}

/// Bottleneck bandwidth (Gbps) of the best ring over `participants` (one region
/// index per participant), and the region order achieving it.
///
/// Rings are searched at region granularity with same-region participants kept
/// adjacent; a region contributing two or more participants adds its intra link.
pub fn best_ring(participants: &[usize], spec: &ClusterSpec) -> Result<(Vec<usize>, f64)> {
    if participants.is_empty() {
        return Err(Error::InvalidArgument(
            "all-reduce needs at least one participant".into(),
        ));
    }
    let mut distinct: Vec<usize> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for &p in participants {
        if p >= spec.regions.len() {
            return Err(Error::UnknownRegion(format!("#{p}")));
        }
        match distinct.iter().position(|&d| d == p) {
            Some(i) => counts[i] += 1,
            None => {
                distinct.push(p);
                counts.push(1);
            }
        }
    }
    if distinct.len() > MAX_RING_REGIONS {
        return Err(Error::InvalidArgument(format!(
            "ring search supports at most {MAX_RING_REGIONS} regions, got {}",
            distinct.len()
        )));
    }
    let intra_floor = distinct
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c >= 2)
        .map(|(&r, _)| spec.bandwidth(r, r))
        .fold(f64::INFINITY, f64::min);

    if distinct.len() == 1 {
        return Ok((
            distinct,
            intra_floor.min(spec.bandwidth(participants[0], participants[0])),
        ));
    }

    let first = distinct[0];
    let mut rest: Vec<usize> = distinct[1..].to_vec();
    let mut best: Option<(Vec<usize>, f64)> = None;
    permute(&mut rest, 0, &mut |perm| {
        let mut ring = Vec::with_capacity(perm.len() + 1);
        ring.push(first);
        ring.extend_from_slice(perm);
        let mut bottleneck = intra_floor;
        for i in 0..ring.len() {
            let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
            bottleneck = bottleneck.min(spec.bandwidth(a, b));
        }
        if best.as_ref().is_none_or(|(_, b)| bottleneck > *b) {
            best = Some((ring, bottleneck));
        }
    });
    Ok(best.expect("at least one ring"))
}

fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Ring all-reduce time `2(N−1)·C / (N·B)` with `B` the bottleneck of the best ring.
pub fn ring_allreduce_time(participants: &[&str], bytes: u64, spec: &ClusterSpec) -> Result<f64> {
    let idx = participants
        .iter()
        .map(|p| spec.region_index(p))
        .collect::<Result<Vec<_>>>()?;
    ring_allreduce_by_index(&idx, bytes, spec)
}

pub(crate) fn ring_allreduce_by_index(participants: &[usize], bytes: u64, spec: &ClusterSpec) -> Result<f64> {
    let n = participants.len();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "all-reduce needs at least one participant".into(),
        ));
    }
    if n == 1 {
        return Ok(0.0);
    }
    let (_, gbps) = best_ring(participants, spec)?;
    Ok(allreduce_formula(n, bytes, gbps))
}

pub(crate) fn allreduce_formula(n: usize, bytes: u64, gbps: f64) -> f64 {
    let n = n as f64;
    2.0 * (n - 1.0) * 8.0 * bytes as f64 / (n * gbps * 1e9)
}

/// Seconds for `h` local steps on a worker of relative `speed`.
pub fn compute_time(h: u64, speed: f64, spec: &ClusterSpec) -> f64 {
    h as f64 * spec.profiled_step_s * (spec.fastest_speed() / speed)
}

/// Local steps for a worker so that all workers take about the same wall time.
pub fn dyn_local_steps(h_max: u64, speed: f64, s_fastest: f64) -> u64 {
    ((h_max as f64 * speed / s_fastest).round() as u64).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn paper_default_is_valid() {
        let spec = ClusterSpec::paper_default();
        spec.validate().unwrap();
        assert_eq!(spec.num_workers(), 16);
        assert_eq!(spec.fastest_speed(), 10.0);
        assert_eq!(spec.lps.len(), 4);
    }

    #[test]
    fn p2p_examples() {
        let spec = ClusterSpec::paper_default();
        assert_eq!(p2p_time("R-1", "R-3", 0, &spec).unwrap(), 0.0);
        let inter = p2p_time("R-1", "R-3", 140_000_000, &spec).unwrap();
        assert!(rel(inter, 1.12 / 0.935) < 1e-9);
        assert!(rel(inter, 1.197_860_962_566_844) < 1e-9);
        let intra = p2p_time("R-2", "R-2", 140_000_000, &spec).unwrap();
        assert!(rel(intra, 0.0112) < 1e-9);
        assert!(matches!(p2p_time("R-9", "R-1", 1, &spec), Err(Error::UnknownRegion(_))));
    }

    #[test]
    fn latency_adds_to_transfer() {
        let mut spec = ClusterSpec::paper_default();
        spec.latency_s = vec![vec![0.05; 4]; 4];
        spec.validate().unwrap();
        assert_eq!(p2p_time("R-1", "R-2", 0, &spec).unwrap(), 0.05);
    }

    #[test]
    fn ring_examples() {
        let spec = ClusterSpec::paper_default();
        assert_eq!(ring_allreduce_time(&["R-2"], 140_000_000, &spec).unwrap(), 0.0);
        assert!(ring_allreduce_time(&[], 1, &spec).is_err());
        // Formula evaluation with a 0.117 Gbps bottleneck.
        assert!(rel(allreduce_formula(16, 140_000_000, 0.117), 17.948_717_948_717_95) < 1e-9);
    }

    #[test]
    fn paper_default_best_ring_bottleneck() {
        // Of the three distinct 4-region rings, R1-R2-R3-R4 has the widest
        // bottleneck (0.127 Gbps on R3-R4); the other two cross R2-R4 (0.117).
        let spec = ClusterSpec::paper_default();
        let parts: Vec<usize> = (0..16).map(|w| spec.worker_region(w)).collect();
        let (ring, b) = best_ring(&parts, &spec).unwrap();
        assert_eq!(b, 0.127);
        assert_eq!(ring.len(), 4);
        let t = ring_allreduce_by_index(&parts, 140_000_000, &spec).unwrap();
        assert!(rel(t, 2.0 * 15.0 / 16.0 * 1.12 / 0.127) < 1e-9);
    }

    #[test]
    fn compute_and_dyn_examples() {
        let spec = ClusterSpec::paper_default();
        assert!(rel(compute_time(1, 10.0, &spec), 0.2384) < 1e-9);
        assert!(rel(compute_time(8, 1.2, &spec), 8.0 * 0.2384 * 10.0 / 1.2) < 1e-9);
        assert!(rel(compute_time(8, 1.2, &spec), 15.893_333_333_333_333) < 1e-9);
        assert_eq!(dyn_local_steps(32, 10.0, 10.0), 32);
        assert_eq!(dyn_local_steps(32, 2.6, 10.0), 8);
        assert_eq!(dyn_local_steps(4, 1.0, 10.0), 1);
    }

    #[test]
    fn validation_errors_name_fields() {
        let mut spec = ClusterSpec::paper_default();
        spec.bandwidth_gbps[0][1] = 0.5;
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("bandwidth_gbps[0][1]"), "{err}");

        let mut spec = ClusterSpec::paper_default();
        spec.lps[0].workers.push(5);
        assert!(spec.validate().unwrap_err().to_string().contains("worker 5"));

        let mut spec = ClusterSpec::paper_default();
        spec.gps_region = "R-7".into();
        assert!(spec.validate().is_err());
    }

    /// Cyclic order in which every region's participants form one contiguous block.
    fn region_contiguous(order: &[usize], parts: &[usize]) -> bool {
        let n = order.len();
        let changes = (0..n).filter(|&i| parts[order[i]] != parts[order[(i + 1) % n]]).count();
        let mut distinct: Vec<usize> = parts.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        distinct.len() == 1 || changes == distinct.len()
    }

    /// Brute force over every region-contiguous worker-level cyclic order.
    fn brute_force_bottleneck(parts: &[usize], spec: &ClusterSpec) -> f64 {
        let mut idx: Vec<usize> = (1..parts.len()).collect();
        let mut best = 0.0f64;
        permute(&mut idx, 0, &mut |perm| {
            let mut order = vec![0];
            order.extend_from_slice(perm);
            if !region_contiguous(&order, parts) {
                return;
            }
            let mut b = f64::INFINITY;
            for i in 0..order.len() {
                let (x, y) = (parts[order[i]], parts[order[(i + 1) % order.len()]]);
                b = b.min(spec.bandwidth(x, y));
            }
            best = best.max(b);
        });
        best
    }

    fn random_spec(bw: &[f64]) -> ClusterSpec {
        // 4 regions, symmetric matrix from the 6 upper-triangle entries.
        let mut m = vec![vec![100.0; 4]; 4];
        let mut k = 0;
        for i in 0..4 {
            for j in (i + 1)..4 {
                m[i][j] = bw[k];
                m[j][i] = bw[k];
                k += 1;
            }
        }
        let mut spec = ClusterSpec::paper_default();
        spec.bandwidth_gbps = m;
        spec
    }

    proptest! {
        #[test]
        fn region_ring_search_matches_worker_brute_force(
            bw in prop::collection::vec(0.05f64..5.0, 6),
            parts in prop::collection::vec(0usize..4, 2..7),
        ) {
            let spec = random_spec(&bw);
            let (_, b) = best_ring(&parts, &spec).unwrap();
            prop_assert_eq!(b, brute_force_bottleneck(&parts, &spec));
        }

        #[test]
        fn equal_bandwidth_ring_is_order_free(b in 0.05f64..5.0, n in 2usize..12) {
            let spec = random_spec(&[b; 6]);
            let parts: Vec<usize> = (0..n).map(|i| i % 4).collect();
            let t = ring_allreduce_by_index(&parts, 1_000_000, &spec).unwrap();
            let distinct = n.min(4);
            let expected_b = if distinct >= 2 { b } else { 100.0 };
            prop_assert!(rel(t, allreduce_formula(n, 1_000_000, expected_b)) < 1e-12);
        }

        #[test]
        fn allreduce_grows_with_n_and_is_bounded(b in 0.05f64..5.0, n in 2usize..200) {
            let t_n = allreduce_formula(n, 1_000_000, b);
            let t_next = allreduce_formula(n + 1, 1_000_000, b);
            let limit = 2.0 * 8.0 * 1_000_000.0 / (b * 1e9);
            prop_assert!(t_next > t_n && t_next < limit);
        }

        #[test]
        fn p2p_is_affine_in_bytes(c in 0u64..1_000_000_000, lat in 0.0f64..1.0) {
            let mut spec = ClusterSpec::paper_default();
            spec.latency_s = vec![vec![lat; 4]; 4];
            let f = |bytes| p2p_time("R-2", "R-4", bytes, &spec).unwrap();
            let lhs = f(2 * c) - f(c);
            let rhs = f(c) - f(0);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }

        #[test]
        fn compute_time_strictly_decreasing_in_speed(h in 1u64..100, s in 1.0f64..9.9, ds in 0.01f64..1.0) {
            let spec = ClusterSpec::paper_default();
            prop_assert!(compute_time(h, s + ds, &spec) < compute_time(h, s, &spec));
            prop_assert!(rel(compute_time(2 * h, s, &spec), 2.0 * compute_time(h, s, &spec)) < 1e-12);
        }

        #[test]
        fn dyn_steps_monotone_and_equal_finish(h in 1u64..128, s in 1.0f64..10.0, ds in 0.0f64..1.0) {
            let spec = ClusterSpec::paper_default();
            let fast = spec.fastest_speed();
            prop_assert!(dyn_local_steps(h, s, fast) <= dyn_local_steps(h, (s + ds).min(fast), fast));
            let steps = dyn_local_steps(h, s, fast);
            let t_dyn = compute_time(steps, s, &spec);
            let t_ref = compute_time(h, fast, &spec);
            let one_step = compute_time(1, s, &spec);
            prop_assert!((t_dyn - t_ref).abs() <= one_step + 1e-12);
        }
    }
}
