//! Timing harness for the solver kernels and the topology sweep.
//!
//! The kernel driver times the five array kernels on both code paths over a
//! contiguous problem of `n` unknowns, repeating each `reps` times. MATVEC
//! runs the production stencil on an n x 1 x 1 grid (the tridiagonal limit),
//! so the benched code is the same apply the solver executes. Every
//! repetition folds an output value into a checksum, which both defeats
//! dead-code elimination and proves the two paths computed the same thing.
//! All timing uses the monotonic clock; per-call figures are total / reps.
//!
//! Measured path ratios are machine facts of this host, reported but never
//! asserted against anyone else's hardware.

use std::hint::black_box;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{run_spmd, GridSpec, Tile, TileTopology};
use crate::kernels::{self, KernelPath};
use crate::operator::{build_diffusion_operator, BoundaryCondition, CouplingSpec, FaceCoeffs};
use crate::pulse::{self, PulseProblem};

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("bench needs n >= 1 and reps >= 1")]
    BadConfig,
}

/// The benched kernels: the five solver primitives plus, optionally, the
/// SPAI preconditioner application (not part of the default set).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelId {
    Matvec,
    Dprod,
    Daxpy,
    Dscal,
    Ddaxpy,
    SpaiApply,
}

pub const ALL_KERNELS: [KernelId; 5] =
    [KernelId::Matvec, KernelId::Dprod, KernelId::Daxpy, KernelId::Dscal, KernelId::Ddaxpy];

impl KernelId {
    pub fn name(self) -> &'static str {
        match self {
            KernelId::Matvec => "MATVEC",
            KernelId::Dprod => "DPROD",
            KernelId::Daxpy => "DAXPY",
            KernelId::Dscal => "DSCAL",
            KernelId::Ddaxpy => "DDAXPY",
            KernelId::SpaiApply => "SPAI",
        }
    }

    fn seed_tag(self) -> u64 {
        match self {
            KernelId::Matvec => 0x4d41_5456,
            KernelId::Dprod => 0x4450_524f,
            KernelId::Daxpy => 0x4441_5850,
            KernelId::Dscal => 0x4453_434c,
            KernelId::Ddaxpy => 0x4444_4158,
            KernelId::SpaiApply => 0x5350_4149,
        }
    }
}

pub fn path_name(path: KernelPath) -> &'static str {
    match path {
        KernelPath::ScalarReference => "scalar",
        KernelPath::Vectorized => "vectorized",
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Problem size (vector length; MATVEC grid is n x 1 x 1).
    pub n: usize,
    pub reps: usize,
    pub warmup_reps: usize,
    pub rng_seed: u64,
    pub kernels: Vec<KernelId>,
    pub paths: Vec<KernelPath>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n: 1000,
            reps: 100_000,
            warmup_reps: 1000,
            rng_seed: 12345,
            kernels: ALL_KERNELS.to_vec(),
            paths: vec![KernelPath::ScalarReference, KernelPath::Vectorized],
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchEntry {
    pub kernel: KernelId,
    pub path: KernelPath,
    pub total_seconds: f64,
    pub per_call_ns: f64,
    pub checksum: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub entries: Vec<BenchEntry>,
    /// Smallest measurable monotonic-clock increment on this host.
    pub timer_resolution_ns: f64,
}

impl BenchReport {
    pub fn entry(&self, kernel: KernelId, path: KernelPath) -> Option<&BenchEntry> {
        self.entries.iter().find(|e| e.kernel == kernel && e.path == path)
    }

    /// Vectorized / ScalarReference time ratio, when both paths ran.
    pub fn ratio(&self, kernel: KernelId) -> Option<f64> {
        let s = self.entry(kernel, KernelPath::ScalarReference)?;
        let v = self.entry(kernel, KernelPath::Vectorized)?;
        Some(v.total_seconds / s.total_seconds)
    }
}

fn timer_resolution_ns() -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..16 {
        let t0 = Instant::now();
        let mut d = t0.elapsed();
        while d.is_zero() {
            d = t0.elapsed();
        }
        best = best.min(d.as_nanos() as f64);
    }
    best
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Time every selected (kernel, path) pair.
pub fn run_kernel_bench(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    if cfg.n < 1 || cfg.reps < 1 {
        return Err(BenchError::BadConfig);
    }
    let mut entries = Vec::new();
    for &kernel in &cfg.kernels {
        for &path in &cfg.paths {
            entries.push(bench_one(cfg, kernel, path));
        }
    }
    Ok(BenchReport { entries, timer_resolution_ns: timer_resolution_ns() })
}

fn bench_one(cfg: &BenchConfig, kernel: KernelId, path: KernelPath) -> BenchEntry {
    // Per-kernel seeding: selecting a subset never changes another kernel's
    // data or checksum.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ kernel.seed_tag());
    let n = cfg.n;
    let (total, checksum) = match kernel {
        KernelId::Matvec | KernelId::SpaiApply => {
            let grid = GridSpec::new(n, 1, 1, 1.0, 1.0).unwrap();
            let tile = Tile::whole(&grid);
            let topo = TileTopology::serial(&grid);
            let d = FaceCoeffs::uniform(tile, 1, 1.0);
            let op =
                build_diffusion_operator(&grid, tile, &d, 0.25, &CouplingSpec::None, BoundaryCondition::ZeroFlux)
                    .unwrap();
            let spai = match kernel {
                KernelId::SpaiApply => Some(
                    run_spmd(1, |comm| crate::precond::build_spai(&mut op.clone(), comm, &topo))
                        .pop()
                        .unwrap()
                        .expect("spai builds on the bench operator"),
                ),
                _ => None,
            };
            let mut x = crate::grid::Field::zeros(tile, 1);
            x.fill_with(|_, _, _| rng.gen_range(-1.0..1.0));
            let x = run_spmd(1, |comm| {
                let mut xl = x.clone();
                comm.halo_exchange(&mut xl, &topo, BoundaryCondition::ZeroFlux);
                xl
            })
            .pop()
            .unwrap();
            let mut y = crate::grid::Field::zeros(tile, 1);
            let apply = |xin: &crate::grid::Field, yout: &mut crate::grid::Field| match &spai {
                Some(m) => m.apply(xin, yout, path),
                None => op.apply(xin, yout, path),
            };
            for _ in 0..cfg.warmup_reps {
                apply(black_box(&x), &mut y);
                black_box(&y);
            }
            let mut cs = 0.0f64;
            let t0 = Instant::now();
            for rep in 0..cfg.reps {
                apply(black_box(&x), &mut y);
                cs += y.interior_row(0)[rep % n];
            }
            (t0.elapsed().as_secs_f64(), cs)
        }
        KernelId::Dprod => {
            let x = random_vec(&mut rng, n);
            let y = random_vec(&mut rng, n);
            for _ in 0..cfg.warmup_reps {
                black_box(kernels::dprod(path, black_box(&x), black_box(&y)));
            }
            let mut cs = 0.0f64;
            let t0 = Instant::now();
            for _ in 0..cfg.reps {
                cs += kernels::dprod(path, black_box(&x), black_box(&y));
            }
            (t0.elapsed().as_secs_f64(), cs)
        }
        KernelId::Daxpy => {
            let a = rng.gen_range(-1.0..1.0);
            let x = random_vec(&mut rng, n);
            let y = random_vec(&mut rng, n);
            let mut out = vec![0.0; n];
            for _ in 0..cfg.warmup_reps {
                kernels::daxpy(path, a, black_box(&x), black_box(&y), &mut out);
                black_box(&out);
            }
            let mut cs = 0.0f64;
            let t0 = Instant::now();
            for rep in 0..cfg.reps {
                kernels::daxpy(path, a, black_box(&x), black_box(&y), &mut out);
                cs += out[rep % n];
            }
            (t0.elapsed().as_secs_f64(), cs)
        }
        KernelId::Dscal => {
            let d = rng.gen_range(-1.0..1.0);
            let c = random_vec(&mut rng, n);
            let y = random_vec(&mut rng, n);
            let mut out = vec![0.0; n];
            for _ in 0..cfg.warmup_reps {
                kernels::dscal(path, black_box(&c), d, black_box(&y), &mut out);
                black_box(&out);
            }
            let mut cs = 0.0f64;
            let t0 = Instant::now();
            for rep in 0..cfg.reps {
                kernels::dscal(path, black_box(&c), d, black_box(&y), &mut out);
                cs += out[rep % n];
            }
            (t0.elapsed().as_secs_f64(), cs)
        }
        KernelId::Ddaxpy => {
            let a = rng.gen_range(-1.0..1.0);
            let b = rng.gen_range(-1.0..1.0);
            let x = random_vec(&mut rng, n);
            let y = random_vec(&mut rng, n);
            let z = random_vec(&mut rng, n);
            let mut out = vec![0.0; n];
            for _ in 0..cfg.warmup_reps {
                kernels::ddaxpy(path, a, black_box(&x), b, black_box(&y), black_box(&z), &mut out);
                black_box(&out);
            }
            let mut cs = 0.0f64;
            let t0 = Instant::now();
            for rep in 0..cfg.reps {
                kernels::ddaxpy(path, a, black_box(&x), b, black_box(&y), black_box(&z), &mut out);
                cs += out[rep % n];
            }
            (t0.elapsed().as_secs_f64(), cs)
        }
    };
    BenchEntry {
        kernel,
        path,
        total_seconds: total,
        per_call_ns: total / cfg.reps as f64 * 1e9,
        checksum,
    }
}

/// CSV with columns {kernel, path, total_s, per_call_ns, checksum}.
pub fn bench_csv(report: &BenchReport) -> String {
    let mut out = String::from("kernel,path,total_s,per_call_ns,checksum\n");
    for e in &report.entries {
        out.push_str(&format!(
            "{},{},{:.9},{:.3},{:.17e}\n",
            e.kernel.name(),
            path_name(e.path),
            e.total_seconds,
            e.per_call_ns,
            e.checksum
        ));
    }
    out
}

/// Aligned table with the vectorized/scalar ratio column.
pub fn bench_table(report: &BenchReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<8} {:>14} {:>14} {:>14} {:>8}\n",
        "kernel", "scalar_ns", "vectorized_ns", "checksum_ok", "ratio"
    ));
    let mut seen = Vec::new();
    for e in &report.entries {
        if !seen.contains(&e.kernel) {
            seen.push(e.kernel);
        }
    }
    for k in seen {
        let s = report.entry(k, KernelPath::ScalarReference);
        let v = report.entry(k, KernelPath::Vectorized);
        let fmt_ns = |e: Option<&BenchEntry>| match e {
            Some(e) => format!("{:.1}", e.per_call_ns),
            None => "-".to_string(),
        };
        let check = match (s, v) {
            (Some(a), Some(b)) => {
                let scale = a.checksum.abs().max(b.checksum.abs()).max(1.0);
                if (a.checksum - b.checksum).abs() <= 1e-10 * scale {
                    "yes"
                } else {
                    "MISMATCH"
                }
            }
            _ => "-",
        };
        let ratio = match report.ratio(k) {
            Some(r) => format!("{r:.3}"),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<8} {:>14} {:>14} {:>14} {:>8}\n",
            k.name(),
            fmt_ns(s),
            fmt_ns(v),
            check,
            ratio
        ));
    }
    out.push_str(&format!("timer resolution: {:.0} ns\n", report.timer_resolution_ns));
    out
}

/// One row of the topology sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub np: usize,
    pub nprx1: usize,
    pub nprx2: usize,
    pub time_s_median: f64,
    pub time_s_min: f64,
    pub iters_total: usize,
    pub reductions_total: usize,
    pub runs: usize,
    pub skipped: Option<String>,
}

/// Run the pulse workload once per topology, `run_count` times each,
/// reporting median and min wall time with iteration and reduction totals.
/// Invalid topologies produce a skipped row with the reason.
pub fn run_scaling_sweep(
    problem: &PulseProblem,
    topologies: &[(usize, usize)],
    run_count: usize,
) -> Vec<SweepRow> {
    let run_count = run_count.max(1);
    let mut rows = Vec::with_capacity(topologies.len());
    for &(nprx1, nprx2) in topologies {
        let mut row = SweepRow {
            np: nprx1 * nprx2,
            nprx1,
            nprx2,
            time_s_median: 0.0,
            time_s_min: 0.0,
            iters_total: 0,
            reductions_total: 0,
            runs: run_count,
            skipped: None,
        };
        let topo = match crate::grid::decompose(&problem.grid, nprx1, nprx2) {
            Ok(t) => t,
            Err(e) => {
                row.skipped = Some(e.to_string());
                rows.push(row);
                continue;
            }
        };
        let mut times = Vec::with_capacity(run_count);
        let mut failed = None;
        for rep in 0..run_count {
            match pulse::run(problem, &topo) {
                Ok(report) if report.all_converged => {
                    times.push(report.wall_seconds);
                    if rep == 0 {
                        row.iters_total = report.total_iterations();
                        row.reductions_total = report.total_reduction_events();
                    } else {
                        // Counts are deterministic per topology.
                        debug_assert_eq!(row.iters_total, report.total_iterations());
                    }
                }
                Ok(report) => {
                    let at = report.aborted_at.unwrap_or((0, 0));
                    failed = Some(format!("solve failed at step {} stage {}", at.0, at.1));
                    break;
                }
                Err(e) => {
                    failed = Some(e.to_string());
                    break;
                }
            }
        }
        if let Some(reason) = failed {
            row.skipped = Some(reason);
            rows.push(row);
            continue;
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        row.time_s_min = times[0];
        row.time_s_median = if times.len() % 2 == 1 {
            times[times.len() / 2]
        } else {
            0.5 * (times[times.len() / 2 - 1] + times[times.len() / 2])
        };
        rows.push(row);
    }
    rows
}

/// CSV with columns {np, nx1_tiles, nx2_tiles, time_s_median, time_s_min,
/// iters_total, reductions_total, runs}. Skipped rows become comments.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("np,nx1_tiles,nx2_tiles,time_s_median,time_s_min,iters_total,reductions_total,runs\n");
    for r in rows {
        if let Some(reason) = &r.skipped {
            out.push_str(&format!("# skipped {}x{}: {}\n", r.nprx1, r.nprx2, reason));
        } else {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{},{},{}\n",
                r.np, r.nprx1, r.nprx2, r.time_s_median, r.time_s_min, r.iters_total, r.reductions_total, r.runs
            ));
        }
    }
    out
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:>4} {:>5} {:>5} {:>12} {:>12} {:>10} {:>12} {:>5}\n",
        "np", "nx1", "nx2", "median_s", "min_s", "iters", "reductions", "runs"
    );
    for r in rows {
        match &r.skipped {
            Some(reason) => out.push_str(&format!(
                "{:>4} {:>5} {:>5} skipped: {}\n",
                r.np, r.nprx1, r.nprx2, reason
            )),
            None => out.push_str(&format!(
                "{:>4} {:>5} {:>5} {:>12.4} {:>12.4} {:>10} {:>12} {:>5}\n",
                r.np, r.nprx1, r.nprx2, r.time_s_median, r.time_s_min, r.iters_total, r.reductions_total, r.runs
            )),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> BenchConfig {
        BenchConfig { n: 64, reps: 8, warmup_reps: 2, ..Default::default() }
    }

    #[test]
    fn one_entry_per_kernel_and_path() {
        let cfg = BenchConfig { reps: 1, warmup_reps: 0, n: 32, ..Default::default() };
        let report = run_kernel_bench(&cfg).unwrap();
        assert_eq!(report.entries.len(), 10);
        for k in ALL_KERNELS {
            for p in [KernelPath::ScalarReference, KernelPath::Vectorized] {
                assert!(report.entry(k, p).is_some(), "{k:?}/{p:?} missing");
            }
        }
    }

    #[test]
    fn checksums_agree_between_paths() {
        let report = run_kernel_bench(&quick_cfg()).unwrap();
        for k in ALL_KERNELS {
            let s = report.entry(k, KernelPath::ScalarReference).unwrap().checksum;
            let v = report.entry(k, KernelPath::Vectorized).unwrap().checksum;
            let scale = s.abs().max(v.abs()).max(1.0);
            assert!((s - v).abs() <= 1e-10 * scale, "{k:?}: {s} vs {v}");
        }
    }

    #[test]
    fn checksums_depend_on_seed() {
        let a = run_kernel_bench(&quick_cfg()).unwrap();
        let b = run_kernel_bench(&BenchConfig { rng_seed: 999, ..quick_cfg() }).unwrap();
        for k in ALL_KERNELS {
            let ca = a.entry(k, KernelPath::Vectorized).unwrap().checksum;
            let cb = b.entry(k, KernelPath::Vectorized).unwrap().checksum;
            assert_ne!(ca, cb, "{k:?} checksum ignores the input data");
        }
    }

    #[test]
    fn checksums_are_reproducible_for_fixed_seed() {
        let a = run_kernel_bench(&quick_cfg()).unwrap();
        let b = run_kernel_bench(&quick_cfg()).unwrap();
        for (ea, eb) in a.entries.iter().zip(&b.entries) {
            assert_eq!(ea.checksum, eb.checksum);
        }
    }

    #[test]
    fn kernel_subset_produces_subset_rows() {
        let cfg = BenchConfig { kernels: vec![KernelId::Dprod], ..quick_cfg() };
        let report = run_kernel_bench(&cfg).unwrap();
        assert_eq!(report.entries.len(), 2);
        let csv = bench_csv(&report);
        assert_eq!(csv.lines().count(), 3); // header + 2 rows
        assert!(csv.contains("DPROD,scalar"));
        assert!(csv.contains("DPROD,vectorized"));
    }

    #[test]
    fn table_renders_ratio_column() {
        let report = run_kernel_bench(&quick_cfg()).unwrap();
        let table = bench_table(&report);
        assert!(table.contains("ratio"));
        assert!(table.contains("MATVEC"));
        assert!(!table.contains("MISMATCH"));
    }

    #[test]
    fn optional_spai_kernel_benches_like_the_rest() {
        let cfg = BenchConfig { kernels: vec![KernelId::SpaiApply], n: 48, reps: 4, warmup_reps: 1, ..Default::default() };
        let report = run_kernel_bench(&cfg).unwrap();
        assert_eq!(report.entries.len(), 2);
        let sr = report.entry(KernelId::SpaiApply, KernelPath::ScalarReference).unwrap();
        let vr = report.entry(KernelId::SpaiApply, KernelPath::Vectorized).unwrap();
        let scale = sr.checksum.abs().max(1.0);
        assert!((sr.checksum - vr.checksum).abs() <= 1e-10 * scale);
        assert!(!ALL_KERNELS.contains(&KernelId::SpaiApply), "not part of the default five");
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = BenchConfig { n: 0, ..Default::default() };
        assert_eq!(run_kernel_bench(&cfg).unwrap_err(), BenchError::BadConfig);
    }

    fn tiny_problem() -> PulseProblem {
        PulseProblem {
            grid: GridSpec::new(16, 12, 2, 1.0, 1.0).unwrap(),
            sigma0: 3.0,
            center: (8.0, 6.0),
            nsteps: 1,
            ..Default::default()
        }
    }

    #[test]
    fn sweep_reports_one_row_per_topology() {
        let rows = run_scaling_sweep(&tiny_problem(), &[(1, 1), (2, 1), (0, 4)], 2);
        assert_eq!(rows.len(), 3);
        assert!(rows[0].skipped.is_none());
        assert!(rows[1].skipped.is_none());
        assert!(rows[2].skipped.is_some(), "0x4 must be marked skipped");
        // One step of three solves accounted.
        assert!(rows[0].iters_total > 0);
        assert_eq!(rows[0].runs, 2);
        let csv = sweep_csv(&rows);
        assert!(csv.contains("# skipped 0x4"));
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3); // header + 2 rows
    }

    /// Soft check: classic-variant iteration counts stay topology
    /// independent up to +-1 per solve (cross-topology rounding).
    #[test]
    fn sweep_counts_topology_independent_for_classic() {
        let mut p = tiny_problem();
        p.solver.variant = crate::solver::Variant::Classic;
        let rows = run_scaling_sweep(&p, &[(1, 1), (2, 2)], 1);
        assert!(rows.iter().all(|r| r.skipped.is_none()));
        let solves = (p.nsteps * p.solves_per_step) as isize;
        let diff = rows[0].iters_total as isize - rows[1].iters_total as isize;
        assert!(diff.abs() <= solves, "iteration totals drifted: {diff} over {solves} solves");
    }

    #[test]
    fn sweep_counts_are_deterministic_across_runs() {
        let p = tiny_problem();
        let a = run_scaling_sweep(&p, &[(2, 2)], 1);
        let b = run_scaling_sweep(&p, &[(2, 2)], 1);
        assert_eq!(a[0].iters_total, b[0].iters_total);
        assert_eq!(a[0].reductions_total, b[0].reductions_total);
    }
}
