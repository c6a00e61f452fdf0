//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with --nocapture to see them alongside the assert).
//!
//! Criterion 5's dt-halving band is asserted exactly as specified and is
//! expected to fail: an exhaustive search over every admissible
//! configuration of the 80x40x2 study (resolution and boundary-distance
//! invariants enforced) caps the measured ratio at 1.777, below the
//! [1.8, 2.2] band. The test runs the feasibility-optimal configuration and
//! reports the measured value rather than loosening the band.

use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use rdmini::bench::{self, BenchConfig, ALL_KERNELS};
use rdmini::config::RunConfig;
use rdmini::grid::{decompose, run_spmd, GridSpec, Tile, TileTopology};
use rdmini::kernels::KernelPath;
use rdmini::operator::Limiter;
use rdmini::oracle::{self, dense_solve, DenseSystem};
use rdmini::precond::{self, PrecondKind, PreconditionerSpec};
use rdmini::pulse::{self, field_checksum, PulseProblem};
use rdmini::solver::{self, Outcome, SolverConfig, Variant};

fn report(criterion: &str, passed: bool, detail: &str) {
    println!("criterion {criterion}: {} -- {detail}", if passed { "PASS" } else { "FAIL" });
}

/// Criterion 1: the default workload executes exactly 100 steps x 3 solves
/// = 300 BiCGSTAB solves, all converged at tol 1e-8, under 5 minutes on a
/// single worker.
#[test]
fn criterion_1_workload_fidelity() {
    let cfg = RunConfig::default();
    assert_eq!(cfg.solver.tol, 1e-8);
    let problem = cfg.to_problem().unwrap();
    let topo = TileTopology::serial(&problem.grid);
    let started = Instant::now();
    let run = pulse::run(&problem, &topo).unwrap();
    let wall = started.elapsed().as_secs_f64();
    let converged = run.solve_stats.iter().filter(|s| s.outcome == Outcome::Converged).count();
    let ok = run.solve_stats.len() == 300 && converged == 300 && wall < 300.0;
    report(
        "1 workload-fidelity",
        ok,
        &format!("{} solves, {converged} converged, {wall:.1} s (limit 300 s)", run.solve_stats.len()),
    );
    assert_eq!(run.solve_stats.len(), 300, "expected exactly 300 solve records");
    assert_eq!(converged, 300, "every solve must converge at tol 1e-8");
    assert!(wall < 300.0, "single-worker run took {wall:.1} s");
}

/// Criterion 2: assembled matrices have exactly the five block bands at
/// offsets {0, +-ns, +-(ns*nx1)} and the matrix-free apply matches the
/// assembled matvec to 1e-12 relative on 50 random specs.
#[test]
fn criterion_2_matrix_structure() {
    let mut rng = StdRng::seed_from_u64(0xACC2);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let g = GridSpec::new(rng.gen_range(2..=8), rng.gen_range(2..=7), 2, 1.0, 1.0).unwrap();
        let op = oracle::random_diffusion_op(&mut rng, &g, true);
        let a = op.assemble_banded().unwrap();
        let ns = 2isize;
        let nx1 = g.nx1 as isize;
        for r in 0..a.n_rows() {
            for c in 0..a.n_cols() {
                if a.get(r, c) != 0.0 {
                    let (ri, ci) = (r as isize, c as isize);
                    let on_band = (ri / ns == ci / ns)
                        || ((ci - ri == ns || ri - ci == ns || ci - ri == ns * nx1 || ri - ci == ns * nx1)
                            && ri % ns == ci % ns);
                    assert!(on_band, "trial {trial}: off-band nonzero at ({r},{c})");
                }
            }
        }
        let x = oracle::random_field(&mut rng, &g);
        let want = a.matvec(&oracle::flatten_field(&x));
        let topo = TileTopology::serial(&g);
        let y = run_spmd(1, |comm| {
            let mut xl = x.clone();
            comm.halo_exchange(&mut xl, &topo, op.bc());
            let mut y = rdmini::grid::Field::zeros(op.tile(), 2);
            op.apply(&xl, &mut y, KernelPath::Vectorized);
            y
        })
        .pop()
        .unwrap();
        let got = oracle::flatten_field(&y);
        let scale = op.max_abs_coefficient()
            * want.iter().chain(got.iter()).fold(1.0f64, |m, v| m.max(v.abs()));
        for (p, q) in got.iter().zip(&want) {
            worst = worst.max((p - q).abs() / scale.max(1e-300));
        }
    }
    let ok = worst <= 1e-12;
    report("2 matrix-structure", ok, &format!("five block bands; max scaled apply error {worst:.2e} (tol 1e-12)"));
    assert!(ok, "apply vs assembled matvec drifted: {worst:.3e}");
}

/// Criterion 3: BiCGSTAB (both variants, all three preconditioners) matches
/// the dense direct solve on 20 random small diffusion systems to 1e-6
/// relative at tol 1e-10, and every Converged run's recomputed true
/// residual meets the tolerance.
#[test]
fn criterion_3_solver_correctness() {
    let mut rng = StdRng::seed_from_u64(0xACC3);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let g = GridSpec::new(rng.gen_range(4..=8), rng.gen_range(3..=7), 2, 1.0, 1.0).unwrap();
        let op = oracle::random_diffusion_op(&mut rng, &g, true);
        let b = oracle::random_field(&mut rng, &g);
        let want = dense_solve(&DenseSystem {
            matrix: op.assemble_banded().unwrap(),
            rhs: oracle::flatten_field(&b),
        })
        .unwrap();
        let scale: f64 = want.iter().map(|v| v * v).sum::<f64>().sqrt();
        let topo = TileTopology::serial(&g);
        for variant in [Variant::Classic, Variant::Ganged] {
            for kind in [PrecondKind::Identity, PrecondKind::BlockJacobi, PrecondKind::Spai] {
                let cfg = SolverConfig { tol: 1e-10, variant, precond: kind, ..Default::default() };
                let (x, stats) = run_spmd(1, |comm| {
                    let mut o = op.clone();
                    let m = precond::build(kind, &mut o, comm, &topo).unwrap();
                    solver::bicgstab(comm, &topo, &op, &m, &b, None, &cfg)
                })
                .pop()
                .unwrap();
                assert_eq!(stats.outcome, Outcome::Converged, "trial {trial} {variant:?}/{kind:?}");
                assert!(
                    stats.final_relative_residual <= 1e-10,
                    "certificate violated: {:.3e}",
                    stats.final_relative_residual
                );
                let got = oracle::flatten_field(&x);
                let err: f64 =
                    got.iter().zip(&want).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                worst = worst.max(err / scale);
            }
        }
    }
    let ok = worst <= 1e-6;
    report("3 solver-correctness", ok, &format!("120 solves vs dense LU, max relative error {worst:.2e} (tol 1e-6)"));
    assert!(ok);
}

/// Criterion 4: the variant equivalence probe agrees to 1e-10 per iterate
/// over 10 iterations, and reduction events per iteration are exactly 2
/// (Ganged) vs 4 (Classic).
#[test]
fn criterion_4_ganged_contract() {
    let mut rng = StdRng::seed_from_u64(0xACC4);
    let g = GridSpec::new(8, 6, 2, 1.0, 1.0).unwrap();
    let op = oracle::random_diffusion_op(&mut rng, &g, true);
    let b = oracle::random_field(&mut rng, &g);
    let topo = TileTopology::serial(&g);
    let pairs = run_spmd(1, |comm| {
        let mut o = op.clone();
        let m = precond::build(PrecondKind::BlockJacobi, &mut o, comm, &topo).unwrap();
        solver::variant_equivalence_probe(comm, &topo, &op, &m, &b, None, 10)
    })
    .pop()
    .unwrap();
    assert_eq!(pairs.len(), 10);
    let mut worst: f64 = 0.0;
    for (xc, xg) in &pairs {
        let fc = oracle::flatten_field(xc);
        let fg = oracle::flatten_field(xg);
        let diff: f64 = fc.iter().zip(&fg).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let scale: f64 = fc.iter().map(|p| p * p).sum::<f64>().sqrt().max(1e-300);
        worst = worst.max(diff / scale);
    }

    // Event accounting: setup + recheck are the constant 2; per-iteration
    // marginals must be exactly 4 (classic) and 2 (ganged).
    let mut counts = Vec::new();
    for variant in [Variant::Classic, Variant::Ganged] {
        let cfg = SolverConfig { tol: 1e-10, variant, precond: PrecondKind::Identity, ..Default::default() };
        let (_, stats) = run_spmd(1, |comm| {
            solver::bicgstab(comm, &topo, &op, &PreconditionerSpec::Identity, &b, None, &cfg)
        })
        .pop()
        .unwrap();
        assert_eq!(stats.outcome, Outcome::Converged);
        assert!(stats.iterations >= 2);
        counts.push((variant, stats.iterations, stats.reduction_events));
    }
    let classic_ok = counts[0].2 == 4 * counts[0].1 + 2;
    let ganged_ok = counts[1].2 == 2 * counts[1].1 + 2;
    let ok = worst <= 1e-10 && classic_ok && ganged_ok;
    report(
        "4 ganged-contract",
        ok,
        &format!(
            "probe max relative diff {worst:.2e} (tol 1e-10); events classic {} = 4*{}+2, ganged {} = 2*{}+2",
            counts[0].2, counts[0].1, counts[1].2, counts[1].1
        ),
    );
    assert!(worst <= 1e-10);
    assert!(classic_ok, "classic events {} != 4*{}+2", counts[0].2, counts[0].1);
    assert!(ganged_ok, "ganged events {} != 2*{}+2", counts[1].2, counts[1].1);
}

/// Criterion 5: downscaled 80x40x2 pulse vs the analytic solution. Energy is
/// conserved to 1e-9 over the full run (passes); the dt-halving L2-error
/// ratio is asserted in [1.8, 2.2] as specified, which is unattainable on
/// this geometry (see the module doc): the measured optimum is ~1.777, so
/// this assertion fails by design rather than loosening the band.
#[test]
fn criterion_5_physics_oracle() {
    let grid = GridSpec::new(80, 40, 2, 0.5, 1.0).unwrap();
    let base = PulseProblem {
        grid,
        sigma0: 3.0,
        center: (20.0, 20.0),
        amplitude: 1.0,
        d0: 1.0,
        dt: 3.5,
        nsteps: 1,
        solves_per_step: 3,
        limiter: Limiter::None,
        solver: SolverConfig { tol: 1e-12, ..Default::default() },
    };
    let topo = TileTopology::serial(&grid);

    // Energy clause over a full multi-step run.
    let mut conserving = base.clone();
    conserving.nsteps = 8;
    conserving.dt = 3.5 / 8.0;
    let run = pulse::run(&conserving, &topo).unwrap();
    assert!(run.all_converged);
    let drift = (run.final_energy - run.initial_energy).abs() / run.initial_energy;
    let energy_ok = drift <= 1e-9;

    // Temporal-order clause: halve dt at fixed final time.
    let coarse = pulse::l2_error_vs_analytic(&base, &topo).unwrap();
    let mut refined = base.clone();
    refined.nsteps = 2;
    refined.dt = 3.5 / 2.0;
    let fine = pulse::l2_error_vs_analytic(&refined, &topo).unwrap();
    let ratio = coarse / fine;
    let ratio_ok = (1.8..=2.2).contains(&ratio);

    report(
        "5 physics-oracle",
        energy_ok && ratio_ok,
        &format!(
            "energy drift {drift:.2e} (tol 1e-9); halving ratio {ratio:.4} (band [1.8, 2.2]; feasibility cap ~1.777)"
        ),
    );
    assert!(energy_ok, "energy drift {drift:.3e} exceeds 1e-9");
    assert!(
        ratio_ok,
        "dt-halving ratio {ratio:.4} outside [1.8, 2.2]: unattainable on this geometry, see decisions ledger"
    );
}

/// Criterion 6: solutions of the default problem under topologies 1x1,
/// 10x1, 5x4 agree to 1e-9 relative max-norm and iteration counts agree
/// to +-1 per solve.
#[test]
fn criterion_6_topology_invariance() {
    let problem = RunConfig::default().to_problem().unwrap();
    let mut runs = Vec::new();
    for (p1, p2) in [(1, 1), (10, 1), (5, 4)] {
        let topo = decompose(&problem.grid, p1, p2).unwrap();
        let run = pulse::run(&problem, &topo).unwrap();
        assert!(run.all_converged, "{p1}x{p2} did not converge");
        runs.push(((p1, p2), run));
    }
    let reference = &runs[0].1;
    let max_ref = reference.final_field.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst_dx: f64 = 0.0;
    let mut worst_di: usize = 0;
    for ((_, _), run) in &runs[1..] {
        for (a, b) in run.final_field.data.iter().zip(&reference.final_field.data) {
            worst_dx = worst_dx.max((a - b).abs());
        }
        for (sa, sb) in run.solve_stats.iter().zip(&reference.solve_stats) {
            worst_di = worst_di.max(sa.iterations.abs_diff(sb.iterations));
        }
    }
    let rel = worst_dx / max_ref;
    let ok = rel <= 1e-9 && worst_di <= 1;
    report(
        "6 topology-invariance",
        ok,
        &format!("max-norm agreement {rel:.2e} (tol 1e-9); per-solve iteration spread {worst_di} (tol 1)"),
    );
    assert!(rel <= 1e-9, "topologies disagree: {rel:.3e}");
    assert!(worst_di <= 1, "iteration counts differ by {worst_di}");
}

/// Criterion 7: with the default bench config (n = 1000, reps = 100000),
/// both paths produce agreeing checksums for all five kernels and the
/// report renders the ratio column. Reference hardware ratios are
/// documentation, never asserted.
#[test]
fn criterion_7_kernel_bench_integrity() {
    let cfg = BenchConfig::default();
    assert_eq!((cfg.n, cfg.reps), (1000, 100_000));
    let report_data = bench::run_kernel_bench(&cfg).unwrap();
    assert_eq!(report_data.entries.len(), 10);
    let mut worst: f64 = 0.0;
    for k in ALL_KERNELS {
        let s = report_data.entry(k, KernelPath::ScalarReference).unwrap().checksum;
        let v = report_data.entry(k, KernelPath::Vectorized).unwrap().checksum;
        let scale = s.abs().max(v.abs()).max(1.0);
        worst = worst.max((s - v).abs() / scale);
        assert!(report_data.ratio(k).is_some(), "{k:?} ratio column missing");
    }
    let table = bench::bench_table(&report_data);
    let ok = worst <= 1e-10 && table.contains("ratio") && !table.contains("MISMATCH");
    report(
        "7 kernel-bench-integrity",
        ok,
        &format!("max relative checksum difference {worst:.2e} over 5 kernels x 2 paths; ratio column rendered"),
    );
    assert!(ok, "checksum disagreement {worst:.3e}");
}

/// Criterion 8: SPAI per-column residual never exceeds the block-Jacobi
/// feasible residual on 20 random systems; on the default pulse workload
/// iterations(SPAI) <= iterations(Identity), with the measured pair frozen
/// as a regression baseline.
#[test]
fn criterion_8_spai_quality() {
    let mut rng = StdRng::seed_from_u64(0xACC8);
    for trial in 0..20 {
        let g = GridSpec::new(rng.gen_range(3..=6), rng.gen_range(3..=5), 2, 1.0, 1.0).unwrap();
        let op = oracle::random_diffusion_op(&mut rng, &g, true);
        let a = op.assemble_banded().unwrap();
        let topo = TileTopology::serial(&g);
        let (spai, bj) = run_spmd(1, |comm| {
            let mut o = op.clone();
            let spai = match precond::build(PrecondKind::Spai, &mut o, comm, &topo).unwrap() {
                PreconditionerSpec::Spai(s) => s,
                _ => unreachable!(),
            };
            let bj = precond::build_block_jacobi(&op).unwrap();
            (spai, bj)
        })
        .pop()
        .unwrap();
        let ms = spai.as_operator().assemble_banded().unwrap();
        let n = g.unknowns();
        for j in 0..n {
            let resid = |col: &[f64]| -> f64 {
                a.matvec(col)
                    .iter()
                    .enumerate()
                    .map(|(r, v)| {
                        let d = v - if r == j { 1.0 } else { 0.0 };
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            };
            let spai_col: Vec<f64> = (0..n).map(|r| ms.get(r, j)).collect();
            // Column j of block-Jacobi via a unit-vector apply.
            let i2 = j / (g.nx1 * 2);
            let (i1, s) = ((j % (g.nx1 * 2)) / 2, j % 2);
            let mut unit = rdmini::grid::Field::zeros(op.tile(), 2);
            unit.set(i1 as isize, i2 as isize, s, 1.0);
            let mut bj_col = rdmini::grid::Field::zeros(op.tile(), 2);
            bj.apply(&unit, &mut bj_col, KernelPath::ScalarReference);
            assert!(
                resid(&spai_col) <= resid(&oracle::flatten_field(&bj_col)) + 1e-12,
                "trial {trial} column {j}: SPAI residual above block-Jacobi"
            );
        }
    }

    // Default-workload iteration comparison, frozen baseline.
    let problem = RunConfig::default().to_problem().unwrap();
    let topo = TileTopology::serial(&problem.grid);
    let mut ident = problem.clone();
    ident.solver.precond = PrecondKind::Identity;
    let run_spai = pulse::run(&problem, &topo).unwrap();
    let run_ident = pulse::run(&ident, &topo).unwrap();
    let (it_spai, it_ident) = (run_spai.total_iterations(), run_ident.total_iterations());
    // Baseline measured on first build: (614, 680); small slack covers
    // cross-platform libm differences in the Gaussian init.
    const BASELINE: (usize, usize) = (614, 680);
    let ok = it_spai <= it_ident
        && it_spai.abs_diff(BASELINE.0) <= 5
        && it_ident.abs_diff(BASELINE.1) <= 5;
    report(
        "8 spai-quality",
        ok,
        &format!("column optimality on 20 systems; default run iterations SPAI {it_spai} <= identity {it_ident} (baseline {BASELINE:?})"),
    );
    assert!(it_spai <= it_ident, "SPAI took more iterations ({it_spai} > {it_ident})");
    assert!(it_spai.abs_diff(BASELINE.0) <= 5, "SPAI baseline drifted: {it_spai} vs {}", BASELINE.0);
    assert!(it_ident.abs_diff(BASELINE.1) <= 5, "identity baseline drifted: {it_ident} vs {}", BASELINE.1);
}

/// Criterion 9: identical config and seed give identical iteration counts,
/// reduction counts, and output checksums on repeated runs.
#[test]
fn criterion_9_determinism() {
    // Pulse runs, decomposed so reductions actually gang partial sums.
    let cfg = RunConfig::from_overrides(&[
        "grid.nx1=40".into(),
        "grid.nx2=20".into(),
        "problem.center=[20.0,10.0]".into(),
        "problem.nsteps=3".into(),
        "topology.nprx1=2".into(),
        "topology.nprx2=2".into(),
    ])
    .unwrap();
    let problem = cfg.to_problem().unwrap();
    let topo = decompose(&problem.grid, 2, 2).unwrap();
    let a = pulse::run(&problem, &topo).unwrap();
    let b = pulse::run(&problem, &topo).unwrap();
    let pulse_ok = a.total_iterations() == b.total_iterations()
        && a.total_reduction_events() == b.total_reduction_events()
        && field_checksum(&a.final_field) == field_checksum(&b.final_field);

    // Kernel bench with a fixed seed.
    let bc = BenchConfig { n: 128, reps: 50, warmup_reps: 5, ..Default::default() };
    let r1 = bench::run_kernel_bench(&bc).unwrap();
    let r2 = bench::run_kernel_bench(&bc).unwrap();
    let bench_ok = r1
        .entries
        .iter()
        .zip(&r2.entries)
        .all(|(x, y)| x.checksum == y.checksum && x.kernel == y.kernel && x.path == y.path);

    let ok = pulse_ok && bench_ok;
    report(
        "9 determinism",
        ok,
        &format!(
            "pulse reruns identical (iters {}, events {}, checksum {:#x}); bench checksums identical",
            a.total_iterations(),
            a.total_reduction_events(),
            field_checksum(&a.final_field)
        ),
    );
    assert!(pulse_ok, "pulse run is not deterministic");
    assert!(bench_ok, "bench checksums differ across identical runs");
}
