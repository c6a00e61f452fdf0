//! Self-check suite: every production path is re-derived on small instances
//! by an independent oracle. Used by the `verify` subcommand and by tests.

use crate::grid::{run_spmd, GridSpec, TileTopology};
use crate::kernels::KernelPath;
use crate::operator::Band;
use crate::oracle::{self, dense_lstsq, dense_solve, DenseMatrix, DenseSystem};
use crate::precond::{self, PrecondKind, PreconditionerSpec};
use crate::operator::Limiter;
use crate::pulse::{self, PulseProblem};
use crate::solver::{self, Outcome, SolverConfig, Variant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckId {
    /// Matrix-free apply vs the explicitly assembled banded matrix.
    OperatorAssembly,
    /// BiCGSTAB vs dense LU, both variants, all preconditioners.
    SolverDirect,
    /// SPAI column residuals vs the dense least-squares oracle, plus the
    /// block-Jacobi feasibility bound.
    SpaiColumns,
    /// Classic vs Ganged per-iterate agreement.
    VariantEquivalence,
    /// Downscaled pulse run vs the free-space analytic solution.
    AnalyticPulse,
}

pub const ALL_CHECKS: [CheckId; 5] = [
    CheckId::OperatorAssembly,
    CheckId::SolverDirect,
    CheckId::SpaiColumns,
    CheckId::VariantEquivalence,
    CheckId::AnalyticPulse,
];

impl CheckId {
    pub fn name(self) -> &'static str {
        match self {
            CheckId::OperatorAssembly => "operator-assembly",
            CheckId::SolverDirect => "solver-direct",
            CheckId::SpaiColumns => "spai-columns",
            CheckId::VariantEquivalence => "variant-equivalence",
            CheckId::AnalyticPulse => "analytic-pulse",
        }
    }

    pub fn from_name(name: &str) -> Option<CheckId> {
        ALL_CHECKS.iter().copied().find(|c| c.name() == name)
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub id: CheckId,
    pub passed: bool,
    pub detail: String,
}

/// Test hook: deliberately corrupt a production path so a check must fail.
#[derive(Debug, Clone, Copy, Default)]
pub struct FaultInjection {
    /// Perturb one stencil coefficient after assembly.
    pub perturb_stencil: bool,
}

pub fn run_checks(selection: &[CheckId], fault: Option<&FaultInjection>) -> Vec<CheckResult> {
    selection
        .iter()
        .map(|&id| {
            let (passed, detail) = match id {
                CheckId::OperatorAssembly => check_operator_assembly(fault),
                CheckId::SolverDirect => check_solver_direct(),
                CheckId::SpaiColumns => check_spai_columns(),
                CheckId::VariantEquivalence => check_variant_equivalence(),
                CheckId::AnalyticPulse => check_analytic_pulse(),
            };
            CheckResult { id, passed, detail }
        })
        .collect()
}

fn check_operator_assembly(fault: Option<&FaultInjection>) -> (bool, String) {
    let mut rng = StdRng::seed_from_u64(0xA55E);
    let mut worst: f64 = 0.0;
    for trial in 0..10 {
        let g = GridSpec::new(rng.gen_range(2..=8), rng.gen_range(2..=7), 2, 1.0, 1.0).unwrap();
        let mut op = oracle::random_diffusion_op(&mut rng, &g, true);
        let a = op.assemble_banded().unwrap();
        if trial == 0 {
            if let Some(f) = fault {
                if f.perturb_stencil {
                    op.set_band(1, 1, 0, Band::Diag, 1234.5);
                }
            }
        }
        let x = oracle::random_field(&mut rng, &g);
        let topo = TileTopology::serial(&g);
        let y = run_spmd(1, |comm| {
            let mut xl = x.clone();
            comm.halo_exchange(&mut xl, &topo, op.bc());
            let mut y = crate::grid::Field::zeros(op.tile(), 2);
            op.apply(&xl, &mut y, KernelPath::Vectorized);
            y
        })
        .pop()
        .unwrap();
        let want = a.matvec(&oracle::flatten_field(&x));
        let got = oracle::flatten_field(&y);
        let scale = op.max_abs_coefficient().max(1.0);
        for (p, q) in got.iter().zip(&want) {
            worst = worst.max((p - q).abs() / scale);
        }
    }
    (worst <= 1e-12, format!("max scaled |apply - assembled| = {worst:.3e} (tol 1e-12)"))
}

fn check_solver_direct() -> (bool, String) {
    let mut rng = StdRng::seed_from_u64(0x501D);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let g = GridSpec::new(8, 6, 2, 1.0, 1.0).unwrap();
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
                if stats.outcome != Outcome::Converged {
                    return (false, format!("{variant:?}/{kind:?} did not converge"));
                }
                let got = oracle::flatten_field(&x);
                let err: f64 =
                    got.iter().zip(&want).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                worst = worst.max(err / scale);
            }
        }
    }
    (worst <= 1e-6, format!("max relative error vs dense LU = {worst:.3e} (tol 1e-6)"))
}

fn check_spai_columns() -> (bool, String) {
    let mut rng = StdRng::seed_from_u64(0x57A1);
    let g = GridSpec::new(6, 5, 2, 1.0, 1.0).unwrap();
    let op = oracle::random_diffusion_op(&mut rng, &g, true);
    let a = op.assemble_banded().unwrap();
    let topo = TileTopology::serial(&g);
    let spai = run_spmd(1, |comm| {
        let mut o = op.clone();
        match precond::build(PrecondKind::Spai, &mut o, comm, &topo).unwrap() {
            PreconditionerSpec::Spai(s) => s,
            _ => unreachable!(),
        }
    })
    .pop()
    .unwrap();
    let ms = spai.as_operator().assemble_banded().unwrap();
    let n = g.unknowns();
    let mut worst: f64 = 0.0;
    for i2 in 0..g.nx2 {
        for i1 in 0..g.nx1 {
            for s in 0..2 {
                let j = g.flat_index(i1, i2, s);
                // Oracle: restricted full-height least squares by QR.
                let pattern = spai_pattern(&g, i1, i2, s);
                let mut sub = DenseMatrix::zeros(n, pattern.len());
                for (ci, &col) in pattern.iter().enumerate() {
                    for r in 0..n {
                        sub.set(r, ci, a.get(r, col));
                    }
                }
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let (_, oracle_resid) = dense_lstsq(&sub, &e).unwrap();
                let mj: Vec<f64> = (0..n).map(|r| ms.get(r, j)).collect();
                let amj = a.matvec(&mj);
                let resid: f64 = amj
                    .iter()
                    .enumerate()
                    .map(|(r, v)| {
                        let d = v - if r == j { 1.0 } else { 0.0 };
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max((resid - oracle_resid).abs());
            }
        }
    }
    (worst <= 1e-10, format!("max |column residual - oracle residual| = {worst:.3e} (tol 1e-10)"))
}

fn spai_pattern(g: &GridSpec, c1: usize, c2: usize, sc: usize) -> Vec<usize> {
    let mut out = Vec::new();
    if c2 > 0 {
        out.push(g.flat_index(c1, c2 - 1, sc));
    }
    if c1 > 0 {
        out.push(g.flat_index(c1 - 1, c2, sc));
    }
    for s in 0..g.nspecies {
        out.push(g.flat_index(c1, c2, s));
    }
    if c1 + 1 < g.nx1 {
        out.push(g.flat_index(c1 + 1, c2, sc));
    }
    if c2 + 1 < g.nx2 {
        out.push(g.flat_index(c1, c2 + 1, sc));
    }
    out
}

fn check_variant_equivalence() -> (bool, String) {
    let mut rng = StdRng::seed_from_u64(0xE0);
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
    if pairs.len() != 10 {
        return (false, format!("probe truncated at {} iterates", pairs.len()));
    }
    let mut worst: f64 = 0.0;
    for (xc, xg) in &pairs {
        let fc = oracle::flatten_field(xc);
        let fg = oracle::flatten_field(xg);
        let diff: f64 = fc.iter().zip(&fg).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let scale: f64 = fc.iter().map(|p| p * p).sum::<f64>().sqrt().max(1e-300);
        worst = worst.max(diff / scale);
    }
    (worst <= 1e-10, format!("max per-iterate relative difference = {worst:.3e} (tol 1e-10)"))
}

/// Frozen bound for the downscaled analytic comparison; measured once on the
/// fixed configuration below and given 2x headroom. First-order-in-dt
/// behavior itself is asserted by the acceptance suite's refinement study.
const ANALYTIC_PULSE_BOUND: f64 = 2e-2;

fn check_analytic_pulse() -> (bool, String) {
    let grid = GridSpec::new(64, 32, 2, 1.0, 1.0).unwrap();
    let problem = PulseProblem {
        grid,
        sigma0: 3.0,
        center: (32.0, 16.0),
        amplitude: 1.0,
        d0: 1.0,
        dt: 0.15,
        nsteps: 4,
        solves_per_step: 3,
        limiter: Limiter::None,
        solver: SolverConfig { tol: 1e-10, ..Default::default() },
    };
    let topo = TileTopology::serial(&problem.grid);
    match pulse::l2_error_vs_analytic(&problem, &topo) {
        Ok(err) => (
            err <= ANALYTIC_PULSE_BOUND,
            format!("relative L2 error vs analytic = {err:.3e} (bound {ANALYTIC_PULSE_BOUND:.1e})"),
        ),
        Err(e) => (false, format!("run failed: {e}")),
    }
}
