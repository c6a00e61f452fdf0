//! BiCGSTAB over the matrix-free operator, in two variants.
//!
//! Both variants perform the same textbook recurrence (right-preconditioned:
//! solve A M u = b with x = M u, so the convergence test sees the true
//! residual scale). They differ only in how inner products are grouped into
//! global reduction events:
//!
//! * `Classic`: 4 events per iteration -- rho = (rhat, r); (rhat, v); the
//!   adjacent pair {(t,s), (t,t)} ganged as one event; and the convergence
//!   norm (r, r).
//! * `Ganged`: 2 events per iteration -- {(rhat, v)} and one event carrying
//!   {(t,s), (t,t), (s,s), (rhat,s), (rhat,t)}. The residual norm is derived
//!   as (s,s) - 2 w (t,s) + w^2 (t,t) and the next rho as (rhat,s) - w
//!   (rhat,t), quantities available half a step early from saved vectors.
//!   The regrouping is exact in exact arithmetic; rounding differences are
//!   bounded by the variant equivalence probe.
//!
//! Setup costs one ganged event ({(b,b), (r0,r0)}) and convergence is
//! certified by recomputing the true residual at exit (one matvec + one
//! event); if the recheck fails, iteration resumes. Scalar recurrences are
//! computed redundantly on every worker from globally reduced sums, so all
//! workers walk an identical collective sequence.

use crate::grid::{Field, TileTopology, WorkerComm};
use crate::kernels::{self, KernelPath};
use crate::operator::OperatorSpec;
use crate::precond::PreconditionerSpec;

/// Reduction grouping of the BiCGSTAB recurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Classic,
    Ganged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakdownKind {
    /// |rho| fell under 1e-30 * |r0| * |rhat0| (Lanczos moment degeneracy;
    /// a vanishing (rhat, v) pivot is reported the same way).
    RhoZero,
    /// |(t,t)| fell under 1e-300, so omega is undefined.
    OmegaZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    MaxIter,
    Breakdown(BreakdownKind),
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Relative residual tolerance on |b - A x| / |b|.
    pub tol: f64,
    /// Iteration cap; None means 10 * sqrt(N) for an N-unknown system.
    pub max_iter: Option<usize>,
    pub variant: Variant,
    pub precond: crate::precond::PrecondKind,
    /// Start from the previous solution instead of zero.
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            max_iter: None,
            variant: Variant::Ganged,
            precond: crate::precond::PrecondKind::Spai,
            warm_start: false,
        }
    }
}

impl SolverConfig {
    pub fn effective_max_iter(&self, n_unknowns: usize) -> usize {
        self.max_iter
            .unwrap_or_else(|| (10.0 * (n_unknowns as f64).sqrt()).ceil() as usize)
            .max(1)
    }
}

/// Per-solve accounting. `reduction_events` counts calls to the global
/// reduction, not scalars shipped; `residual_history` holds the recursive
/// relative residual per iteration; `final_relative_residual` is the
/// recomputed true residual at exit.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverStats {
    pub iterations: usize,
    pub reduction_events: usize,
    pub matvec_count: usize,
    pub residual_history: Vec<f64>,
    pub outcome: Outcome,
    pub final_relative_residual: f64,
}

/// Solve A x = b on this worker's tile (collective across the topology).
pub fn bicgstab(
    comm: &WorkerComm,
    topo: &TileTopology,
    op: &OperatorSpec,
    m: &PreconditionerSpec,
    b: &Field,
    x0: Option<&Field>,
    cfg: &SolverConfig,
) -> (Field, SolverStats) {
    run_bicgstab(comm, topo, op, m, b, x0, cfg, &mut |_, _| {})
}

/// Run Classic and Ganged with identical inputs for `n_iters` iterations
/// (convergence exit disabled) and return the per-iteration iterate pairs.
/// An early breakdown in either variant truncates the list.
pub fn variant_equivalence_probe(
    comm: &WorkerComm,
    topo: &TileTopology,
    op: &OperatorSpec,
    m: &PreconditionerSpec,
    b: &Field,
    x0: Option<&Field>,
    n_iters: usize,
) -> Vec<(Field, Field)> {
    let capture = |variant| {
        let cfg = SolverConfig {
            tol: 0.0, // unreachable: run all n_iters
            max_iter: Some(n_iters),
            variant,
            ..SolverConfig::default()
        };
        let mut iterates: Vec<Field> = Vec::with_capacity(n_iters);
        let _ = run_bicgstab(comm, topo, op, m, b, x0, &cfg, &mut |_k, x| iterates.push(x.clone()));
        iterates
    };
    let classic = capture(Variant::Classic);
    let ganged = capture(Variant::Ganged);
    classic.into_iter().zip(ganged).collect()
}

const PATH: KernelPath = KernelPath::Vectorized;

/// Tile-local partial dot product, fixed row order.
fn partial_dot(a: &Field, b: &Field) -> f64 {
    let mut acc = 0.0;
    for i2 in 0..a.tile().len2 {
        acc += kernels::dprod(PATH, a.interior_row(i2), b.interior_row(i2));
    }
    acc
}

/// out = c - d * y, row by row over interiors.
fn field_dscal(c: &Field, d: f64, y: &Field, out: &mut Field) {
    for i2 in 0..c.tile().len2 {
        let (cr, yr) = (c.interior_row(i2), y.interior_row(i2));
        kernels::dscal(PATH, cr, d, yr, out.interior_row_mut(i2));
    }
}

/// out = a * x + b * y + z, row by row over interiors.
fn field_ddaxpy(a: f64, x: &Field, b: f64, y: &Field, z: &Field, out: &mut Field) {
    for i2 in 0..x.tile().len2 {
        let (xr, yr, zr) = (x.interior_row(i2), y.interior_row(i2), z.interior_row(i2));
        kernels::ddaxpy(PATH, a, xr, b, yr, zr, out.interior_row_mut(i2));
    }
}

struct Ctx<'a> {
    comm: &'a WorkerComm<'a>,
    topo: &'a TileTopology,
    op: &'a OperatorSpec,
    m: &'a PreconditionerSpec,
    events: usize,
    matvecs: usize,
}

impl<'a> Ctx<'a> {
    /// One global reduction event, any number of scalars.
    fn reduce(&mut self, vals: &[f64]) -> Vec<f64> {
        self.events += 1;
        self.comm.reduce_sum(vals)
    }

    /// y = A x (refreshes x's halos first).
    fn matvec(&mut self, x: &mut Field, y: &mut Field) {
        self.comm.halo_exchange(x, self.topo, self.op.bc());
        self.op.apply(x, y, PATH);
        self.matvecs += 1;
    }

    /// y = M x (refreshes halos only when the preconditioner reads them).
    fn precond(&mut self, x: &mut Field, y: &mut Field) {
        if self.m.needs_halo() {
            self.comm.halo_exchange(x, self.topo, self.op.bc());
        }
        self.m.apply(x, y, PATH);
    }

    /// True relative residual |b - A x| / bnorm (one matvec, one event).
    fn true_residual(&mut self, b: &Field, x: &Field, bnorm: f64, scratch: (&mut Field, &mut Field)) -> f64 {
        let (ax, rt) = scratch;
        let mut xl = x.clone();
        self.matvec(&mut xl, ax);
        field_dscal(b, 1.0, ax, rt);
        let rr = self.reduce(&[partial_dot(rt, rt)])[0];
        if bnorm == 0.0 {
            0.0
        } else {
            rr.max(0.0).sqrt() / bnorm
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_bicgstab(
    comm: &WorkerComm,
    topo: &TileTopology,
    op: &OperatorSpec,
    m: &PreconditionerSpec,
    b: &Field,
    x0: Option<&Field>,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(usize, &Field),
) -> (Field, SolverStats) {
    let tile = b.tile();
    let ns = b.nspecies();
    assert_eq!(tile, op.tile(), "bicgstab: rhs/operator tile mismatch");
    debug_assert!(b.interior_is_finite(), "bicgstab: rhs must be finite");
    let max_iter = cfg.effective_max_iter(op.grid().unknowns());

    let mut ctx = Ctx { comm, topo, op, m, events: 0, matvecs: 0 };

    let mut x = Field::zeros(tile, ns);
    let warm = cfg.warm_start && x0.is_some();
    if warm {
        x.copy_interior_from(x0.unwrap());
    }

    let mut r = Field::zeros(tile, ns);
    let mut scratch = Field::zeros(tile, ns);
    if warm {
        let mut ax = Field::zeros(tile, ns);
        ctx.matvec(&mut x, &mut ax);
        field_dscal(b, 1.0, &ax, &mut r); // r = b - A x0
    } else {
        r.copy_interior_from(b);
    }
    let rhat = r.clone();

    // Setup event: {(b,b), (r0,r0)} travel together.
    let sums = ctx.reduce(&[partial_dot(b, b), partial_dot(&r, &r)]);
    let bnorm = sums[0].max(0.0).sqrt();
    let r0norm2 = sums[1].max(0.0);
    let rho_floor = 1e-30 * r0norm2;

    let mut stats = SolverStats {
        iterations: 0,
        reduction_events: 0,
        matvec_count: 0,
        residual_history: Vec::new(),
        outcome: Outcome::MaxIter,
        final_relative_residual: 0.0,
    };

    if bnorm == 0.0 {
        // b = 0: the zero vector solves the system exactly.
        let x = Field::zeros(tile, ns);
        stats.outcome = Outcome::Converged;
        stats.reduction_events = ctx.events;
        stats.matvec_count = ctx.matvecs;
        return (x, stats);
    }
    stats.residual_history.push(r0norm2.sqrt() / bnorm);
    if r0norm2.sqrt() <= cfg.tol * bnorm && cfg.tol > 0.0 {
        let mut rt = Field::zeros(tile, ns);
        let final_rel = ctx.true_residual(b, &x, bnorm, (&mut scratch, &mut rt));
        stats.outcome = Outcome::Converged;
        stats.final_relative_residual = final_rel;
        stats.reduction_events = ctx.events;
        stats.matvec_count = ctx.matvecs;
        return (x, stats);
    }

    let mut p = Field::zeros(tile, ns);
    let mut v = Field::zeros(tile, ns);
    let mut s = Field::zeros(tile, ns);
    let mut t = Field::zeros(tile, ns);
    let mut phat = Field::zeros(tile, ns);
    let mut shat = Field::zeros(tile, ns);

    let mut rho = 1.0f64;
    let mut alpha = 1.0f64;
    let mut omega = 1.0f64;
    // Ganged: rho for iteration 1 is (rhat, r0) = |r0|^2, known from setup.
    let mut pending_rho = r0norm2;

    let finish = |mut stats: SolverStats, ctx: &mut Ctx, x: &Field, b: &Field, bnorm: f64| -> SolverStats {
        let mut ax = Field::zeros(tile, ns);
        let mut rt = Field::zeros(tile, ns);
        stats.final_relative_residual = ctx.true_residual(b, x, bnorm, (&mut ax, &mut rt));
        stats.reduction_events = ctx.events;
        stats.matvec_count = ctx.matvecs;
        stats
    };

    for k in 1..=max_iter {
        let rho_new = match cfg.variant {
            Variant::Classic => ctx.reduce(&[partial_dot(&rhat, &r)])[0],
            Variant::Ganged => pending_rho,
        };
        if rho_new.abs() < rho_floor || !rho_new.is_finite() {
            stats.outcome = Outcome::Breakdown(BreakdownKind::RhoZero);
            stats.iterations = k - 1;
            return (x.clone(), finish(stats, &mut ctx, &x, b, bnorm));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;

        // p = r + beta * (p - omega * v)
        field_ddaxpy(beta, &p, -beta * omega, &v, &r, &mut scratch);
        std::mem::swap(&mut p, &mut scratch);

        ctx.precond(&mut p, &mut phat);
        ctx.matvec(&mut phat, &mut v);

        let rhat_v = ctx.reduce(&[partial_dot(&rhat, &v)])[0];
        if rhat_v == 0.0 || !rhat_v.is_finite() {
            stats.outcome = Outcome::Breakdown(BreakdownKind::RhoZero);
            stats.iterations = k - 1;
            return (x.clone(), finish(stats, &mut ctx, &x, b, bnorm));
        }
        alpha = rho / rhat_v;

        // s = r - alpha v
        field_dscal(&r, alpha, &v, &mut s);

        ctx.precond(&mut s, &mut shat);
        ctx.matvec(&mut shat, &mut t);

        // |(t,t)| underflow leaves omega undefined; take the half step
        // (omega = 0, so r becomes s) and let the residual check decide
        // between convergence and an omega breakdown.
        let rnorm2;
        let omega_dead;
        match cfg.variant {
            Variant::Classic => {
                // (t,s) and (t,t) are adjacent with no dependency: one event.
                let sums = ctx.reduce(&[partial_dot(&t, &s), partial_dot(&t, &t)]);
                let (ts, tt) = (sums[0], sums[1]);
                omega_dead = tt.abs() < 1e-300;
                omega = if omega_dead { 0.0 } else { ts / tt };
                field_ddaxpy(alpha, &phat, omega, &shat, &x, &mut scratch);
                std::mem::swap(&mut x, &mut scratch);
                field_dscal(&s, omega, &t, &mut r);
                rnorm2 = ctx.reduce(&[partial_dot(&r, &r)])[0].max(0.0);
            }
            Variant::Ganged => {
                let sums = ctx.reduce(&[
                    partial_dot(&t, &s),
                    partial_dot(&t, &t),
                    partial_dot(&s, &s),
                    partial_dot(&rhat, &s),
                    partial_dot(&rhat, &t),
                ]);
                let (ts, tt, ss, rhs, rht) = (sums[0], sums[1], sums[2], sums[3], sums[4]);
                omega_dead = tt.abs() < 1e-300;
                omega = if omega_dead { 0.0 } else { ts / tt };
                // Next rho and |r|^2 from quantities saved half a step early.
                pending_rho = rhs - omega * rht;
                rnorm2 = (ss - 2.0 * omega * ts + omega * omega * tt).max(0.0);
                field_ddaxpy(alpha, &phat, omega, &shat, &x, &mut scratch);
                std::mem::swap(&mut x, &mut scratch);
                field_dscal(&s, omega, &t, &mut r);
            }
        }

        stats.iterations = k;
        stats.residual_history.push(rnorm2.sqrt() / bnorm);
        observer(k, &x);

        if rnorm2.sqrt() <= cfg.tol * bnorm {
            let mut ax = Field::zeros(tile, ns);
            let mut rt = Field::zeros(tile, ns);
            let final_rel = ctx.true_residual(b, &x, bnorm, (&mut ax, &mut rt));
            if final_rel <= cfg.tol {
                stats.outcome = Outcome::Converged;
                stats.final_relative_residual = final_rel;
                stats.reduction_events = ctx.events;
                stats.matvec_count = ctx.matvecs;
                return (x, stats);
            }
            // Recursive residual drifted from the truth: resume iterating.
        }

        if omega_dead {
            stats.outcome = Outcome::Breakdown(BreakdownKind::OmegaZero);
            return (x.clone(), finish(stats, &mut ctx, &x, b, bnorm));
        }
    }

    stats.outcome = Outcome::MaxIter;
    stats.iterations = max_iter;
    let final_stats = finish(stats, &mut ctx, &x, b, bnorm);
    (x, final_stats)
}
