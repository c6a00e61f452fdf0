//! The benchmark workload: implicit time evolution of a 2-D Gaussian
//! radiation pulse for two species, plus its free-space analytic oracle.
//!
//! Each time step advances the field through `solves_per_step` backward-Euler
//! sub-stages of size dt / solves_per_step; every sub-stage rebuilds the
//! diffusion operator from the current state and solves one linear system,
//! so the default 100-step problem solves 300 systems. With the limiter off
//! the diffusion coefficient is the constant `d0`; with the limiter on the
//! opacity is fixed at kappa = 1 / (3 d0) and unit radiation speed, so the
//! diffusive limit reproduces `d0`.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::grid::{
    check_worker_cap, gather, run_spmd, CommError, Field, GlobalField, GridSpec, Tile,
    TileTopology, WorkerComm,
};
use crate::operator::{
    build_diffusion_operator, BoundaryCondition, CouplingSpec, FaceCoeffs, Limiter, OperatorError,
};
use crate::precond;
use crate::solver::{bicgstab, Outcome, SolverConfig, SolverStats};

#[derive(Debug, Error)]
pub enum PulseError {
    #[error("pulse grid needs at least 2 zones per direction, got {0}x{1}")]
    GridTooSmall(usize, usize),
    #[error("sigma0 = {sigma0} under-resolves the grid; need at least 3 * max(dx) = {min}")]
    UnderResolved { sigma0: f64, min: f64 },
    #[error("{0} must be positive and finite")]
    BadValue(&'static str),
    #[error("analytic oracle requires the limiter disabled")]
    LimiterActive,
    #[error("pulse too close to the boundary for the analytic oracle: distance {available:.3} < 5 sigma(t) = {needed:.3}")]
    NearBoundary { available: f64, needed: f64 },
    #[error("solve failed at step {step}, stage {stage}: {outcome:?}")]
    SolveFailed { step: usize, stage: usize, outcome: Outcome },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Precond(#[from] crate::precond::PrecondError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("run failed: {0}")]
    Runtime(String),
}

/// The Gaussian pulse problem definition.
#[derive(Debug, Clone)]
pub struct PulseProblem {
    pub grid: GridSpec,
    /// Initial Gaussian width (length units).
    pub sigma0: f64,
    /// Pulse center in physical coordinates.
    pub center: (f64, f64),
    /// Peak energy density per species.
    pub amplitude: f64,
    /// Constant diffusion coefficient used when the limiter is off.
    pub d0: f64,
    /// Time step; each step runs `solves_per_step` equal sub-stages.
    pub dt: f64,
    pub nsteps: usize,
    pub solves_per_step: usize,
    pub limiter: Limiter,
    pub solver: SolverConfig,
}

impl Default for PulseProblem {
    fn default() -> Self {
        let grid = GridSpec::new(200, 100, 2, 1.0, 1.0).unwrap();
        PulseProblem {
            grid,
            sigma0: 3.0,
            center: (100.0, 50.0),
            amplitude: 1.0,
            d0: 1.0,
            // Width roughly triples over the run: sigma(T)^2 = sigma0^2 + 2 d0 T.
            dt: 0.36,
            nsteps: 100,
            solves_per_step: 3,
            limiter: Limiter::None,
            solver: SolverConfig::default(),
        }
    }
}

impl PulseProblem {
    pub fn validate(&self) -> Result<(), PulseError> {
        if self.grid.nx1 < 2 || self.grid.nx2 < 2 {
            return Err(PulseError::GridTooSmall(self.grid.nx1, self.grid.nx2));
        }
        let min_sigma = 3.0 * self.grid.dx1.max(self.grid.dx2);
        if !(self.sigma0 >= min_sigma) {
            return Err(PulseError::UnderResolved { sigma0: self.sigma0, min: min_sigma });
        }
        if !(self.amplitude > 0.0) || !self.amplitude.is_finite() {
            return Err(PulseError::BadValue("amplitude"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(PulseError::BadValue("dt"));
        }
        if !(self.d0 >= 0.0) || !self.d0.is_finite() {
            return Err(PulseError::BadValue("d0"));
        }
        if self.limiter != Limiter::None && self.d0 == 0.0 {
            return Err(PulseError::BadValue("d0 (limiter needs d0 > 0)"));
        }
        if self.solves_per_step < 1 {
            return Err(PulseError::BadValue("solves_per_step"));
        }
        if !(self.solver.tol > 0.0) {
            return Err(PulseError::BadValue("solver.tol"));
        }
        if !self.center.0.is_finite() || !self.center.1.is_finite() {
            return Err(PulseError::BadValue("center"));
        }
        Ok(())
    }

    /// Physical coordinates of zone center (g1, g2).
    fn zone_center(&self, g1: usize, g2: usize) -> (f64, f64) {
        ((g1 as f64 + 0.5) * self.grid.dx1, (g2 as f64 + 0.5) * self.grid.dx2)
    }

    /// Initial condition sampled at zone centers, identical per species.
    pub fn init_gaussian(&self, tile: Tile) -> Field {
        let mut f = Field::zeros(tile, self.grid.nspecies);
        let s2 = self.sigma0 * self.sigma0;
        f.fill_with(|g1, g2, _| {
            let (x, y) = self.zone_center(g1, g2);
            let r2 = (x - self.center.0).powi(2) + (y - self.center.1).powi(2);
            self.amplitude * (-r2 / (2.0 * s2)).exp()
        });
        f
    }

    /// sigma(t)^2 = sigma0^2 + 2 d0 t for free-space diffusion.
    pub fn analytic_sigma2(&self, t: f64) -> f64 {
        self.sigma0 * self.sigma0 + 2.0 * self.d0 * t
    }

    /// Free-space solution at time t, refused when the configuration cannot
    /// be compared against it (limiter on, or pulse support within 5 sigma(t)
    /// of a boundary).
    pub fn analytic_solution(&self, tile: Tile, t: f64) -> Result<Field, PulseError> {
        if self.limiter != Limiter::None {
            return Err(PulseError::LimiterActive);
        }
        let s2 = self.analytic_sigma2(t);
        let sigma = s2.sqrt();
        let (cx, cy) = self.center;
        let available = cx
            .min(self.grid.nx1 as f64 * self.grid.dx1 - cx)
            .min(cy)
            .min(self.grid.nx2 as f64 * self.grid.dx2 - cy);
        if available < 5.0 * sigma {
            return Err(PulseError::NearBoundary { available, needed: 5.0 * sigma });
        }
        let peak = self.amplitude * self.sigma0 * self.sigma0 / s2;
        let mut f = Field::zeros(tile, self.grid.nspecies);
        f.fill_with(|g1, g2, _| {
            let (x, y) = self.zone_center(g1, g2);
            let r2 = (x - cx).powi(2) + (y - cy).powi(2);
            peak * (-r2 / (2.0 * s2)).exp()
        });
        Ok(f)
    }

    /// Face diffusion coefficients for the current state (halos current).
    fn face_coeffs(&self, state: &Field) -> Result<FaceCoeffs, PulseError> {
        match self.limiter {
            Limiter::None => Ok(FaceCoeffs::uniform(state.tile(), self.grid.nspecies, self.d0)),
            limiter => {
                let kappa = vec![1.0 / (3.0 * self.d0); self.grid.nspecies];
                Ok(crate::operator::flux_limited_d(state, &kappa, 1.0, limiter, &self.grid)?)
            }
        }
    }

    /// Advance one time step: `solves_per_step` backward-Euler sub-stages,
    /// each rebuilding the operator and solving one linear system.
    /// Collective across the topology. A non-converged solve stops the step
    /// and is reported in [`StepOutcome::failed_stage`] together with the
    /// offending stats record (the last entry of `stats`).
    pub fn step(
        &self,
        comm: &WorkerComm,
        topo: &TileTopology,
        state: Field,
    ) -> Result<StepOutcome, PulseError> {
        let sub_dt = self.dt / self.solves_per_step as f64;
        let mut state = state;
        let mut all_stats = Vec::with_capacity(self.solves_per_step);
        for stage in 0..self.solves_per_step {
            comm.halo_exchange(&mut state, topo, BoundaryCondition::ZeroFlux);
            let d_face = self.face_coeffs(&state)?;
            let mut op = build_diffusion_operator(
                &self.grid,
                state.tile(),
                &d_face,
                sub_dt,
                &CouplingSpec::None,
                BoundaryCondition::ZeroFlux,
            )?;
            let m = precond::build(self.solver.precond, &mut op, comm, topo)?;
            let (x, stats) = bicgstab(comm, topo, &op, &m, &state, Some(&state), &self.solver);
            let outcome = stats.outcome;
            all_stats.push(stats);
            if outcome != Outcome::Converged {
                return Ok(StepOutcome {
                    state,
                    stats: all_stats,
                    failed_stage: Some((stage + 1, outcome)),
                });
            }
            state = x;
        }
        Ok(StepOutcome { state, stats: all_stats, failed_stage: None })
    }
}

/// Result of one time step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// The advanced field, or the last successful sub-stage state on failure.
    pub state: Field,
    /// One record per attempted solve, including a failed one.
    pub stats: Vec<SolverStats>,
    /// (stage, outcome) of the first non-converged solve, 1-based.
    pub failed_stage: Option<(usize, Outcome)>,
}

/// Extra knobs for a run; defaults write nothing.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep a gathered copy of the field every N steps (plus the final one)
    /// in [`RunReport::snapshots`].
    pub snapshot_every: Option<usize>,
}

/// Everything a pulse run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub nsteps: usize,
    pub solves_per_step: usize,
    /// One record per linear solve, in execution order.
    pub solve_stats: Vec<SolverStats>,
    pub wall_seconds: f64,
    pub all_converged: bool,
    /// (step, stage), 1-based, of the first failed solve.
    pub aborted_at: Option<(usize, usize)>,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub min_final_value: f64,
    pub final_field: GlobalField,
    /// (step, gathered field) pairs when snapshots were requested.
    pub snapshots: Vec<(usize, GlobalField)>,
}

impl RunReport {
    pub fn total_iterations(&self) -> usize {
        self.solve_stats.iter().map(|s| s.iterations).sum()
    }

    pub fn total_reduction_events(&self) -> usize {
        self.solve_stats.iter().map(|s| s.reduction_events).sum()
    }

    pub fn total_matvecs(&self) -> usize {
        self.solve_stats.iter().map(|s| s.matvec_count).sum()
    }
}

/// Execute the full workload on `topo`'s workers.
pub fn run(problem: &PulseProblem, topo: &TileTopology) -> Result<RunReport, PulseError> {
    run_with_options(problem, topo, &RunOptions::default())
}

pub fn run_with_options(
    problem: &PulseProblem,
    topo: &TileTopology,
    opts: &RunOptions,
) -> Result<RunReport, PulseError> {
    problem.validate()?;
    check_worker_cap(topo.n_workers())?;
    let started = Instant::now();

    struct WorkerOut {
        field: Field,
        stats: Vec<SolverStats>,
        energy0: f64,
        energy1: f64,
        aborted_at: Option<(usize, usize)>,
        fatal: Option<String>,
        snaps: Vec<(usize, Field)>,
    }

    let outputs: Vec<WorkerOut> = run_spmd(topo.n_workers(), |comm| {
        let tile = topo.tile(comm.rank());
        let mut field = problem.init_gaussian(tile);
        let energy0 = comm.reduce_sum(&[field.sum_interior()])[0];
        let mut stats = Vec::with_capacity(problem.nsteps * problem.solves_per_step);
        let mut aborted_at = None;
        let mut fatal = None;
        let mut snaps = Vec::new();
        for step in 1..=problem.nsteps {
            match problem.step(comm, topo, field.clone()) {
                Ok(out) => {
                    stats.extend(out.stats);
                    if let Some((stage, _)) = out.failed_stage {
                        aborted_at = Some((step, stage));
                        break;
                    }
                    field = out.state;
                }
                Err(e) => {
                    fatal = Some(e.to_string());
                    break;
                }
            }
            if let Some(every) = opts.snapshot_every {
                if every > 0 && step % every == 0 {
                    snaps.push((step, field.clone()));
                }
            }
        }
        let energy1 = comm.reduce_sum(&[field.sum_interior()])[0];
        WorkerOut { field, stats, energy0, energy1, aborted_at, fatal, snaps }
    });

    let wall_seconds = started.elapsed().as_secs_f64();
    let fields: Vec<Field> = outputs.iter().map(|o| o.field.clone()).collect();
    let final_field = gather(&fields, topo);
    let min_final_value = final_field.data.iter().copied().fold(f64::INFINITY, f64::min);

    // Snapshot gathering: every worker recorded the same steps.
    let mut snapshots = Vec::new();
    if !outputs[0].snaps.is_empty() {
        for (i, &(step, _)) in outputs[0].snaps.iter().enumerate() {
            let per_tile: Vec<Field> = outputs.iter().map(|o| o.snaps[i].1.clone()).collect();
            snapshots.push((step, gather(&per_tile, topo)));
        }
    }

    let first = &outputs[0];
    if let Some(msg) = &first.fatal {
        return Err(PulseError::Runtime(msg.clone()));
    }
    // The abort stage, if any: stats are identical across workers.
    let mut report = RunReport {
        nsteps: problem.nsteps,
        solves_per_step: problem.solves_per_step,
        solve_stats: first.stats.clone(),
        wall_seconds,
        all_converged: first.aborted_at.is_none(),
        aborted_at: first.aborted_at,
        initial_energy: first.energy0,
        final_energy: first.energy1,
        min_final_value,
        final_field,
        snapshots,
    };
    // A failed stage is still recorded in solve_stats; flag it.
    if let Some((step, stage)) = report.aborted_at {
        let _ = (step, stage);
        report.all_converged = false;
    }
    Ok(report)
}

/// Relative L2 error of a run's final field against the analytic solution at
/// t = nsteps * dt. Drives the temporal-order study.
pub fn l2_error_vs_analytic(problem: &PulseProblem, topo: &TileTopology) -> Result<f64, PulseError> {
    let report = run(problem, topo)?;
    if !report.all_converged {
        let (step, stage) = report.aborted_at.unwrap();
        return Err(PulseError::SolveFailed {
            step,
            stage,
            outcome: report.solve_stats.last().map(|s| s.outcome).unwrap_or(Outcome::MaxIter),
        });
    }
    let t = problem.dt * problem.nsteps as f64;
    let exact = problem.analytic_solution(Tile::whole(&problem.grid), t)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for i2 in 0..problem.grid.nx2 {
        for i1 in 0..problem.grid.nx1 {
            for s in 0..problem.grid.nspecies {
                let e = exact.get(i1 as isize, i2 as isize, s);
                let d = report.final_field.get(i1, i2, s) - e;
                num += d * d;
                den += e * e;
            }
        }
    }
    Ok((num / den).sqrt())
}

const SNAPSHOT_MAGIC_LEN: usize = 24; // three u64 header words

/// Write a gathered field in the flat binary snapshot layout: header
/// {nx1, nx2, nspecies} as 64-bit little-endian integers, then row-major
/// (i2 outer, i1, species inner) 64-bit floats.
pub fn write_snapshot(path: &Path, field: &GlobalField) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(SNAPSHOT_MAGIC_LEN + field.data.len() * 8);
    buf.extend_from_slice(&(field.nx1 as u64).to_le_bytes());
    buf.extend_from_slice(&(field.nx2 as u64).to_le_bytes());
    buf.extend_from_slice(&(field.nspecies as u64).to_le_bytes());
    for v in &field.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf)
}

pub fn read_snapshot(path: &Path) -> std::io::Result<GlobalField> {
    let mut f = std::fs::File::open(path)?;
    let mut header = [0u8; SNAPSHOT_MAGIC_LEN];
    f.read_exact(&mut header)?;
    let word = |i: usize| u64::from_le_bytes(header[i * 8..(i + 1) * 8].try_into().unwrap()) as usize;
    let (nx1, nx2, ns) = (word(0), word(1), word(2));
    let mut rest = Vec::new();
    f.read_to_end(&mut rest)?;
    let expect = nx1 * nx2 * ns * 8;
    if rest.len() != expect {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("snapshot payload {} bytes, expected {expect}", rest.len()),
        ));
    }
    let data: Vec<f64> = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(GlobalField { nx1, nx2, nspecies: ns, data })
}

/// Write every recorded snapshot of a report into `dir` as step_NNNN.bin.
pub fn write_report_snapshots(report: &RunReport, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (step, field) in &report.snapshots {
        let path = dir.join(format!("step_{step:04}.bin"));
        write_snapshot(&path, field)?;
        paths.push(path);
    }
    let final_path = dir.join("final_field.bin");
    write_snapshot(&final_path, &report.final_field)?;
    paths.push(final_path);
    Ok(paths)
}

/// FNV-1a over the little-endian bytes of a field, for determinism checks
/// and report provenance.
pub fn field_checksum(field: &GlobalField) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    };
    for dim in [field.nx1 as u64, field.nx2 as u64, field.nspecies as u64] {
        for b in dim.to_le_bytes() {
            eat(b);
        }
    }
    for v in &field.data {
        for b in v.to_le_bytes() {
            eat(b);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precond::PrecondKind;

    fn small_problem(nx1: usize, nx2: usize) -> PulseProblem {
        let grid = GridSpec::new(nx1, nx2, 2, 1.0, 1.0).unwrap();
        PulseProblem {
            grid,
            sigma0: 3.0,
            center: (nx1 as f64 / 2.0, nx2 as f64 / 2.0),
            amplitude: 1.0,
            d0: 1.0,
            dt: 0.25,
            nsteps: 4,
            solves_per_step: 3,
            limiter: Limiter::None,
            solver: SolverConfig { tol: 1e-10, ..Default::default() },
        }
    }

    #[test]
    fn gaussian_center_and_width_samples() {
        // Center placed exactly on a zone center: peak equals the amplitude;
        // one sigma along x1 falls exactly three zones over.
        let mut p = small_problem(32, 32);
        p.center = (16.5, 16.5);
        let f = p.init_gaussian(Tile::whole(&p.grid));
        assert_eq!(f.get(16, 16, 0), 1.0);
        assert_eq!(f.get(16, 16, 1), 1.0);
        let at_sigma = f.get(19, 16, 0);
        assert!((at_sigma - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_total_energy_matches_integral() {
        // Midpoint sums of a resolved Gaussian converge superalgebraically;
        // with the boundary 10 sigma away the zone sum matches the 2-D
        // integral amplitude * 2 pi sigma^2 / (dx1 dx2) to high accuracy.
        let mut p = small_problem(64, 64);
        p.center = (32.0, 32.0);
        let f = p.init_gaussian(Tile::whole(&p.grid));
        let per_species = f.sum_interior() / 2.0;
        let want = p.amplitude * 2.0 * std::f64::consts::PI * p.sigma0 * p.sigma0;
        assert!(
            (per_species - want).abs() <= 1e-6 * want,
            "sum {per_species} vs integral {want}"
        );
    }

    #[test]
    fn analytic_matches_init_at_t0_and_decays_peak() {
        let mut p = small_problem(64, 64);
        p.center = (32.0, 32.0);
        let init = p.init_gaussian(Tile::whole(&p.grid));
        let a0 = p.analytic_solution(Tile::whole(&p.grid), 0.0).unwrap();
        for i2 in 0..64 {
            for (x, y) in init.interior_row(i2).iter().zip(a0.interior_row(i2)) {
                assert_eq!(x, y);
            }
        }
        // sigma^2 doubles at t = sigma0^2 / (2 d0); the peak halves (2-D).
        let t_double = p.sigma0 * p.sigma0 / (2.0 * p.d0);
        assert!((p.analytic_sigma2(t_double) - 2.0 * p.sigma0 * p.sigma0).abs() < 1e-12);
        let at = p.analytic_solution(Tile::whole(&p.grid), t_double).unwrap();
        let peak0 = a0.get(31, 31, 0).max(a0.get(32, 32, 0));
        let peak1 = at.get(31, 31, 0).max(at.get(32, 32, 0));
        assert!((peak1 / peak0 - 0.5).abs() < 0.02, "peak ratio {}", peak1 / peak0);
    }

    #[test]
    fn analytic_refuses_boundary_and_limiter() {
        let mut p = small_problem(16, 16);
        p.center = (8.0, 8.0);
        // 5 sigma(t) quickly exceeds the 8-unit half-width.
        let err = p.analytic_solution(Tile::whole(&p.grid), 50.0).unwrap_err();
        assert!(matches!(err, PulseError::NearBoundary { .. }));
        p.limiter = Limiter::LevermorePomraning;
        assert!(matches!(
            p.analytic_solution(Tile::whole(&p.grid), 0.0),
            Err(PulseError::LimiterActive)
        ));
    }

    #[test]
    fn zero_d0_leaves_state_unchanged() {
        let mut p = small_problem(16, 12);
        p.d0 = 0.0;
        p.nsteps = 2;
        let topo = TileTopology::serial(&p.grid);
        let report = run(&p, &topo).unwrap();
        assert!(report.all_converged);
        let init = p.init_gaussian(Tile::whole(&p.grid));
        for i2 in 0..12 {
            for (i1s, v) in report.final_field.data
                [i2 * 16 * 2..(i2 + 1) * 16 * 2]
                .iter()
                .enumerate()
            {
                let (i1, s) = (i1s / 2, i1s % 2);
                assert!((v - init.get(i1 as isize, i2 as isize, s)).abs() < 1e-12);
            }
            // A = I: every solve converges immediately.
        }
        for st in &report.solve_stats {
            assert!(st.iterations <= 1);
        }
    }

    #[test]
    fn constant_field_is_invariant_under_a_step() {
        let p = small_problem(12, 10);
        let topo = TileTopology::serial(&p.grid);
        let out = run_spmd(1, |comm| {
            let mut f = Field::zeros(Tile::whole(&p.grid), 2);
            f.fill_with(|_, _, _| 2.25);
            p.step(comm, &topo, f).map(|o| o.state)
        })
        .pop()
        .unwrap()
        .unwrap();
        // Unchanged up to the linear-solve tolerance.
        for i2 in 0..10 {
            for v in out.interior_row(i2) {
                assert!((v - 2.25).abs() < 1e-8, "{v}");
            }
        }
    }

    #[test]
    fn energy_conserved_over_one_step() {
        let mut p = small_problem(24, 20);
        p.center = (12.0, 10.0);
        p.solver.tol = 1e-12;
        let topo = TileTopology::serial(&p.grid);
        let init = p.init_gaussian(Tile::whole(&p.grid));
        let e0 = init.sum_interior();
        let out = run_spmd(1, |comm| p.step(comm, &topo, init.clone()).map(|o| o.state))
            .pop()
            .unwrap()
            .unwrap();
        let e1 = out.sum_interior();
        assert!((e1 - e0).abs() <= 1e-10 * e0, "energy drift {}", (e1 - e0) / e0);
    }

    #[test]
    fn run_produces_expected_record_count_and_zero_steps_work() {
        let mut p = small_problem(16, 12);
        p.nsteps = 3;
        let topo = TileTopology::serial(&p.grid);
        let report = run(&p, &topo).unwrap();
        assert_eq!(report.solve_stats.len(), 9);
        assert!(report.all_converged);

        p.nsteps = 0;
        let report0 = run(&p, &topo).unwrap();
        assert!(report0.solve_stats.is_empty());
        let init = p.init_gaussian(Tile::whole(&p.grid));
        let want: Vec<f64> = (0..12).flat_map(|i2| init.interior_row(i2).to_vec()).collect();
        assert_eq!(report0.final_field.data, want);
    }

    #[test]
    fn limiter_path_smoke() {
        let mut p = small_problem(16, 12);
        p.limiter = Limiter::LevermorePomraning;
        p.nsteps = 2;
        p.solver.precond = PrecondKind::BlockJacobi;
        let topo = TileTopology::serial(&p.grid);
        let report = run(&p, &topo).unwrap();
        assert!(report.all_converged);
        assert!(report.final_field.data.iter().all(|v| v.is_finite()));
        // Diffusion happened: the peak decayed.
        let peak0 = p.amplitude;
        let peak1 = report.final_field.data.iter().copied().fold(0.0f64, f64::max);
        assert!(peak1 < peak0);
    }

    #[test]
    fn positivity_preserved() {
        let mut p = small_problem(24, 20);
        p.center = (12.0, 10.0);
        p.nsteps = 6;
        let topo = TileTopology::serial(&p.grid);
        let report = run(&p, &topo).unwrap();
        assert!(report.min_final_value >= -1e-12 * p.amplitude, "min {}", report.min_final_value);
    }

    #[test]
    fn failed_solve_aborts_with_partial_report() {
        let mut p = small_problem(16, 12);
        p.solver.tol = 1e-30;
        p.solver.max_iter = Some(2);
        let topo = TileTopology::serial(&p.grid);
        let report = run(&p, &topo).unwrap();
        assert!(!report.all_converged);
        assert_eq!(report.aborted_at, Some((1, 1)));
        assert_eq!(report.solve_stats.len(), 1);
        assert_eq!(report.solve_stats[0].outcome, Outcome::MaxIter);
    }

    #[test]
    fn snapshot_roundtrip_and_checksum_stability() {
        let mut p = small_problem(12, 10);
        p.nsteps = 2;
        let topo = TileTopology::serial(&p.grid);
        let report =
            run_with_options(&p, &topo, &RunOptions { snapshot_every: Some(1) }).unwrap();
        assert_eq!(report.snapshots.len(), 2);
        let dir = std::env::temp_dir().join(format!("rdmini_snap_{}", std::process::id()));
        let paths = write_report_snapshots(&report, &dir).unwrap();
        let last = read_snapshot(paths.last().unwrap()).unwrap();
        assert_eq!(last.data, report.final_field.data);
        assert_eq!(field_checksum(&last), field_checksum(&report.final_field));
        // Header is three LE u64 words.
        let bytes = std::fs::read(paths.last().unwrap()).unwrap();
        assert_eq!(u64::from_le_bytes(bytes[0..8].try_into().unwrap()), 12);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 10);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn runs_are_deterministic() {
        let p = small_problem(20, 16);
        let topo = crate::grid::decompose(&p.grid, 2, 2).unwrap();
        let a = run(&p, &topo).unwrap();
        let b = run(&p, &topo).unwrap();
        assert_eq!(a.final_field.data, b.final_field.data);
        assert_eq!(a.total_iterations(), b.total_iterations());
        assert_eq!(a.total_reduction_events(), b.total_reduction_events());
        assert_eq!(field_checksum(&a.final_field), field_checksum(&b.final_field));
    }
}
