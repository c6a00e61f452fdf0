//! The matrix-free system operator: a five-band block stencil over a field.
//!
//! The implicit diffusion step solves A x = b with A = I + dt * (L + C),
//! where per species
//!
//! ```text
//! (L v)_z = -[ D_{i1+1/2} (v_{i1+1} - v_z) - D_{i1-1/2} (v_z - v_{i1-1}) ] / dx1^2
//!           -[ same along x2 ] / dx2^2
//! ```
//!
//! and C applies a zone-local species coupling matrix. The stored stencil
//! coefficients absorb dt: west = -dt * D_{i1-1/2} / dx1^2 (east/south/north
//! alike), diag = 1 - (west + east + south + north) + dt * couple_ss, and the
//! off-diagonal coupling entries are dt-scaled. With dictionary ordering
//! (species innermost, then i1, then i2) the assembled matrix has exactly
//! five block bands at offsets {0, +-ns, +-(ns * nx1)}.
//!
//! A is never stored at production scale; [`OperatorSpec::apply`] evaluates
//! the stencil directly. [`OperatorSpec::assemble_banded`] materializes the
//! same coefficients as an explicit matrix for small-instance oracle checks.

use thiserror::Error;

use crate::grid::{Field, GridSpec, Tile, TileTopology, WorkerComm};
use crate::kernels::{KernelPath, LANES};
use crate::oracle::DenseMatrix;

pub use crate::grid::BoundaryCondition;

/// Guard for explicit assembly: refuse to materialize systems larger than this.
pub const ASSEMBLE_GUARD: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum OperatorError {
    #[error("non-finite stencil coefficient at zone ({0}, {1})")]
    NonFiniteCoefficient(usize, usize),
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("face diffusion coefficients must be non-negative and finite")]
    BadFaceCoefficient,
    #[error("energy density must be positive everywhere, found {0} at zone ({1}, {2})")]
    NonPositiveEnergy(f64, usize, usize),
    #[error("system has {0} unknowns; explicit assembly is guarded at {ASSEMBLE_GUARD}")]
    AssembleGuardExceeded(usize),
    #[error("assembly requires a full-domain operator (serial tile)")]
    AssembleNeedsFullDomain,
    #[error("opacity must be positive for every species")]
    BadOpacity,
}

/// Flux limiter choice for the diffusion coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Limiter {
    /// No limiting: lambda = 1/3, the classic diffusion value.
    None,
    /// Levermore-Pomraning form lambda(R) = (2 + R) / (6 + 3R + R^2).
    LevermorePomraning,
}

impl Limiter {
    pub fn lambda(self, r: f64) -> f64 {
        match self {
            Limiter::None => 1.0 / 3.0,
            Limiter::LevermorePomraning => (2.0 + r) / (6.0 + 3.0 * r + r * r),
        }
    }
}

/// Face-centered diffusion coefficients per species for one tile.
///
/// `d1` holds faces normal to x1 ((len1 + 1) * len2 * ns values, face i1 of
/// row i2 sits between zones i1-1 and i1); `d2` holds faces normal to x2.
#[derive(Debug, Clone)]
pub struct FaceCoeffs {
    tile: Tile,
    nspecies: usize,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl FaceCoeffs {
    pub fn uniform(tile: Tile, nspecies: usize, d0: f64) -> Self {
        FaceCoeffs {
            tile,
            nspecies,
            d1: vec![d0; (tile.len1 + 1) * tile.len2 * nspecies],
            d2: vec![d0; tile.len1 * (tile.len2 + 1) * nspecies],
        }
    }

    #[inline]
    fn at1(&self, i1: usize, i2: usize, s: usize) -> f64 {
        self.d1[(i2 * (self.tile.len1 + 1) + i1) * self.nspecies + s]
    }

    #[inline]
    fn at2(&self, i1: usize, i2: usize, s: usize) -> f64 {
        self.d2[(i2 * self.tile.len1 + i1) * self.nspecies + s]
    }

    fn all_valid(&self) -> bool {
        self.d1.iter().chain(self.d2.iter()).all(|d| d.is_finite() && *d >= 0.0)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.d1.iter_mut().chain(self.d2.iter_mut())
    }
}

/// Face-centered flux-limited diffusion coefficients D = c * lambda(R) / kappa
/// with R = |grad E| / (kappa E) evaluated per face: the gradient is the
/// normal finite difference and E the arithmetic mean of the adjacent zones.
/// Halo values of `energy` must be current so tile-edge faces see their
/// neighbors.
pub fn flux_limited_d(
    energy: &Field,
    opacity: &[f64],
    rad_speed: f64,
    limiter: Limiter,
    grid: &GridSpec,
) -> Result<FaceCoeffs, OperatorError> {
    let tile = energy.tile();
    let ns = energy.nspecies();
    assert_eq!(opacity.len(), ns, "one opacity per species");
    if opacity.iter().any(|k| !(*k > 0.0) || !k.is_finite()) {
        return Err(OperatorError::BadOpacity);
    }
    for i2 in 0..tile.len2 {
        for i1 in 0..tile.len1 {
            for s in 0..ns {
                let e = energy.get(i1 as isize, i2 as isize, s);
                if !(e > 0.0) {
                    return Err(OperatorError::NonPositiveEnergy(e, tile.start1 + i1, tile.start2 + i2));
                }
            }
        }
    }
    let mut fc = FaceCoeffs::uniform(tile, ns, 0.0);
    let face_d = |e_lo: f64, e_hi: f64, dx: f64, kappa: f64| {
        let e_face = 0.5 * (e_lo + e_hi);
        let r = ((e_hi - e_lo) / dx).abs() / (kappa * e_face);
        rad_speed * limiter.lambda(r) / kappa
    };
    for i2 in 0..tile.len2 {
        for i1 in 0..=tile.len1 {
            for s in 0..ns {
                let lo = energy.get(i1 as isize - 1, i2 as isize, s);
                let hi = energy.get(i1 as isize, i2 as isize, s);
                fc.d1[(i2 * (tile.len1 + 1) + i1) * ns + s] = face_d(lo, hi, grid.dx1, opacity[s]);
            }
        }
    }
    for i2 in 0..=tile.len2 {
        for i1 in 0..tile.len1 {
            for s in 0..ns {
                let lo = energy.get(i1 as isize, i2 as isize - 1, s);
                let hi = energy.get(i1 as isize, i2 as isize, s);
                fc.d2[(i2 * tile.len1 + i1) * ns + s] = face_d(lo, hi, grid.dx2, opacity[s]);
            }
        }
    }
    Ok(fc)
}

/// Zone-local species coupling added to the diagonal block (units 1/time;
/// the builder scales by dt).
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingSpec {
    None,
    /// Row-major ns x ns matrix applied at every zone.
    Uniform(Vec<f64>),
}

/// Per-entry raw stencil coefficients, for constructing operators directly.
#[derive(Debug, Clone, Copy, Default)]
pub struct StencilEntry {
    pub diag: f64,
    pub west: f64,
    pub east: f64,
    pub south: f64,
    pub north: f64,
}

/// Stencil coefficients of the system operator for one tile.
///
/// Coefficient arrays are stored as [`Field`]s so their one-cell halo ring
/// can carry neighbor-tile coefficients (needed by preconditioner
/// construction); `couple` packs the dt-scaled off-diagonal species block as
/// ns^2 channels per zone with zero diagonal entries.
#[derive(Debug, Clone)]
pub struct OperatorSpec {
    grid: GridSpec,
    tile: Tile,
    bc: BoundaryCondition,
    diag: Field,
    west: Field,
    east: Field,
    south: Field,
    north: Field,
    couple: Field,
    has_coupling: bool,
    spatially_symmetric: bool,
    halo_coeffs_valid: bool,
    rhs_correction: Option<Field>,
}

/// Stencil band selector for crate-internal coefficient writes.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Band {
    Diag,
    West,
    East,
    South,
    North,
    /// Off-diagonal species entry; payload is the column species.
    Couple(usize),
}

impl OperatorSpec {
    /// An all-zero stencil, the starting point for preconditioner assembly.
    pub(crate) fn zero_stencil(grid: &GridSpec, tile: Tile) -> Self {
        let mut op = OperatorSpec::identity(grid, tile);
        op.diag.fill_with(|_, _, _| 0.0);
        op
    }

    pub(crate) fn set_band(&mut self, l1: isize, l2: isize, s: usize, band: Band, v: f64) {
        let ns = self.nspecies();
        match band {
            Band::Diag => self.diag.set(l1, l2, s, v),
            Band::West => self.west.set(l1, l2, s, v),
            Band::East => self.east.set(l1, l2, s, v),
            Band::South => self.south.set(l1, l2, s, v),
            Band::North => self.north.set(l1, l2, s, v),
            Band::Couple(sc) => self.couple.set(l1, l2, s * ns + sc, v),
        }
    }

    /// All band values of unknown (l1, l2, s): diag, west, east, south,
    /// north, then the ns off-diagonal couple entries.
    #[cfg(test)]
    pub(crate) fn bands_at(&self, l1: isize, l2: isize, s: usize) -> Vec<f64> {
        let ns = self.nspecies();
        let mut out = vec![
            self.diag.get(l1, l2, s),
            self.west.get(l1, l2, s),
            self.east.get(l1, l2, s),
            self.south.get(l1, l2, s),
            self.north.get(l1, l2, s),
        ];
        for sc in 0..ns {
            out.push(self.couple.get(l1, l2, s * ns + sc));
        }
        out
    }

    pub(crate) fn set_has_coupling(&mut self, v: bool) {
        self.has_coupling = v;
    }

    #[cfg(test)]
    pub(crate) fn mark_spatially_symmetric(&mut self) {
        self.spatially_symmetric = true;
    }

    /// The identity operator on a tile.
    pub fn identity(grid: &GridSpec, tile: Tile) -> Self {
        let ns = grid.nspecies;
        let mut diag = Field::zeros(tile, ns);
        diag.fill_with(|_, _, _| 1.0);
        OperatorSpec {
            grid: *grid,
            tile,
            bc: BoundaryCondition::ZeroFlux,
            diag,
            west: Field::zeros(tile, ns),
            east: Field::zeros(tile, ns),
            south: Field::zeros(tile, ns),
            north: Field::zeros(tile, ns),
            couple: Field::zeros(tile, ns * ns),
            has_coupling: false,
            spatially_symmetric: true,
            halo_coeffs_valid: false,
            rhs_correction: None,
        }
    }

    /// Build an operator from raw per-zone coefficients. Coefficients that
    /// would point outside the global domain are forced to zero so the
    /// stencil and the assembled matrix always agree.
    pub fn from_coefficients(
        grid: &GridSpec,
        tile: Tile,
        bc: BoundaryCondition,
        mut entries: impl FnMut(usize, usize, usize) -> StencilEntry,
        mut coupling: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self, OperatorError> {
        let ns = grid.nspecies;
        let mut op = OperatorSpec::identity(grid, tile);
        op.bc = bc;
        op.spatially_symmetric = false;
        let mut has_coupling = false;
        for i2 in 0..tile.len2 {
            for i1 in 0..tile.len1 {
                let (g1, g2) = (tile.start1 + i1, tile.start2 + i2);
                for s in 0..ns {
                    let mut e = entries(g1, g2, s);
                    if g1 == 0 {
                        e.west = 0.0;
                    }
                    if g1 + 1 == grid.nx1 {
                        e.east = 0.0;
                    }
                    if g2 == 0 {
                        e.south = 0.0;
                    }
                    if g2 + 1 == grid.nx2 {
                        e.north = 0.0;
                    }
                    let vals = [e.diag, e.west, e.east, e.south, e.north];
                    if vals.iter().any(|v| !v.is_finite()) {
                        return Err(OperatorError::NonFiniteCoefficient(g1, g2));
                    }
                    let (l1, l2) = (i1 as isize, i2 as isize);
                    op.diag.set(l1, l2, s, e.diag);
                    op.west.set(l1, l2, s, e.west);
                    op.east.set(l1, l2, s, e.east);
                    op.south.set(l1, l2, s, e.south);
                    op.north.set(l1, l2, s, e.north);
                    for sc in 0..ns {
                        if sc == s {
                            continue;
                        }
                        let c = coupling(g1, g2, s, sc);
                        if !c.is_finite() {
                            return Err(OperatorError::NonFiniteCoefficient(g1, g2));
                        }
                        if c != 0.0 {
                            has_coupling = true;
                        }
                        op.couple.set(l1, l2, s * ns + sc, c);
                    }
                }
            }
        }
        op.has_coupling = has_coupling;
        Ok(op)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn tile(&self) -> Tile {
        self.tile
    }

    pub fn nspecies(&self) -> usize {
        self.grid.nspecies
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    /// Additive right-hand-side contribution from Dirichlet boundaries, if any.
    pub fn rhs_correction(&self) -> Option<&Field> {
        self.rhs_correction.as_ref()
    }

    /// Largest coefficient magnitude, for scaling oracle tolerances.
    pub fn max_abs_coefficient(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i2 in 0..self.tile.len2 {
            for f in [&self.diag, &self.west, &self.east, &self.south, &self.north, &self.couple] {
                for &v in f.interior_row(i2) {
                    m = m.max(v.abs());
                }
            }
        }
        m
    }

    /// y = A x over the tile interior. `x` halos must be current; only
    /// interior cells of `y` are written. Pure in `x` and `self`.
    pub fn apply(&self, x: &Field, y: &mut Field, path: KernelPath) {
        assert_eq!(x.tile(), self.tile, "apply: field/operator tile mismatch");
        assert_eq!(x.nspecies(), self.nspecies(), "apply: species mismatch");
        assert_eq!(y.tile(), self.tile, "apply: output tile mismatch");
        assert_eq!(y.nspecies(), self.nspecies(), "apply: output species mismatch");
        match path {
            KernelPath::ScalarReference => self.apply_scalar(x, y),
            KernelPath::Vectorized => self.apply_vectorized(x, y),
        }
    }

    fn apply_scalar(&self, x: &Field, y: &mut Field) {
        let ns = self.nspecies();
        for i2 in 0..self.tile.len2 as isize {
            for i1 in 0..self.tile.len1 as isize {
                for s in 0..ns {
                    let mut acc = self.diag.get(i1, i2, s) * x.get(i1, i2, s);
                    acc += self.west.get(i1, i2, s) * x.get(i1 - 1, i2, s);
                    acc += self.east.get(i1, i2, s) * x.get(i1 + 1, i2, s);
                    acc += self.south.get(i1, i2, s) * x.get(i1, i2 - 1, s);
                    acc += self.north.get(i1, i2, s) * x.get(i1, i2 + 1, s);
                    if self.has_coupling {
                        for sc in 0..ns {
                            if sc != s {
                                acc += self.couple.get(i1, i2, s * ns + sc) * x.get(i1, i2, sc);
                            }
                        }
                    }
                    y.set(i1, i2, s, acc);
                }
            }
        }
    }

    fn apply_vectorized(&self, x: &Field, y: &mut Field) {
        let ns = self.nspecies();
        let nrow = self.tile.len1 * ns;
        for i2 in 0..self.tile.len2 {
            let d = self.diag.interior_row(i2);
            let w = self.west.interior_row(i2);
            let e = self.east.interior_row(i2);
            let so = self.south.interior_row(i2);
            let no = self.north.interior_row(i2);
            let xp = x.padded_row(i2 as isize);
            let xc = &xp[ns..ns + nrow];
            let xw = &xp[..nrow];
            let xe = &xp[2 * ns..2 * ns + nrow];
            let xs = &x.padded_row(i2 as isize - 1)[ns..ns + nrow];
            let xn = &x.padded_row(i2 as isize + 1)[ns..ns + nrow];
            let yr = y.interior_row_mut(i2);

            let chunks = nrow / LANES * LANES;
            for i0 in (0..chunks).step_by(LANES) {
                for i in i0..i0 + LANES {
                    yr[i] = d[i] * xc[i] + w[i] * xw[i] + e[i] * xe[i] + so[i] * xs[i] + no[i] * xn[i];
                }
            }
            for i in chunks..nrow {
                yr[i] = d[i] * xc[i] + w[i] * xw[i] + e[i] * xe[i] + so[i] * xs[i] + no[i] * xn[i];
            }
            if self.has_coupling {
                let cpl = self.couple.interior_row(i2);
                for q in 0..self.tile.len1 {
                    for s in 0..ns {
                        let mut acc = yr[q * ns + s];
                        for sc in 0..ns {
                            if sc != s {
                                acc += cpl[q * ns * ns + s * ns + sc] * xc[q * ns + sc];
                            }
                        }
                        yr[q * ns + s] = acc;
                    }
                }
            }
        }
    }

    /// The ns x ns diagonal block at local zone (l1, l2), row-major:
    /// diagonal entries from `diag`, off-diagonals from `couple`.
    pub(crate) fn diag_block(&self, l1: isize, l2: isize) -> Vec<f64> {
        let ns = self.nspecies();
        let mut block = vec![0.0; ns * ns];
        for sr in 0..ns {
            for sc in 0..ns {
                block[sr * ns + sc] = if sr == sc {
                    self.diag.get(l1, l2, sr)
                } else {
                    self.couple.get(l1, l2, sr * ns + sc)
                };
            }
        }
        block
    }

    /// Matrix entry A[row, col] for global unknowns row = (r1, r2, sr) and
    /// col = (c1, c2, sc), both inside the domain.
    ///
    /// When the row zone lies beyond this tile's coefficient halo ring the
    /// entry is reconstructed from the column side, which requires the
    /// spatial coefficients to be symmetric (true for diffusion operators).
    pub(crate) fn entry(&self, row: (usize, usize, usize), col: (usize, usize, usize)) -> f64 {
        let ns = self.nspecies();
        let (r1, r2, sr) = row;
        let (c1, c2, sc) = col;
        let dz1 = c1 as isize - r1 as isize;
        let dz2 = c2 as isize - r2 as isize;
        if dz1 == 0 && dz2 == 0 {
            let (l1, l2) = self.local(r1, r2);
            debug_assert!(self.zone_known(l1, l2), "diagonal block outside coefficient knowledge");
            return if sr == sc {
                self.diag.get(l1, l2, sr)
            } else {
                self.couple.get(l1, l2, sr * ns + sc)
            };
        }
        if sr != sc || dz1.abs() + dz2.abs() != 1 {
            return 0.0;
        }
        let (l1, l2) = self.local(r1, r2);
        if self.zone_known(l1, l2) {
            let f = match (dz1, dz2) {
                (-1, 0) => &self.west,
                (1, 0) => &self.east,
                (0, -1) => &self.south,
                (0, 1) => &self.north,
                _ => unreachable!(),
            };
            f.get(l1, l2, sr)
        } else {
            // Row zone out of reach: mirror through the column zone.
            debug_assert!(self.spatially_symmetric, "asymmetric operator needs row-side coefficients");
            let (m1, m2) = self.local(c1, c2);
            debug_assert!(self.zone_known(m1, m2));
            let f = match (dz1, dz2) {
                (-1, 0) => &self.east,
                (1, 0) => &self.west,
                (0, -1) => &self.north,
                (0, 1) => &self.south,
                _ => unreachable!(),
            };
            f.get(m1, m2, sc)
        }
    }

    fn local(&self, g1: usize, g2: usize) -> (isize, isize) {
        (g1 as isize - self.tile.start1 as isize, g2 as isize - self.tile.start2 as isize)
    }

    fn zone_known(&self, l1: isize, l2: isize) -> bool {
        let interior =
            l1 >= 0 && l1 < self.tile.len1 as isize && l2 >= 0 && l2 < self.tile.len2 as isize;
        if interior {
            return true;
        }
        let ring = l1 >= -1 && l1 <= self.tile.len1 as isize && l2 >= -1 && l2 <= self.tile.len2 as isize;
        ring && self.halo_coeffs_valid
    }

    /// Share each coefficient array's edge strips with the axis neighbors so
    /// the halo ring holds their stencil coefficients. Required once before
    /// preconditioner construction in parallel runs.
    pub fn exchange_coefficient_halos(&mut self, comm: &WorkerComm, topo: &TileTopology) {
        for f in [&mut self.diag, &mut self.west, &mut self.east, &mut self.south, &mut self.north, &mut self.couple]
        {
            comm.halo_exchange(f, topo, BoundaryCondition::ZeroFlux);
        }
        self.halo_coeffs_valid = true;
    }

    /// Materialize the operator as an explicit dense matrix (oracle use only).
    pub fn assemble_banded(&self) -> Result<DenseMatrix, OperatorError> {
        let n = self.grid.unknowns();
        if n > ASSEMBLE_GUARD {
            return Err(OperatorError::AssembleGuardExceeded(n));
        }
        let full = self.tile.start1 == 0
            && self.tile.start2 == 0
            && self.tile.len1 == self.grid.nx1
            && self.tile.len2 == self.grid.nx2;
        if !full {
            return Err(OperatorError::AssembleNeedsFullDomain);
        }
        let ns = self.nspecies();
        let mut m = DenseMatrix::zeros(n, n);
        for i2 in 0..self.grid.nx2 {
            for i1 in 0..self.grid.nx1 {
                let (l1, l2) = (i1 as isize, i2 as isize);
                for s in 0..ns {
                    let row = self.grid.flat_index(i1, i2, s);
                    m.set(row, row, self.diag.get(l1, l2, s));
                    if i1 > 0 {
                        m.set(row, self.grid.flat_index(i1 - 1, i2, s), self.west.get(l1, l2, s));
                    }
                    if i1 + 1 < self.grid.nx1 {
                        m.set(row, self.grid.flat_index(i1 + 1, i2, s), self.east.get(l1, l2, s));
                    }
                    if i2 > 0 {
                        m.set(row, self.grid.flat_index(i1, i2 - 1, s), self.south.get(l1, l2, s));
                    }
                    if i2 + 1 < self.grid.nx2 {
                        m.set(row, self.grid.flat_index(i1, i2 + 1, s), self.north.get(l1, l2, s));
                    }
                    for sc in 0..ns {
                        if sc != s {
                            m.set(row, self.grid.flat_index(i1, i2, sc), self.couple.get(l1, l2, s * ns + sc));
                        }
                    }
                }
            }
        }
        Ok(m)
    }
}

/// Build the backward-Euler diffusion operator A = I + dt * (L + C) for one
/// tile from face-centered diffusion coefficients.
///
/// Zero-flux boundaries fold the out-of-domain neighbor coefficient into the
/// diagonal (the face simply drops out); Dirichlet keeps the diagonal
/// contribution and moves the known boundary term to the right-hand side,
/// exposed via [`OperatorSpec::rhs_correction`].
pub fn build_diffusion_operator(
    grid: &GridSpec,
    tile: Tile,
    d_face: &FaceCoeffs,
    dt: f64,
    coupling: &CouplingSpec,
    bc: BoundaryCondition,
) -> Result<OperatorSpec, OperatorError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(OperatorError::NonPositiveDt(dt));
    }
    if !d_face.all_valid() {
        return Err(OperatorError::BadFaceCoefficient);
    }
    let ns = grid.nspecies;
    assert_eq!(d_face.tile, tile, "face coefficients belong to a different tile");
    assert_eq!(d_face.nspecies, ns, "face coefficients species mismatch");
    let cpl = match coupling {
        CouplingSpec::None => None,
        CouplingSpec::Uniform(m) => {
            assert_eq!(m.len(), ns * ns, "coupling matrix must be ns x ns");
            if m.iter().any(|v| !v.is_finite()) {
                return Err(OperatorError::NonFiniteCoefficient(tile.start1, tile.start2));
            }
            Some(m.as_slice())
        }
    };

    let mut op = OperatorSpec::identity(grid, tile);
    op.bc = bc;
    op.has_coupling = cpl.is_some_and(|m| {
        (0..ns).any(|sr| (0..ns).any(|sc| sr != sc && m[sr * ns + sc] != 0.0))
    });
    let inv_dx1sq = 1.0 / (grid.dx1 * grid.dx1);
    let inv_dx2sq = 1.0 / (grid.dx2 * grid.dx2);
    let mut rhs: Option<Field> = None;

    for i2 in 0..tile.len2 {
        for i1 in 0..tile.len1 {
            let (g1, g2) = (tile.start1 + i1, tile.start2 + i2);
            let (l1, l2) = (i1 as isize, i2 as isize);
            for s in 0..ns {
                let cw = -dt * d_face.at1(i1, i2, s) * inv_dx1sq;
                let ce = -dt * d_face.at1(i1 + 1, i2, s) * inv_dx1sq;
                let cs = -dt * d_face.at2(i1, i2, s) * inv_dx2sq;
                let cn = -dt * d_face.at2(i1, i2 + 1, s) * inv_dx2sq;
                let mut diag = 1.0 + dt * cpl.map_or(0.0, |m| m[s * ns + s]);
                let mut place = |c: f64, at_boundary: bool, dest: &mut f64| {
                    if !at_boundary {
                        *dest = c;
                        diag -= c;
                    } else {
                        match bc {
                            BoundaryCondition::ZeroFlux => {}
                            BoundaryCondition::Dirichlet(g) => {
                                diag -= c;
                                let r = rhs.get_or_insert_with(|| Field::zeros(tile, ns));
                                let cur = r.get(l1, l2, s);
                                r.set(l1, l2, s, cur - c * g);
                            }
                        }
                    }
                };
                let mut w = 0.0;
                let mut e = 0.0;
                let mut so = 0.0;
                let mut no = 0.0;
                place(cw, g1 == 0, &mut w);
                place(ce, g1 + 1 == grid.nx1, &mut e);
                place(cs, g2 == 0, &mut so);
                place(cn, g2 + 1 == grid.nx2, &mut no);
                drop(place);
                if ![diag, w, e, so, no].iter().all(|v| v.is_finite()) {
                    return Err(OperatorError::NonFiniteCoefficient(g1, g2));
                }
                op.diag.set(l1, l2, s, diag);
                op.west.set(l1, l2, s, w);
                op.east.set(l1, l2, s, e);
                op.south.set(l1, l2, s, so);
                op.north.set(l1, l2, s, no);
                if let Some(m) = cpl {
                    for sc in 0..ns {
                        if sc != s {
                            op.couple.set(l1, l2, s * ns + sc, dt * m[s * ns + sc]);
                        }
                    }
                }
            }
        }
    }
    op.rhs_correction = rhs;
    Ok(op)
}
