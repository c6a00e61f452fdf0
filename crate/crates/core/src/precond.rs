//! Preconditioners for the BiCGSTAB solve: identity, block-Jacobi, and a
//! fixed-pattern sparse approximate inverse (SPAI) applied matrix-free.
//!
//! The SPAI pattern is the operator's own stencil: column j of M may be
//! nonzero at the unknown itself, its species partners in the same zone, and
//! the four spatial neighbors of the same species. Each column solves the
//! small least-squares problem min |A m_j - e_j|_2 over that pattern via
//! normal equations, using only operator coefficients available within one
//! coefficient halo ring, so construction is tile-parallel. The resulting M
//! has the same five-block-band shape as A and is applied like the operator.

use thiserror::Error;

use crate::grid::{Direction, Field, Tile, TileTopology, WorkerComm, DIRECTIONS};
use crate::kernels::KernelPath;
use crate::operator::OperatorSpec;
use crate::operator::Band;

/// Which preconditioner a solve should use (configuration-level selector).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondKind {
    Identity,
    BlockJacobi,
    Spai,
}

#[derive(Debug, Error, PartialEq)]
pub enum PrecondError {
    #[error("singular diagonal block at zone ({0}, {1})")]
    SingularDiagonalBlock(usize, usize),
}

/// A built preconditioner for one tile.
#[derive(Debug, Clone)]
pub enum PreconditionerSpec {
    Identity,
    BlockJacobi(BlockJacobi),
    Spai(SpaiPrecond),
}

impl PreconditionerSpec {
    pub fn kind(&self) -> PrecondKind {
        match self {
            PreconditionerSpec::Identity => PrecondKind::Identity,
            PreconditionerSpec::BlockJacobi(_) => PrecondKind::BlockJacobi,
            PreconditionerSpec::Spai(_) => PrecondKind::Spai,
        }
    }

    /// Whether applying this preconditioner reads neighbor values, i.e. the
    /// input field's halos must be current.
    pub fn needs_halo(&self) -> bool {
        matches!(self, PreconditionerSpec::Spai(_))
    }

    /// y = M x over the tile interior. Linear and pure; identity copies.
    pub fn apply(&self, x: &Field, y: &mut Field, path: KernelPath) {
        match self {
            PreconditionerSpec::Identity => y.copy_interior_from(x),
            PreconditionerSpec::BlockJacobi(bj) => bj.apply(x, y),
            PreconditionerSpec::Spai(spai) => spai.stencil.apply(x, y, path),
        }
    }
}

/// Per-zone exact inverses of the operator's ns x ns diagonal blocks.
#[derive(Debug, Clone)]
pub struct BlockJacobi {
    tile: Tile,
    nspecies: usize,
    inv_blocks: Vec<f64>,
}

impl BlockJacobi {
    /// Inverse block at local zone (i1, i2), row-major ns x ns.
    pub(crate) fn inv_block(&self, i1: usize, i2: usize) -> &[f64] {
        let ns = self.nspecies;
        let z = (i2 * self.tile.len1 + i1) * ns * ns;
        &self.inv_blocks[z..z + ns * ns]
    }

    fn apply(&self, x: &Field, y: &mut Field) {
        assert_eq!(x.tile(), self.tile, "apply_precond: shape mismatch");
        assert_eq!(x.nspecies(), self.nspecies, "apply_precond: species mismatch");
        assert_eq!(y.tile(), self.tile, "apply_precond: output shape mismatch");
        let ns = self.nspecies;
        for i2 in 0..self.tile.len2 {
            for i1 in 0..self.tile.len1 {
                let b = self.inv_block(i1, i2);
                for sr in 0..ns {
                    let mut acc = 0.0;
                    for sc in 0..ns {
                        acc += b[sr * ns + sc] * x.get(i1 as isize, i2 as isize, sc);
                    }
                    y.set(i1 as isize, i2 as isize, sr, acc);
                }
            }
        }
    }
}

/// SPAI coefficients share the operator's stencil shape, so application is
/// the same banded stencil sweep.
#[derive(Debug, Clone)]
pub struct SpaiPrecond {
    stencil: OperatorSpec,
    /// Columns whose local least-squares system was rank deficient and fell
    /// back to the block-Jacobi column, summed over all tiles.
    pub fallback_columns: usize,
}

impl SpaiPrecond {
    /// The approximate inverse as an operator-shaped stencil (oracle use).
    pub fn as_operator(&self) -> &OperatorSpec {
        &self.stencil
    }
}

/// Invert the per-zone diagonal blocks. Fails on the first singular block,
/// reporting its global zone index.
pub fn build_block_jacobi(op: &OperatorSpec) -> Result<PreconditionerSpec, PrecondError> {
    let tile = op.tile();
    let ns = op.nspecies();
    let mut inv_blocks = vec![0.0; tile.zones() * ns * ns];
    for i2 in 0..tile.len2 {
        for i1 in 0..tile.len1 {
            let block = op.diag_block(i1 as isize, i2 as isize);
            let inv = invert_small(&block, ns).ok_or(PrecondError::SingularDiagonalBlock(
                tile.start1 + i1,
                tile.start2 + i2,
            ))?;
            let z = (i2 * tile.len1 + i1) * ns * ns;
            inv_blocks[z..z + ns * ns].copy_from_slice(&inv);
        }
    }
    Ok(PreconditionerSpec::BlockJacobi(BlockJacobi { tile, nspecies: ns, inv_blocks }))
}

/// Relative pivot tolerance of the per-column normal-equations solve.
const SPAI_PIVOT_TOL: f64 = 1e-12;

/// Build the SPAI preconditioner for this worker's tile.
///
/// Collective: exchanges one ring of operator coefficients (once per
/// operator) plus the edge strips of M entries whose rows live on neighbor
/// tiles. Falls back to the block-Jacobi column where the local
/// least-squares system is rank deficient; the summed fallback count is
/// reported in the result.
pub fn build_spai(
    op: &mut OperatorSpec,
    comm: &WorkerComm,
    topo: &TileTopology,
) -> Result<PreconditionerSpec, PrecondError> {
    if comm.n_workers() > 1 {
        op.exchange_coefficient_halos(comm, topo);
    }
    let bj = match build_block_jacobi(op)? {
        PreconditionerSpec::BlockJacobi(bj) => bj,
        _ => unreachable!(),
    };
    let grid = *op.grid();
    let tile = op.tile();
    let ns = grid.nspecies;
    let mut m = OperatorSpec::zero_stencil(&grid, tile);
    let mut fallbacks = 0usize;

    // Strips of M entries owned by neighbor tiles, packed (edge zone, species).
    let mut remote: [Vec<f64>; 4] = [
        vec![0.0; tile.len2 * ns], // destined West: their East band
        vec![0.0; tile.len2 * ns], // destined East: their West band
        vec![0.0; tile.len1 * ns], // destined South: their North band
        vec![0.0; tile.len1 * ns], // destined North: their South band
    ];

    let mut scratch = ColumnScratch::default();
    for i2 in 0..tile.len2 {
        for i1 in 0..tile.len1 {
            let (c1, c2) = (tile.start1 + i1, tile.start2 + i2);
            for sc in 0..ns {
                let col = solve_column(op, &grid, (c1, c2, sc), &mut scratch);
                let coeffs = match col {
                    Some(c) => c,
                    None => {
                        fallbacks += 1;
                        let mut c = vec![0.0; ns + 4];
                        let inv = bj.inv_block(i1, i2);
                        for sr in 0..ns {
                            c[sr] = inv[sr * ns + sc];
                        }
                        c
                    }
                };
                // coeffs layout: [diag-block rows s'=0..ns, west, east, south, north]
                for sr in 0..ns {
                    if sr == sc {
                        m.set_band(i1 as isize, i2 as isize, sr, Band::Diag, coeffs[sr]);
                    } else {
                        m.set_band(i1 as isize, i2 as isize, sr, Band::Couple(sc), coeffs[sr]);
                    }
                }
                // Spatial entries: M[row = col zone +- e, col]. Row-side
                // storage: a row west of the column stores an East band.
                let spatial = [
                    (Direction::West, Band::East, coeffs[ns]),
                    (Direction::East, Band::West, coeffs[ns + 1]),
                    (Direction::South, Band::North, coeffs[ns + 2]),
                    (Direction::North, Band::South, coeffs[ns + 3]),
                ];
                for (dir, band, v) in spatial {
                    let (r1, r2) = match dir {
                        Direction::West => (c1.wrapping_sub(1), c2),
                        Direction::East => (c1 + 1, c2),
                        Direction::South => (c1, c2.wrapping_sub(1)),
                        Direction::North => (c1, c2 + 1),
                    };
                    if r1 >= grid.nx1 || r2 >= grid.nx2 {
                        continue; // out of the global domain
                    }
                    let l1 = r1 as isize - tile.start1 as isize;
                    let l2 = r2 as isize - tile.start2 as isize;
                    if l1 >= 0 && l1 < tile.len1 as isize && l2 >= 0 && l2 < tile.len2 as isize {
                        m.set_band(l1, l2, sc, band, v);
                    } else {
                        // The row belongs to the neighbor across `dir`.
                        match dir {
                            Direction::West => remote[0][i2 * ns + sc] = v,
                            Direction::East => remote[1][i2 * ns + sc] = v,
                            Direction::South => remote[2][i1 * ns + sc] = v,
                            Direction::North => remote[3][i1 * ns + sc] = v,
                        }
                    }
                }
            }
        }
    }

    if comm.n_workers() > 1 {
        let mut received: [Option<Vec<f64>>; 4] = [None, None, None, None];
        comm.exchange_strips(
            topo,
            |dir| match dir {
                Direction::West => remote[0].clone(),
                Direction::East => remote[1].clone(),
                Direction::South => remote[2].clone(),
                Direction::North => remote[3].clone(),
            },
            |dir, data| {
                let slot = match dir {
                    Direction::West => 0,
                    Direction::East => 1,
                    Direction::South => 2,
                    Direction::North => 3,
                };
                received[slot] = Some(data.to_vec());
            },
        );
        // What the neighbor across `dir` sent us lands in our edge band.
        for dir in DIRECTIONS {
            let slot = match dir {
                Direction::West => 0,
                Direction::East => 1,
                Direction::South => 2,
                Direction::North => 3,
            };
            let Some(data) = &received[slot] else { continue };
            match dir {
                Direction::West => {
                    for i2 in 0..tile.len2 {
                        for s in 0..ns {
                            m.set_band(0, i2 as isize, s, Band::West, data[i2 * ns + s]);
                        }
                    }
                }
                Direction::East => {
                    for i2 in 0..tile.len2 {
                        for s in 0..ns {
                            m.set_band(tile.len1 as isize - 1, i2 as isize, s, Band::East, data[i2 * ns + s]);
                        }
                    }
                }
                Direction::South => {
                    for i1 in 0..tile.len1 {
                        for s in 0..ns {
                            m.set_band(i1 as isize, 0, s, Band::South, data[i1 * ns + s]);
                        }
                    }
                }
                Direction::North => {
                    for i1 in 0..tile.len1 {
                        for s in 0..ns {
                            m.set_band(i1 as isize, tile.len2 as isize - 1, s, Band::North, data[i1 * ns + s]);
                        }
                    }
                }
            }
        }
        fallbacks = comm.reduce_sum(&[fallbacks as f64])[0] as usize;
    }

    m.set_has_coupling(ns > 1);
    Ok(PreconditionerSpec::Spai(SpaiPrecond { stencil: m, fallback_columns: fallbacks }))
}

/// Build the preconditioner selected by `kind` (collective for SPAI).
pub fn build(
    kind: PrecondKind,
    op: &mut OperatorSpec,
    comm: &WorkerComm,
    topo: &TileTopology,
) -> Result<PreconditionerSpec, PrecondError> {
    match kind {
        PrecondKind::Identity => Ok(PreconditionerSpec::Identity),
        PrecondKind::BlockJacobi => build_block_jacobi(op),
        PrecondKind::Spai => build_spai(op, comm, topo),
    }
}

#[derive(Default)]
struct ColumnScratch {
    cols: Vec<(usize, usize, usize)>,
    rows: Vec<(usize, usize, usize)>,
    b: Vec<f64>,
    gram: Vec<f64>,
    rhs: Vec<f64>,
}

/// Pattern of column j: the unknown itself, its species partners in the
/// zone, and the four same-species spatial neighbors, ascending flat order.
fn column_pattern(grid: &crate::grid::GridSpec, j: (usize, usize, usize), out: &mut Vec<(usize, usize, usize)>) {
    let (c1, c2, sc) = j;
    out.clear();
    if c2 > 0 {
        out.push((c1, c2 - 1, sc));
    }
    if c1 > 0 {
        out.push((c1 - 1, c2, sc));
    }
    for s in 0..grid.nspecies {
        out.push((c1, c2, s));
    }
    if c1 + 1 < grid.nx1 {
        out.push((c1 + 1, c2, sc));
    }
    if c2 + 1 < grid.nx2 {
        out.push((c1, c2 + 1, sc));
    }
}

/// Rows structurally touched by column i of A: the zone's full diagonal
/// block plus the same-species spatial neighbors.
fn column_support(grid: &crate::grid::GridSpec, i: (usize, usize, usize), out: &mut Vec<(usize, usize, usize)>) {
    column_pattern(grid, i, out);
}

/// Solve min |A m_j - e_j| over the stencil pattern by normal equations.
/// Returns None when the Gram matrix is rank deficient to tolerance.
/// Layout of the result: [zone block rows s'=0..ns, west, east, south, north]
/// with absent (out-of-domain) positions zero.
fn solve_column(
    op: &OperatorSpec,
    grid: &crate::grid::GridSpec,
    j: (usize, usize, usize),
    scratch: &mut ColumnScratch,
) -> Option<Vec<f64>> {
    let ns = grid.nspecies;
    column_pattern(grid, j, &mut scratch.cols);
    let k = scratch.cols.len();

    // Touched rows: union of supports, kept sorted ascending by flat index.
    scratch.rows.clear();
    let mut support = Vec::new();
    for &col in scratch.cols.iter() {
        column_support(grid, col, &mut support);
        scratch.rows.extend_from_slice(&support);
    }
    scratch.rows.sort_unstable_by_key(|&(i1, i2, s)| grid.flat_index(i1, i2, s));
    scratch.rows.dedup();
    let nr = scratch.rows.len();

    scratch.b.clear();
    scratch.b.resize(nr * k, 0.0);
    for (ri, &row) in scratch.rows.iter().enumerate() {
        for (ci, &col) in scratch.cols.iter().enumerate() {
            scratch.b[ri * k + ci] = op.entry(row, col);
        }
    }

    // Normal equations G m = B^T e_j; e_j picks out the row equal to j.
    let jrow = scratch.rows.iter().position(|&r| r == j).expect("column j is always a touched row");
    scratch.gram.clear();
    scratch.gram.resize(k * k, 0.0);
    for a in 0..k {
        for c in a..k {
            let mut s = 0.0;
            for r in 0..nr {
                s += scratch.b[r * k + a] * scratch.b[r * k + c];
            }
            scratch.gram[a * k + c] = s;
            scratch.gram[c * k + a] = s;
        }
    }
    scratch.rhs.clear();
    scratch.rhs.extend((0..k).map(|c| scratch.b[jrow * k + c]));

    let m = solve_small(&mut scratch.gram, &mut scratch.rhs, k)?;

    // Scatter into the fixed layout.
    let (c1, c2, sc) = j;
    let mut out = vec![0.0; ns + 4];
    for (ci, &(i1, i2, s)) in scratch.cols.iter().enumerate() {
        let v = m[ci];
        if (i1, i2) == (c1, c2) {
            out[s] = v;
        } else if i2 == c2 && i1 + 1 == c1 {
            out[ns] = v; // west of the column zone
        } else if i2 == c2 && i1 == c1 + 1 {
            out[ns + 1] = v; // east
        } else if i1 == c1 && i2 + 1 == c2 {
            out[ns + 2] = v; // south
        } else {
            debug_assert!(i1 == c1 && i2 == c2 + 1 && s == sc);
            out[ns + 3] = v; // north
        }
    }
    Some(out)
}

/// Gaussian elimination with partial pivoting for the k x k normal
/// equations; `a` and `b` are clobbered. None if rank deficient.
fn solve_small(a: &mut [f64], b: &mut [f64], k: usize) -> Option<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = SPAI_PIVOT_TOL * scale;
    for col in 0..k {
        let mut best = col;
        let mut best_val = a[col * k + col].abs();
        for r in col + 1..k {
            let v = a[r * k + col].abs();
            if v > best_val {
                best_val = v;
                best = r;
            }
        }
        if !(best_val > tol) {
            return None;
        }
        if best != col {
            for c in 0..k {
                a.swap(col * k + c, best * k + c);
            }
            b.swap(col, best);
        }
        let pivot = a[col * k + col];
        for r in col + 1..k {
            let f = a[r * k + col] / pivot;
            if f == 0.0 {
                continue;
            }
            for c in col..k {
                a[r * k + c] -= f * a[col * k + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; k];
    for col in (0..k).rev() {
        let mut s = b[col];
        for c in col + 1..k {
            s -= a[col * k + c] * x[c];
        }
        x[col] = s / a[col * k + col];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(x)
}

/// Invert a small row-major n x n matrix by Gauss-Jordan; None if singular.
fn invert_small(block: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut a = block.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let mut best = col;
        let mut best_val = a[col * n + col].abs();
        for r in col + 1..n {
            let v = a[r * n + col].abs();
            if v > best_val {
                best_val = v;
                best = r;
            }
        }
        if !(best_val > 1e-14 * scale.max(1e-300)) {
            return None;
        }
        if best != col {
            for c in 0..n {
                a.swap(col * n + c, best * n + c);
                inv.swap(col * n + c, best * n + c);
            }
        }
        let pivot = a[col * n + col];
        for c in 0..n {
            a[col * n + c] /= pivot;
            inv[col * n + c] /= pivot;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f == 0.0 {
                continue;
            }
            for c in 0..n {
                a[r * n + c] -= f * a[col * n + c];
                inv[r * n + c] -= f * inv[col * n + c];
            }
        }
    }
    Some(inv)
}
