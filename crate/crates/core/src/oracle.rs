//! Independent reference implementations used only by tests and `verify`:
//! dense LU solve, dense least squares, and generators for random small
//! diffusion systems. Intentionally slow and simple; size guards prevent
//! accidental use at production scale. No code is shared with the
//! production solve paths.

use thiserror::Error;

use crate::grid::{Field, GridSpec, Tile};
use crate::operator::{
    build_diffusion_operator, BoundaryCondition, CouplingSpec, FaceCoeffs, OperatorSpec,
};

use rand::Rng;

/// Largest dense system the oracle will touch.
pub const DENSE_GUARD: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("dense system of {0} unknowns exceeds the oracle guard {DENSE_GUARD}")]
    TooLarge(usize),
    #[error("matrix is singular to working tolerance at pivot column {0}")]
    Singular(usize),
    #[error("internal residual check failed: |Ax-b| = {0:.3e} > {1:.3e}")]
    ResidualCheck(f64, f64),
    #[error("least squares needs rows >= cols and cols <= 16, got {rows}x{cols}")]
    BadLstsqShape { rows: usize, cols: usize },
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        DenseMatrix { n_rows, n_cols, data: vec![0.0; n_rows * n_cols] }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n_cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.n_cols + c] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols, "matvec dimension mismatch");
        (0..self.n_rows)
            .map(|r| {
                let row = &self.data[r * self.n_cols..(r + 1) * self.n_cols];
                row.iter().zip(x).map(|(a, b)| a * b).sum()
            })
            .collect()
    }
}

/// An explicit linear system for the direct-solve oracle.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    pub matrix: DenseMatrix,
    pub rhs: Vec<f64>,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// LU with partial pivoting. The solution is residual-checked internally
/// (|Ax - b| <= 1e-10 |b|) before being returned.
pub fn dense_solve(sys: &DenseSystem) -> Result<Vec<f64>, OracleError> {
    let n = sys.matrix.n_rows();
    assert_eq!(n, sys.matrix.n_cols(), "dense_solve needs a square matrix");
    assert_eq!(n, sys.rhs.len(), "rhs length mismatch");
    if n > DENSE_GUARD {
        return Err(OracleError::TooLarge(n));
    }
    let mut a = sys.matrix.data.clone();
    let mut b = sys.rhs.clone();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pivot_tol = 1e-14 * scale;
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
        if best_val <= pivot_tol {
            return Err(OracleError::Singular(col));
        }
        if best != col {
            for c in 0..n {
                a.swap(col * n + c, best * n + c);
            }
            b.swap(col, best);
        }
        let pivot = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / pivot;
            if f == 0.0 {
                continue;
            }
            a[r * n + col] = 0.0;
            for c in col + 1..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for c in col + 1..n {
            s -= a[col * n + c] * x[c];
        }
        x[col] = s / a[col * n + col];
    }
    let ax = sys.matrix.matvec(&x);
    let resid: Vec<f64> = ax.iter().zip(&sys.rhs).map(|(p, q)| p - q).collect();
    let bound = 1e-10 * norm2(&sys.rhs);
    let rn = norm2(&resid);
    if rn > bound && bound > 0.0 {
        return Err(OracleError::ResidualCheck(rn, bound));
    }
    Ok(x)
}

/// Minimize |A m - e|_2 by Householder QR; returns (m, residual norm).
/// Deliberately a different route than the production normal-equations
/// solve, so the two can cross-check each other.
pub fn dense_lstsq(a: &DenseMatrix, e: &[f64]) -> Result<(Vec<f64>, f64), OracleError> {
    let (rows, cols) = (a.n_rows(), a.n_cols());
    assert_eq!(rows, e.len(), "rhs length mismatch");
    if rows < cols || cols > 16 {
        return Err(OracleError::BadLstsqShape { rows, cols });
    }
    let mut q = a.data.clone();
    let mut b = e.to_vec();
    // Householder triangularization applied to [A | b].
    for k in 0..cols {
        let mut norm = 0.0;
        for r in k..rows {
            norm += q[r * cols + k] * q[r * cols + k];
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            return Err(OracleError::Singular(k));
        }
        let alpha = if q[k * cols + k] > 0.0 { -norm } else { norm };
        let mut v = vec![0.0; rows - k];
        v[0] = q[k * cols + k] - alpha;
        for r in k + 1..rows {
            v[r - k] = q[r * cols + k];
        }
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv == 0.0 {
            continue;
        }
        for c in k..cols {
            let mut dot = 0.0;
            for r in k..rows {
                dot += v[r - k] * q[r * cols + c];
            }
            let f = 2.0 * dot / vtv;
            for r in k..rows {
                q[r * cols + c] -= f * v[r - k];
            }
        }
        let mut dot = 0.0;
        for r in k..rows {
            dot += v[r - k] * b[r];
        }
        let f = 2.0 * dot / vtv;
        for r in k..rows {
            b[r] -= f * v[r - k];
        }
    }
    let mut m = vec![0.0; cols];
    for col in (0..cols).rev() {
        let mut s = b[col];
        for c in col + 1..cols {
            s -= q[col * cols + c] * m[c];
        }
        let d = q[col * cols + col];
        if d.abs() < 1e-300 {
            return Err(OracleError::Singular(col));
        }
        m[col] = s / d;
    }
    let residual = norm2(&b[cols..]);
    Ok((m, residual))
}

/// Flatten a tile-interior field in global dictionary order (serial tiles).
pub fn flatten_field(f: &Field) -> Vec<f64> {
    let t = f.tile();
    (0..t.len2).flat_map(|i2| f.interior_row(i2).to_vec()).collect()
}

/// A random well-posed backward-Euler diffusion operator on `grid`:
/// positive face coefficients, moderate dt, optional random zone-local
/// coupling kept weak enough to preserve diagonal dominance.
pub fn random_diffusion_op(rng: &mut impl Rng, grid: &GridSpec, with_coupling: bool) -> OperatorSpec {
    let tile = Tile::whole(grid);
    let ns = grid.nspecies;
    let d0 = rng.gen_range(0.2..2.0);
    let mut fc = FaceCoeffs::uniform(tile, ns, d0);
    for v in fc.values_mut() {
        *v *= rng.gen_range(0.5..1.5);
    }
    let dt = rng.gen_range(0.05..0.4);
    let coupling = if with_coupling && ns > 1 {
        let mut m = vec![0.0; ns * ns];
        for sr in 0..ns {
            for sc in 0..ns {
                m[sr * ns + sc] = if sr != sc { rng.gen_range(-0.3..0.3) } else { rng.gen_range(0.0..0.3) };
            }
        }
        CouplingSpec::Uniform(m)
    } else {
        CouplingSpec::None
    };
    build_diffusion_operator(grid, tile, &fc, dt, &coupling, BoundaryCondition::ZeroFlux)
        .expect("random diffusion operator is well formed")
}

/// A random field over the whole grid with entries in (-1, 1).
pub fn random_field(rng: &mut impl Rng, grid: &GridSpec) -> Field {
    let mut f = Field::zeros(Tile::whole(grid), grid.nspecies);
    f.fill_with(|_, _, _| rng.gen_range(-1.0..1.0));
    f
}
