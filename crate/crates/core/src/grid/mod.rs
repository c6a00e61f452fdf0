//! Global grid definition, Cartesian tile decomposition, and the tile-worker
//! communication layer (halo exchange, deterministic global reductions).
//!
//! The computational domain is a uniform 2-D grid of `nx1 x nx2` zones with
//! `nspecies` unknowns per zone. For parallel runs the grid is split into
//! `nprx1 x nprx2` rectangular tiles, one worker per tile. Workers interact
//! only through [`WorkerComm`]: edge strips travel via halo exchange and
//! scalars via fixed-order global reductions, so every run of a given
//! topology is bit-reproducible.

mod comm;
mod field;

pub use comm::{
    check_worker_cap, run_spmd, worker_cap, CommError, Direction, WorkerComm, DIRECTIONS,
    WORKER_CAP_ENV,
};
pub use field::{gather, Field, GlobalField};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid extents must be at least 1 zone per direction, got {0}x{1}")]
    EmptyGrid(usize, usize),
    #[error("species count must be at least 1")]
    NoSpecies,
    #[error("zone widths must be positive, got dx1={0}, dx2={1}")]
    NonPositiveWidth(f64, f64),
    #[error("tile counts must be positive, got {0}x{1}")]
    ZeroTiles(usize, usize),
    #[error("{axis}: {tiles} tiles over {zones} zones would create empty tiles")]
    TooManyTiles {
        axis: &'static str,
        tiles: usize,
        zones: usize,
    },
}

/// Uniform global grid: zone counts, species count, zone widths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx1: usize,
    pub nx2: usize,
    pub nspecies: usize,
    pub dx1: f64,
    pub dx2: f64,
}

impl GridSpec {
    pub fn new(nx1: usize, nx2: usize, nspecies: usize, dx1: f64, dx2: f64) -> Result<Self, GridError> {
        if nx1 < 1 || nx2 < 1 {
            return Err(GridError::EmptyGrid(nx1, nx2));
        }
        if nspecies < 1 {
            return Err(GridError::NoSpecies);
        }
        if !(dx1 > 0.0) || !(dx2 > 0.0) {
            return Err(GridError::NonPositiveWidth(dx1, dx2));
        }
        Ok(Self { nx1, nx2, nspecies, dx1, dx2 })
    }

    /// Total number of unknowns nx1 * nx2 * nspecies.
    pub fn unknowns(&self) -> usize {
        self.nx1 * self.nx2 * self.nspecies
    }

    /// Flat index of unknown (i1, i2, s) in dictionary order, species innermost.
    pub fn flat_index(&self, i1: usize, i2: usize, s: usize) -> usize {
        debug_assert!(i1 < self.nx1 && i2 < self.nx2 && s < self.nspecies);
        (i2 * self.nx1 + i1) * self.nspecies + s
    }
}

/// One tile of the decomposition: half-open extents in global zone indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub id: usize,
    pub start1: usize,
    pub len1: usize,
    pub start2: usize,
    pub len2: usize,
}

impl Tile {
    /// Tile covering the whole grid (serial mode).
    pub fn whole(grid: &GridSpec) -> Self {
        Tile { id: 0, start1: 0, len1: grid.nx1, start2: 0, len2: grid.nx2 }
    }

    pub fn zones(&self) -> usize {
        self.len1 * self.len2
    }
}

/// Cartesian tile decomposition of a grid: `nprx1 x nprx2` tiles, id-ordered
/// row-major (tile coordinate t2 outer, t1 inner).
#[derive(Debug, Clone)]
pub struct TileTopology {
    pub grid: GridSpec,
    pub nprx1: usize,
    pub nprx2: usize,
    tiles: Vec<Tile>,
}

/// Split `nx` zones over `npr` tiles; the first `nx % npr` tiles get one
/// extra zone. Returns (start, len) per tile.
fn split_extents(nx: usize, npr: usize) -> Vec<(usize, usize)> {
    let base = nx / npr;
    let rem = nx % npr;
    let mut out = Vec::with_capacity(npr);
    let mut start = 0;
    for t in 0..npr {
        let len = base + usize::from(t < rem);
        out.push((start, len));
        start += len;
    }
    out
}

/// Decompose `grid` into `nprx1 x nprx2` tiles with remainder-first balancing.
pub fn decompose(grid: &GridSpec, nprx1: usize, nprx2: usize) -> Result<TileTopology, GridError> {
    if nprx1 == 0 || nprx2 == 0 {
        return Err(GridError::ZeroTiles(nprx1, nprx2));
    }
    if nprx1 > grid.nx1 {
        return Err(GridError::TooManyTiles { axis: "x1", tiles: nprx1, zones: grid.nx1 });
    }
    if nprx2 > grid.nx2 {
        return Err(GridError::TooManyTiles { axis: "x2", tiles: nprx2, zones: grid.nx2 });
    }
    let ext1 = split_extents(grid.nx1, nprx1);
    let ext2 = split_extents(grid.nx2, nprx2);
    let mut tiles = Vec::with_capacity(nprx1 * nprx2);
    for t2 in 0..nprx2 {
        for t1 in 0..nprx1 {
            let (start1, len1) = ext1[t1];
            let (start2, len2) = ext2[t2];
            tiles.push(Tile { id: t2 * nprx1 + t1, start1, len1, start2, len2 });
        }
    }
    Ok(TileTopology { grid: *grid, nprx1, nprx2, tiles })
}

impl TileTopology {
    /// Serial topology: a single tile covering the grid.
    pub fn serial(grid: &GridSpec) -> Self {
        decompose(grid, 1, 1).expect("1x1 decomposition is always valid")
    }

    pub fn n_workers(&self) -> usize {
        self.tiles.len()
    }

    pub fn tile(&self, id: usize) -> Tile {
        self.tiles[id]
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    fn tile_coords(&self, id: usize) -> (usize, usize) {
        (id % self.nprx1, id / self.nprx1)
    }

    /// Neighbor tile id across `dir`, or None at a physical boundary.
    pub fn neighbor(&self, id: usize, dir: Direction) -> Option<usize> {
        let (t1, t2) = self.tile_coords(id);
        let (n1, n2) = match dir {
            Direction::West => (t1.checked_sub(1)?, t2),
            Direction::East => {
                if t1 + 1 >= self.nprx1 {
                    return None;
                }
                (t1 + 1, t2)
            }
            Direction::South => (t1, t2.checked_sub(1)?),
            Direction::North => {
                if t2 + 1 >= self.nprx2 {
                    return None;
                }
                (t1, t2 + 1)
            }
        };
        Some(n2 * self.nprx1 + n1)
    }
}

/// Boundary condition applied at physical (global) domain edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryCondition {
    /// Reflective: zero flux through the boundary face. Halo cells mirror the
    /// adjacent interior value; the operator folds the out-of-domain
    /// neighbor coefficient into the diagonal.
    ZeroFlux,
    /// Fixed boundary value; the operator moves the out-of-domain neighbor
    /// term to the right-hand side.
    Dirichlet(f64),
}
