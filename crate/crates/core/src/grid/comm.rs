//! Tile-worker execution and collectives.
//!
//! One worker runs per tile. Workers are plain threads that communicate
//! through shared mailboxes guarded by barriers, which models message
//! passing: a worker writes outgoing strips or reduction contributions,
//! everyone synchronizes, then each worker reads what its neighbors posted.
//! Reductions sum contributions in ascending tile-id order, so results are
//! identical on every worker and bit-reproducible for a fixed topology.
//!
//! All collectives must be called in the same order by every worker; that is
//! the usual SPMD contract and what guarantees deadlock freedom here.

use std::sync::{Barrier, Mutex};

use thiserror::Error;

use super::{BoundaryCondition, Field, TileTopology};

/// Environment variable capping the number of tile workers a run may launch.
pub const WORKER_CAP_ENV: &str = "RDMINI_MAX_WORKERS";

#[derive(Debug, Error, PartialEq)]
pub enum CommError {
    #[error("topology needs {needed} workers but {cap}={have} caps parallelism", cap = WORKER_CAP_ENV)]
    WorkerCapExceeded { needed: usize, have: usize },
}

/// Maximum worker count allowed by the environment (default: unlimited).
pub fn worker_cap() -> usize {
    std::env::var(WORKER_CAP_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(usize::MAX)
}

/// Check a requested worker count against the environment cap.
pub fn check_worker_cap(needed: usize) -> Result<(), CommError> {
    let have = worker_cap();
    if needed > have {
        Err(CommError::WorkerCapExceeded { needed, have })
    } else {
        Ok(())
    }
}

/// Halo/strip exchange direction, from the local tile's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    West,
    East,
    South,
    North,
}

pub const DIRECTIONS: [Direction; 4] = [Direction::West, Direction::East, Direction::South, Direction::North];

impl Direction {
    pub fn opposite(self) -> Direction {
        match self {
            Direction::West => Direction::East,
            Direction::East => Direction::West,
            Direction::South => Direction::North,
            Direction::North => Direction::South,
        }
    }

    fn index(self) -> usize {
        match self {
            Direction::West => 0,
            Direction::East => 1,
            Direction::South => 2,
            Direction::North => 3,
        }
    }
}

struct Shared {
    n: usize,
    barrier: Barrier,
    reduce_slots: Vec<Mutex<Vec<f64>>>,
    msg_slots: Vec<[Mutex<Vec<f64>>; 4]>,
}

impl Shared {
    fn new(n: usize) -> Self {
        Shared {
            n,
            barrier: Barrier::new(n),
            reduce_slots: (0..n).map(|_| Mutex::new(Vec::new())).collect(),
            msg_slots: (0..n)
                .map(|_| std::array::from_fn(|_| Mutex::new(Vec::new())))
                .collect(),
        }
    }
}

/// Per-worker handle to the collectives of one worker group.
pub struct WorkerComm<'a> {
    rank: usize,
    shared: &'a Shared,
}

impl<'a> WorkerComm<'a> {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_workers(&self) -> usize {
        self.shared.n
    }

    pub fn barrier(&self) {
        self.shared.barrier.wait();
    }

    /// Global reduction: every worker contributes `values` and receives the
    /// elementwise sum over all workers, accumulated in ascending tile id.
    /// One call is one reduction event regardless of how many scalars travel.
    /// Mismatched contribution lengths across workers are a program fault.
    pub fn reduce_sum(&self, values: &[f64]) -> Vec<f64> {
        if self.shared.n == 1 {
            return values.to_vec();
        }
        {
            let mut slot = self.shared.reduce_slots[self.rank].lock().expect("reduce slot");
            slot.clear();
            slot.extend_from_slice(values);
        }
        self.barrier();
        let mut sums = vec![0.0; values.len()];
        for rank in 0..self.shared.n {
            let slot = self.shared.reduce_slots[rank].lock().expect("reduce slot");
            assert_eq!(
                slot.len(),
                values.len(),
                "reduce_sum: worker {rank} contributed {} scalars, expected {}",
                slot.len(),
                values.len()
            );
            for (acc, v) in sums.iter_mut().zip(slot.iter()) {
                *acc += v;
            }
        }
        self.barrier();
        sums
    }

    /// Point-to-point strip exchange with the four axis neighbors.
    ///
    /// `pack(dir)` produces the payload destined to `neighbor(dir)`; after
    /// the exchange `unpack(dir, data)` is invoked with whatever that
    /// neighbor destined to us. Directions without a neighbor are skipped.
    pub fn exchange_strips(
        &self,
        topo: &TileTopology,
        mut pack: impl FnMut(Direction) -> Vec<f64>,
        mut unpack: impl FnMut(Direction, &[f64]),
    ) {
        if self.shared.n == 1 {
            return;
        }
        for dir in DIRECTIONS {
            if topo.neighbor(self.rank, dir).is_some() {
                let payload = pack(dir);
                let mut slot = self.shared.msg_slots[self.rank][dir.index()].lock().expect("msg slot");
                *slot = payload;
            }
        }
        self.barrier();
        for dir in DIRECTIONS {
            if let Some(nb) = topo.neighbor(self.rank, dir) {
                let slot = self.shared.msg_slots[nb][dir.opposite().index()].lock().expect("msg slot");
                unpack(dir, &slot);
            }
        }
        self.barrier();
    }

    /// Fill all four halo edges of `field`: interior edge strips from the
    /// axis neighbors, physical boundaries per `bc` (zero-flux mirrors the
    /// adjacent interior value). Exchanges x1 first, then x2 over the padded
    /// rows so corner cells also become globally consistent.
    pub fn halo_exchange(&self, field: &mut Field, topo: &TileTopology, bc: BoundaryCondition) {
        let t = field.tile();
        debug_assert_eq!(t, topo.tile(self.rank), "field does not belong to this worker's tile");
        let ns = field.nspecies();

        // Phase 1: x1 edges (interior columns, len2 * ns values each).
        let col = |f: &Field, i1: isize| -> Vec<f64> {
            let mut out = Vec::with_capacity(t.len2 * ns);
            for i2 in 0..t.len2 {
                for s in 0..ns {
                    out.push(f.get(i1, i2 as isize, s));
                }
            }
            out
        };
        let mut west_in: Option<Vec<f64>> = None;
        let mut east_in: Option<Vec<f64>> = None;
        self.exchange_strips(
            topo,
            |dir| match dir {
                Direction::West => col(field, 0),
                Direction::East => col(field, t.len1 as isize - 1),
                _ => Vec::new(),
            },
            |dir, data| match dir {
                Direction::West => west_in = Some(data.to_vec()),
                Direction::East => east_in = Some(data.to_vec()),
                _ => {}
            },
        );
        let set_col = |f: &mut Field, i1: isize, data: &[f64]| {
            let mut k = 0;
            for i2 in 0..t.len2 {
                for s in 0..ns {
                    f.set(i1, i2 as isize, s, data[k]);
                    k += 1;
                }
            }
        };
        match (topo.neighbor(self.rank, Direction::West), west_in) {
            (Some(_), Some(data)) => set_col(field, -1, &data),
            _ => fill_physical_col(field, -1, 0, bc),
        }
        match (topo.neighbor(self.rank, Direction::East), east_in) {
            (Some(_), Some(data)) => set_col(field, t.len1 as isize, &data),
            _ => fill_physical_col(field, t.len1 as isize, t.len1 as isize - 1, bc),
        }

        // Phase 2: x2 edges over padded rows, so x1 halo cells (and thus
        // corners) ride along.
        let mut south_in: Option<Vec<f64>> = None;
        let mut north_in: Option<Vec<f64>> = None;
        self.exchange_strips(
            topo,
            |dir| match dir {
                Direction::South => field.padded_row(0).to_vec(),
                Direction::North => field.padded_row(t.len2 as isize - 1).to_vec(),
                _ => Vec::new(),
            },
            |dir, data| match dir {
                Direction::South => south_in = Some(data.to_vec()),
                Direction::North => north_in = Some(data.to_vec()),
                _ => {}
            },
        );
        match (topo.neighbor(self.rank, Direction::South), south_in) {
            (Some(_), Some(data)) => set_padded_row(field, -1, &data),
            _ => fill_physical_row(field, -1, 0, bc),
        }
        match (topo.neighbor(self.rank, Direction::North), north_in) {
            (Some(_), Some(data)) => set_padded_row(field, t.len2 as isize, &data),
            _ => fill_physical_row(field, t.len2 as isize, t.len2 as isize - 1, bc),
        }
    }
}

fn set_padded_row(f: &mut Field, i2: isize, data: &[f64]) {
    let o = f.offset(-1, i2, 0);
    f.raw_mut()[o..o + data.len()].copy_from_slice(data);
}

fn fill_physical_col(f: &mut Field, halo_i1: isize, mirror_i1: isize, bc: BoundaryCondition) {
    let t = f.tile();
    for i2 in 0..t.len2 as isize {
        for s in 0..f.nspecies() {
            let v = match bc {
                BoundaryCondition::ZeroFlux => f.get(mirror_i1, i2, s),
                BoundaryCondition::Dirichlet(v) => v,
            };
            f.set(halo_i1, i2, s, v);
        }
    }
}

fn fill_physical_row(f: &mut Field, halo_i2: isize, mirror_i2: isize, bc: BoundaryCondition) {
    match bc {
        BoundaryCondition::ZeroFlux => {
            let src = f.padded_row(mirror_i2).to_vec();
            set_padded_row(f, halo_i2, &src);
        }
        BoundaryCondition::Dirichlet(v) => {
            let n = f.padded_row(mirror_i2).len();
            set_padded_row(f, halo_i2, &vec![v; n]);
        }
    }
}

/// Run `f` once per tile worker and collect the results in tile-id order.
/// With a single worker the closure runs on the calling thread.
pub fn run_spmd<T, F>(n_workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&WorkerComm) -> T + Sync,
{
    assert!(n_workers >= 1, "need at least one worker");
    let shared = Shared::new(n_workers);
    if n_workers == 1 {
        return vec![f(&WorkerComm { rank: 0, shared: &shared })];
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n_workers)
            .map(|rank| {
                let shared = &shared;
                let f = &f;
                scope.spawn(move || f(&WorkerComm { rank, shared }))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("tile worker panicked"))
            .collect()
    })
}
