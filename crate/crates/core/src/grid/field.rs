//! Tile-local field storage with a one-cell halo ring.

use super::{GridSpec, Tile, TileTopology};

/// Tile-local unknowns indexed (i1, i2, s), species innermost, plus a halo
/// ring of width 1 in i1 and i2. Interior indices run 0..len; halo indices
/// are -1 and len.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    tile: Tile,
    nspecies: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(tile: Tile, nspecies: usize) -> Self {
        assert!(nspecies >= 1, "field needs at least one species");
        let n = (tile.len1 + 2) * (tile.len2 + 2) * nspecies;
        Field { tile, nspecies, data: vec![0.0; n] }
    }

    pub fn tile(&self) -> Tile {
        self.tile
    }

    pub fn nspecies(&self) -> usize {
        self.nspecies
    }

    /// Number of interior unknowns on this tile.
    pub fn interior_len(&self) -> usize {
        self.tile.len1 * self.tile.len2 * self.nspecies
    }

    /// Values per padded row (halo cells included).
    #[inline]
    pub fn pitch(&self) -> usize {
        (self.tile.len1 + 2) * self.nspecies
    }

    /// Flat offset of (i1, i2, s); i1 in -1..=len1, i2 in -1..=len2.
    #[inline]
    pub fn offset(&self, i1: isize, i2: isize, s: usize) -> usize {
        debug_assert!(i1 >= -1 && i1 <= self.tile.len1 as isize);
        debug_assert!(i2 >= -1 && i2 <= self.tile.len2 as isize);
        debug_assert!(s < self.nspecies);
        ((i2 + 1) as usize * (self.tile.len1 + 2) + (i1 + 1) as usize) * self.nspecies + s
    }

    #[inline]
    pub fn get(&self, i1: isize, i2: isize, s: usize) -> f64 {
        self.data[self.offset(i1, i2, s)]
    }

    #[inline]
    pub fn set(&mut self, i1: isize, i2: isize, s: usize, v: f64) {
        let o = self.offset(i1, i2, s);
        self.data[o] = v;
    }

    /// Contiguous interior span of row i2: zones 0..len1, all species.
    pub fn interior_row(&self, i2: usize) -> &[f64] {
        let o = self.offset(0, i2 as isize, 0);
        &self.data[o..o + self.tile.len1 * self.nspecies]
    }

    pub fn interior_row_mut(&mut self, i2: usize) -> &mut [f64] {
        let o = self.offset(0, i2 as isize, 0);
        let n = self.tile.len1 * self.nspecies;
        &mut self.data[o..o + n]
    }

    /// Padded row i2 starting at the west halo cell (len1 + 2 zones).
    pub fn padded_row(&self, i2: isize) -> &[f64] {
        let o = self.offset(-1, i2, 0);
        &self.data[o..o + (self.tile.len1 + 2) * self.nspecies]
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Populate the interior from a function of global zone index and species.
    pub fn fill_with(&mut self, mut f: impl FnMut(usize, usize, usize) -> f64) {
        for i2 in 0..self.tile.len2 {
            for i1 in 0..self.tile.len1 {
                for s in 0..self.nspecies {
                    let v = f(self.tile.start1 + i1, self.tile.start2 + i2, s);
                    self.set(i1 as isize, i2 as isize, s, v);
                }
            }
        }
    }

    /// Copy interior values from another field of the same shape.
    pub fn copy_interior_from(&mut self, other: &Field) {
        assert_eq!(self.tile, other.tile, "field shape mismatch");
        assert_eq!(self.nspecies, other.nspecies, "field shape mismatch");
        for i2 in 0..self.tile.len2 {
            let o = self.offset(0, i2 as isize, 0);
            let n = self.tile.len1 * self.nspecies;
            let src = other.interior_row(i2);
            self.data[o..o + n].copy_from_slice(src);
        }
    }

    /// Sum of interior values in fixed (i2, i1, s) order.
    pub fn sum_interior(&self) -> f64 {
        let mut acc = 0.0;
        for i2 in 0..self.tile.len2 {
            for &v in self.interior_row(i2) {
                acc += v;
            }
        }
        acc
    }

    /// Minimum interior value.
    pub fn min_interior(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i2 in 0..self.tile.len2 {
            for &v in self.interior_row(i2) {
                m = m.min(v);
            }
        }
        m
    }

    pub fn interior_is_finite(&self) -> bool {
        (0..self.tile.len2).all(|i2| self.interior_row(i2).iter().all(|v| v.is_finite()))
    }

    /// Extract the tile interior from a global field.
    pub fn from_global(global: &GlobalField, tile: Tile) -> Self {
        let mut f = Field::zeros(tile, global.nspecies);
        f.fill_with(|g1, g2, s| global.get(g1, g2, s));
        f
    }
}

/// Whole-grid field without halo, in dictionary order (i2 outer, i1,
/// species innermost) -- the flattening the banded matrix oracle uses.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalField {
    pub nx1: usize,
    pub nx2: usize,
    pub nspecies: usize,
    pub data: Vec<f64>,
}

impl GlobalField {
    pub fn zeros(grid: &GridSpec) -> Self {
        GlobalField {
            nx1: grid.nx1,
            nx2: grid.nx2,
            nspecies: grid.nspecies,
            data: vec![0.0; grid.unknowns()],
        }
    }

    pub fn from_vec(grid: &GridSpec, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), grid.unknowns(), "flat data length mismatch");
        GlobalField { nx1: grid.nx1, nx2: grid.nx2, nspecies: grid.nspecies, data }
    }

    #[inline]
    pub fn index(&self, i1: usize, i2: usize, s: usize) -> usize {
        debug_assert!(i1 < self.nx1 && i2 < self.nx2 && s < self.nspecies);
        (i2 * self.nx1 + i1) * self.nspecies + s
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize, s: usize) -> f64 {
        self.data[self.index(i1, i2, s)]
    }

    #[inline]
    pub fn set(&mut self, i1: usize, i2: usize, s: usize, v: f64) {
        let i = self.index(i1, i2, s);
        self.data[i] = v;
    }

    pub fn fill_with(&mut self, mut f: impl FnMut(usize, usize, usize) -> f64) {
        for i2 in 0..self.nx2 {
            for i1 in 0..self.nx1 {
                for s in 0..self.nspecies {
                    let v = f(i1, i2, s);
                    self.set(i1, i2, s, v);
                }
            }
        }
    }
}

/// Stitch per-tile interiors (in tile-id order) back into a global field.
pub fn gather(fields: &[Field], topo: &TileTopology) -> GlobalField {
    assert_eq!(fields.len(), topo.n_workers(), "one field per tile expected");
    let mut global = GlobalField::zeros(&topo.grid);
    for f in fields {
        let t = f.tile();
        assert_eq!(t, topo.tile(t.id), "field tile does not match topology");
        for i2 in 0..t.len2 {
            let row = f.interior_row(i2);
            let g = global.index(t.start1, t.start2 + i2, 0);
            global.data[g..g + row.len()].copy_from_slice(row);
        }
    }
    global
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::decompose;

    #[test]
    fn interior_rows_are_contiguous() {
        let grid = GridSpec::new(4, 3, 2, 1.0, 1.0).unwrap();
        let mut f = Field::zeros(Tile::whole(&grid), 2);
        f.fill_with(|i1, i2, s| (i1 * 100 + i2 * 10 + s) as f64);
        let row = f.interior_row(1);
        assert_eq!(row.len(), 8);
        assert_eq!(row[0], 10.0); // (0,1,0)
        assert_eq!(row[1], 11.0); // (0,1,1)
        assert_eq!(row[2], 110.0); // (1,1,0)
    }

    #[test]
    fn gather_reassembles_decomposed_field() {
        let grid = GridSpec::new(7, 5, 2, 1.0, 1.0).unwrap();
        let topo = decompose(&grid, 3, 2).unwrap();
        let formula = |i1: usize, i2: usize, s: usize| (i1 + 10 * i2) as f64 + 0.5 * s as f64;
        let fields: Vec<Field> = topo
            .tiles()
            .iter()
            .map(|&t| {
                let mut f = Field::zeros(t, 2);
                f.fill_with(|a, b, s| formula(a, b, s));
                f
            })
            .collect();
        let global = gather(&fields, &topo);
        for i2 in 0..5 {
            for i1 in 0..7 {
                for s in 0..2 {
                    assert_eq!(global.get(i1, i2, s), formula(i1, i2, s));
                }
            }
        }
    }

    #[test]
    fn halo_offsets_surround_interior() {
        let grid = GridSpec::new(3, 3, 1, 1.0, 1.0).unwrap();
        let mut f = Field::zeros(Tile::whole(&grid), 1);
        f.set(-1, 0, 0, 7.0);
        f.set(3, 2, 0, 8.0);
        assert_eq!(f.get(-1, 0, 0), 7.0);
        assert_eq!(f.get(3, 2, 0), 8.0);
        assert_eq!(f.sum_interior(), 0.0);
    }
}
