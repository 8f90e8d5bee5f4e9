//! Voxel hash from integer cell coordinates to point ids.

use rustc_hash::FxHashMap;

use super::PointId;
use crate::geometry::Point3;

/// Integer voxel coordinate, `floor(P / cell_size)` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: i64,
    pub y: i64,
    pub z: i64,
}

impl Cell {
    #[inline]
    pub fn of(p: &Point3, cell_size: f64) -> Self {
        Self { x: (p.x / cell_size).floor() as i64, y: (p.y / cell_size).floor() as i64, z: (p.z / cell_size).floor() as i64 }
    }
}

/// A point id with a copy of its position, so scans need not touch the store.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entry {
    pub id: PointId,
    pub position: Point3,
}

#[derive(Clone, Debug)]
pub struct VoxelIndex {
    cell_size: f64,
    cells: FxHashMap<Cell, Vec<Entry>>,
    /// Conservative bounds over every cell ever occupied.
    bounds: Option<(Cell, Cell)>,
}

impl VoxelIndex {
    pub fn new(cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell_size must be positive");
        Self { cell_size, cells: FxHashMap::default(), bounds: None }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell_of(&self, p: &Point3) -> Cell {
        Cell::of(p, self.cell_size)
    }

    pub fn insert(&mut self, p: &Point3, id: PointId) {
        let cell = self.cell_of(p);
        self.cells.entry(cell).or_default().push(Entry { id, position: *p });
        self.bounds = Some(match self.bounds {
            None => (cell, cell),
            Some((lo, hi)) => {
                (Cell { x: lo.x.min(cell.x), y: lo.y.min(cell.y), z: lo.z.min(cell.z) }, Cell { x: hi.x.max(cell.x), y: hi.y.max(cell.y), z: hi.z.max(cell.z) })
            }
        });
    }

    /// Removes `id` from the cell containing `p`. Returns whether it was present.
    pub fn remove(&mut self, p: &Point3, id: PointId) -> bool {
        let cell = self.cell_of(p);
        let Some(ids) = self.cells.get_mut(&cell) else { return false };
        let Some(pos) = ids.iter().position(|e| e.id == id) else { return false };
        ids.swap_remove(pos);
        if ids.is_empty() {
            self.cells.remove(&cell);
        }
        true
    }

    #[inline]
    pub fn get(&self, cell: &Cell) -> Option<&[Entry]> {
        self.cells.get(cell).map(Vec::as_slice)
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Cell, &Vec<Entry>)> {
        self.cells.iter()
    }

    pub fn bounds(&self) -> Option<(Cell, Cell)> {
        self.bounds
    }

    /// Total ids over all cells.
    pub fn len(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}
