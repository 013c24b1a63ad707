use std::collections::HashMap;

use crate::error::{Error, Result};

/// Point in meters.
pub type Point3 = [f64; 3];

/// Integer grid cell.
pub type Cell = [i64; 3];

#[inline]
pub fn cell_of(p: &Point3, edge: f64) -> Cell {
    [
        (p[0] / edge).floor() as i64,
        (p[1] / edge).floor() as i64,
        (p[2] / edge).floor() as i64,
    ]
}

/// Dense ids for a set of cell keys, numbered in lexicographic key order.
pub(crate) fn dense_ids<K: Ord + Copy + std::hash::Hash>(keys: &[K]) -> (Vec<usize>, Vec<K>) {
    let mut unique: Vec<K> = keys.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let lookup: HashMap<K, usize> = unique.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    (keys.iter().map(|k| lookup[k]).collect(), unique)
}

/// Per-point cell ids on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAssignment {
    /// Dense id per input point.
    pub ids: Vec<usize>,
    /// Cell coordinates per id, in lexicographic order.
    pub cells: Vec<Cell>,
}

impl CellAssignment {
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }
}

pub(crate) fn check_coords(coords: &[Point3]) -> Result<()> {
    if coords.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Parameter("coordinates must be finite".into()))
    }
}

/// Assigns every point to the cube `floor(p / edge)` and numbers the occupied
/// cubes densely. Equal cells get equal ids; ids follow lexicographic cell order.
pub fn voxel_assign(coords: &[Point3], edge: f64) -> Result<CellAssignment> {
    if !(edge > 0.0) || !edge.is_finite() {
        return Err(Error::Parameter(format!("cell edge must be positive, got {edge}")));
    }
    check_coords(coords)?;
    let cells: Vec<Cell> = coords.iter().map(|p| cell_of(p, edge)).collect();
    let (ids, cells) = dense_ids(&cells);
    Ok(CellAssignment { ids, cells })
}
