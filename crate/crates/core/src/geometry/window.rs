use super::voxel::{check_coords, dense_ids, Cell, Point3};
use crate::error::{Error, Result};
use crate::numcore::SegmentMap;

/// Window geometry for one attention layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    /// Base window edge (m); the point branch attends inside these cubes.
    pub base: f64,
    /// Integer edge ratio of the voxel window to the base window.
    pub ratio: u32,
    /// Voxel edge (m) used to pool voxel tokens.
    pub voxel: f64,
    /// Offset (m) added to every coordinate before partitioning; zero for
    /// unshifted windows.
    pub shift: f64,
}

impl WindowSpec {
    pub fn voxel_window(&self) -> f64 {
        self.base * self.ratio as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base > 0.0 && self.voxel > 0.0) || !self.base.is_finite() || !self.voxel.is_finite() {
            return Err(Error::Parameter(format!(
                "window edges must be positive (base {}, voxel {})",
                self.base, self.voxel
            )));
        }
        if self.ratio == 0 {
            return Err(Error::Parameter("voxel window ratio must be >= 1".into()));
        }
        if !self.shift.is_finite() {
            return Err(Error::Parameter("window shift must be finite".into()));
        }
        Ok(())
    }
}

/// Point-to-window and point-to-voxel assignment for one layer.
///
/// Voxel windows are built from base cells by integer division, so base
/// windows nest exactly inside voxel windows. A voxel is a global grid cell
/// intersected with a voxel window; voxel ids are ordered by
/// `(voxel window cell, voxel cell)` so every voxel window owns a contiguous
/// id range.
///
/// Segment members are visited in lexicographic coordinate order, which makes
/// every reduction over a window independent of the input point order.
#[derive(Debug, Clone)]
pub struct WindowIndex {
    pub spec: WindowSpec,
    pub base_window: Vec<usize>,
    pub voxel_window: Vec<usize>,
    pub voxel: Vec<usize>,
    /// Voxel window owning each voxel.
    pub voxel_owner: Vec<usize>,
    pub base_cells: Vec<Cell>,
    pub voxel_window_cells: Vec<Cell>,
    /// Points grouped by base window.
    pub base_segments: SegmentMap,
    /// Points grouped by voxel window.
    pub voxel_window_segments: SegmentMap,
    /// Points grouped by voxel.
    pub voxel_segments: SegmentMap,
    /// Voxels grouped by voxel window.
    pub voxel_token_segments: SegmentMap,
}

/// Indices sorted by lexicographic coordinate, ties by index.
pub fn lexicographic_order(coords: &[Point3]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..coords.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&coords[a], &coords[b]);
        p[0].total_cmp(&q[0])
            .then(p[1].total_cmp(&q[1]))
            .then(p[2].total_cmp(&q[2]))
            .then(a.cmp(&b))
    });
    order
}

impl WindowIndex {
    pub fn build(coords: &[Point3], spec: WindowSpec) -> Result<Self> {
        spec.validate()?;
        check_coords(coords)?;
        let shifted: Vec<Point3> = coords
            .iter()
            .map(|p| [p[0] + spec.shift, p[1] + spec.shift, p[2] + spec.shift])
            .collect();
        let r = spec.ratio as i64;
        let base_cells: Vec<Cell> = shifted.iter().map(|p| super::cell_of(p, spec.base)).collect();
        let vw_cells: Vec<Cell> = base_cells
            .iter()
            .map(|c| [c[0].div_euclid(r), c[1].div_euclid(r), c[2].div_euclid(r)])
            .collect();
        let voxel_keys: Vec<(Cell, Cell)> = shifted
            .iter()
            .zip(&vw_cells)
            .map(|(p, w)| (*w, super::cell_of(p, spec.voxel)))
            .collect();

        let (base_window, base_unique) = dense_ids(&base_cells);
        let (voxel_window, vw_unique) = dense_ids(&vw_cells);
        let (voxel, voxel_unique) = dense_ids(&voxel_keys);
        let voxel_owner: Vec<usize> = voxel_unique
            .iter()
            .map(|(w, _)| vw_unique.binary_search(w).expect("owner window exists"))
            .collect();

        let visit = lexicographic_order(coords);
        let base_segments = SegmentMap::with_visit_order(base_window.clone(), base_unique.len(), &visit)?;
        let voxel_window_segments =
            SegmentMap::with_visit_order(voxel_window.clone(), vw_unique.len(), &visit)?;
        let voxel_segments = SegmentMap::with_visit_order(voxel.clone(), voxel_unique.len(), &visit)?;
        let voxel_token_segments = SegmentMap::from_ids(voxel_owner.clone(), vw_unique.len())?;

        Ok(WindowIndex {
            spec,
            base_window,
            voxel_window,
            voxel,
            voxel_owner,
            base_cells: base_unique,
            voxel_window_cells: vw_unique,
            base_segments,
            voxel_window_segments,
            voxel_segments,
            voxel_token_segments,
        })
    }

    pub fn num_points(&self) -> usize {
        self.base_window.len()
    }

    pub fn num_base_windows(&self) -> usize {
        self.base_cells.len()
    }

    pub fn num_voxel_windows(&self) -> usize {
        self.voxel_window_cells.len()
    }

    pub fn num_voxels(&self) -> usize {
        self.voxel_owner.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> WindowSpec {
        WindowSpec {
            base: 0.16,
            ratio: 2,
            voxel: 0.08,
            shift: 0.0,
        }
    }

    #[test]
    fn single_point() {
        let idx = WindowIndex::build(&[[1.0, 2.0, 3.0]], spec()).unwrap();
        assert_eq!(idx.num_base_windows(), 1);
        assert_eq!(idx.num_voxel_windows(), 1);
        assert_eq!(idx.num_voxels(), 1);
        assert_eq!((idx.base_window[0], idx.voxel_window[0], idx.voxel[0]), (0, 0, 0));
    }

    #[test]
    fn one_base_cube() {
        let pts: Vec<Point3> = (0..50)
            .map(|i| {
                let t = i as f64 / 50.0;
                [0.001 + 0.158 * t, 0.001 + 0.158 * (1.0 - t), 0.001 + 0.158 * (t * 7.0).fract()]
            })
            .collect();
        let idx = WindowIndex::build(&pts, spec()).unwrap();
        assert_eq!(idx.num_base_windows(), 1);
        assert_eq!(idx.num_voxel_windows(), 1);
        assert!(idx.num_voxels() <= 8);
    }

    #[test]
    fn shift_moves_boundaries() {
        let pts = [[0.15, 0.0, 0.0], [0.17, 0.0, 0.0]];
        let plain = WindowIndex::build(&pts, spec()).unwrap();
        assert_eq!(plain.num_base_windows(), 2);
        let shifted = WindowIndex::build(&pts, WindowSpec { shift: 0.08, ..spec() }).unwrap();
        assert_eq!(shifted.num_base_windows(), 1);
    }

    #[test]
    fn invalid_spec() {
        assert!(WindowIndex::build(&[[0.0; 3]], WindowSpec { ratio: 0, ..spec() }).is_err());
        assert!(WindowIndex::build(&[[0.0; 3]], WindowSpec { voxel: 0.0, ..spec() }).is_err());
    }
}
