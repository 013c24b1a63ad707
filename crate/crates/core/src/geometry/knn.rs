use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::sampling::dist2;
use super::voxel::{check_coords, Point3};
use crate::error::{Error, Result};
use crate::numcore::{DiffTensor, Scalar};

/// Candidate ordered by squared distance, then index.
#[derive(Debug, Clone, Copy)]
struct Cand(f64, usize);

impl PartialEq for Cand {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Cand {}
impl PartialOrd for Cand {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Cand {
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.total_cmp(&o.0).then(self.1.cmp(&o.1))
    }
}

/// Uniform-grid index for exact k-nearest-neighbour queries.
///
/// Cells are searched in Chebyshev rings around the query cell. After ring
/// `r` every unvisited point is at least `r * cell` away, which bounds the
/// search.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Point3>,
    origin: Point3,
    cell: f64,
    dims: [i64; 3],
    starts: Vec<usize>,
    entries: Vec<usize>,
}

impl NeighborIndex {
    pub fn new(points: &[Point3]) -> Result<Self> {
        check_coords(points)?;
        let n = points.len();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if n == 0 {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let target = (n / 2).max(1) as f64;
        let count = |s: f64| -> f64 { ext.iter().map(|e| (e / s).floor() + 1.0).product() };
        // Smallest cell edge whose grid has at most ~n/2 cells.
        let max_ext = ext.iter().cloned().fold(0.0, f64::max).max(1e-9);
        let (mut a, mut b) = (max_ext * 1e-6, max_ext * 2.0);
        for _ in 0..60 {
            let mid = 0.5 * (a + b);
            if count(mid) > target {
                a = mid;
            } else {
                b = mid;
            }
        }
        let cell = b;
        let dims = [0, 1, 2].map(|a| (ext[a] / cell).floor() as i64 + 1);
        let ncells = (dims[0] * dims[1] * dims[2]) as usize;
        let cell_id = |p: &Point3| -> usize {
            let c = [0, 1, 2].map(|a| (((p[a] - lo[a]) / cell).floor() as i64).clamp(0, dims[a] - 1));
            ((c[0] * dims[1] + c[1]) * dims[2] + c[2]) as usize
        };
        let mut starts = vec![0usize; ncells + 1];
        let ids: Vec<usize> = points.iter().map(cell_id).collect();
        for &c in &ids {
            starts[c + 1] += 1;
        }
        for c in 0..ncells {
            starts[c + 1] += starts[c];
        }
        let mut cursor = starts.clone();
        let mut entries = vec![0usize; n];
        for (i, &c) in ids.iter().enumerate() {
            entries[cursor[c]] = i;
            cursor[c] += 1;
        }
        Ok(NeighborIndex {
            points: points.to_vec(),
            origin: lo,
            cell,
            dims,
            starts,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points to `q` as `(squared distance, index)`, sorted by
    /// distance then index.
    pub fn nearest(&self, q: &Point3, k: usize) -> Vec<(f64, usize)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let qc = [0, 1, 2].map(|a| ((q[a] - self.origin[a]) / self.cell).floor() as i64);
        let r_max = (0..3)
            .map(|a| qc[a].abs().max((qc[a] - (self.dims[a] - 1)).abs()))
            .max()
            .unwrap_or(0);
        // Rings closer than the grid box are empty.
        let r_min = (0..3)
            .map(|a| (-qc[a]).max(qc[a] - (self.dims[a] - 1)).max(0))
            .max()
            .unwrap_or(0);
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        let mut r = r_min;
        loop {
            self.visit_ring(qc, r, |i| {
                let c = Cand(dist2(&self.points[i], q), i);
                if heap.len() < k {
                    heap.push(c);
                } else if c < *heap.peek().expect("full heap") {
                    heap.pop();
                    heap.push(c);
                }
            });
            if r >= r_max {
                break;
            }
            if heap.len() == k {
                let bound = r as f64 * self.cell;
                if heap.peek().expect("full heap").0 < bound * bound {
                    break;
                }
            }
            r += 1;
        }
        let mut out: Vec<(f64, usize)> = heap.into_iter().map(|c| (c.0, c.1)).collect();
        out.sort_by_key(|a| Cand(a.0, a.1));
        out
    }

    fn visit_ring(&self, qc: [i64; 3], r: i64, mut f: impl FnMut(usize)) {
        let range = |a: usize| ((qc[a] - r).max(0), (qc[a] + r).min(self.dims[a] - 1));
        let (x0, x1) = range(0);
        let (y0, y1) = range(1);
        let (z0, z1) = range(2);
        for x in x0..=x1 {
            let ex = (x - qc[0]).abs() == r;
            for y in y0..=y1 {
                let exy = ex || (y - qc[1]).abs() == r;
                let mut visit_cell = |z: i64| {
                    let c = ((x * self.dims[1] + y) * self.dims[2] + z) as usize;
                    for &i in &self.entries[self.starts[c]..self.starts[c + 1]] {
                        f(i);
                    }
                };
                if exy {
                    for z in z0..=z1 {
                        visit_cell(z);
                    }
                } else {
                    for z in [qc[2] - r, qc[2] + r] {
                        if z >= z0 && z <= z1 && (r > 0 || z == qc[2]) {
                            visit_cell(z);
                        }
                    }
                    if r == 0 {
                        break;
                    }
                }
            }
        }
    }
}

/// Result of a batched k-nearest-neighbour query, row-major `[queries, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    pub k: usize,
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

/// Exact k nearest neighbours of every query among `coords`, ordered by
/// Euclidean distance with ties broken by lowest index.
pub fn knn(coords: &[Point3], queries: &[Point3], k: usize) -> Result<Knn> {
    if k > coords.len() {
        return Err(Error::Parameter(format!(
            "k={k} exceeds {} data points",
            coords.len()
        )));
    }
    check_coords(queries)?;
    let index = NeighborIndex::new(coords)?;
    let mut indices = Vec::with_capacity(queries.len() * k);
    let mut distances = Vec::with_capacity(queries.len() * k);
    for q in queries {
        for (d2, i) in index.nearest(q, k) {
            indices.push(i);
            distances.push(d2.sqrt());
        }
    }
    Ok(Knn {
        k,
        indices,
        distances,
    })
}

/// Inverse-distance weights over the three nearest coarse points of every
/// fine point, `w ∝ 1 / (d + 1e-8)`, normalized to sum to one.
#[derive(Debug, Clone)]
pub struct Interpolation {
    pub k: usize,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Interpolation {
    pub fn new(coarse: &[Point3], fine: &[Point3]) -> Result<Self> {
        if coarse.is_empty() {
            return Err(Error::Parameter("interpolation needs a nonempty coarse set".into()));
        }
        let nn = knn(coarse, fine, coarse.len().min(3))?;
        let mut weights = Vec::with_capacity(nn.distances.len());
        for row in nn.distances.chunks(nn.k) {
            let inv: Vec<f64> = row.iter().map(|d| 1.0 / (d + 1e-8)).collect();
            let s: f64 = inv.iter().sum();
            weights.extend(inv.iter().map(|w| w / s));
        }
        Ok(Interpolation {
            k: nn.k,
            indices: nn.indices,
            weights,
        })
    }

    pub fn apply<T: Scalar>(&self, coarse_feats: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        let w: Vec<T> = self.weights.iter().map(|&v| T::of(v)).collect();
        coarse_feats.weighted_gather(&self.indices, &w, self.k)
    }
}

/// Features of `fine` points interpolated from their three nearest `coarse` points.
pub fn interpolate_3nn<T: Scalar>(
    coarse: &[Point3],
    coarse_feats: &DiffTensor<T>,
    fine: &[Point3],
) -> Result<DiffTensor<T>> {
    Interpolation::new(coarse, fine)?.apply(coarse_feats)
}
