use super::knn::Interpolation;
use super::voxel::{check_coords, Point3};
use super::window::lexicographic_order;
use crate::error::{Error, Result};

#[inline]
pub(crate) fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Index of the lexicographically smallest coordinate (lowest index on ties).
pub fn default_start(coords: &[Point3]) -> Option<usize> {
    lexicographic_order(coords).first().copied()
}

/// Greedy max-min farthest point sampling.
///
/// Starts from `start` (the lexicographically smallest point when `None`) and
/// repeatedly adds the point whose distance to the selected set is largest,
/// breaking ties by lowest index. Returned indices are in selection order.
pub fn farthest_point_sample(coords: &[Point3], m: usize, start: Option<usize>) -> Result<Vec<usize>> {
    let n = coords.len();
    if m == 0 || m > n {
        return Err(Error::Parameter(format!("cannot select {m} of {n} points")));
    }
    check_coords(coords)?;
    let first = match start {
        Some(s) if s >= n => {
            return Err(Error::Index {
                op: "farthest_point_sample",
                index: s,
                bound: n,
            })
        }
        Some(s) => s,
        None => default_start(coords).expect("nonempty"),
    };
    let mut selected = Vec::with_capacity(m);
    // Negative marks an already selected point.
    let mut min_d = vec![f64::INFINITY; n];
    let mut last = first;
    selected.push(first);
    min_d[first] = -1.0;
    while selected.len() < m {
        let lp = coords[last];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in coords.iter().enumerate() {
            if min_d[i] < 0.0 {
                continue;
            }
            let d = dist2(p, &lp);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        selected.push(best);
        min_d[best] = -1.0;
        last = best;
    }
    Ok(selected)
}

/// Downsampled point set plus 3-NN interpolation weights from the selected
/// points back to every input point.
#[derive(Debug, Clone)]
pub struct SamplingResult {
    pub selected: Vec<usize>,
    pub interpolation: Interpolation,
}

impl SamplingResult {
    /// Samples `ceil(n / ratio)` points with the default start rule.
    pub fn downsample(coords: &[Point3], ratio: usize) -> Result<Self> {
        if ratio == 0 {
            return Err(Error::Parameter("downsample ratio must be >= 1".into()));
        }
        let m = coords.len().div_ceil(ratio);
        let selected = farthest_point_sample(coords, m, None)?;
        let coarse: Vec<Point3> = selected.iter().map(|&i| coords[i]).collect();
        let interpolation = Interpolation::new(&coarse, coords)?;
        Ok(SamplingResult {
            selected,
            interpolation,
        })
    }
}
