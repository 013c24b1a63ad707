//! Synthetic indoor rooms with objects of very different sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::cloud::{PointCloud, SizeClass, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::geometry::Point3;

const FLOOR: usize = 0;
const WALL: usize = 1;
const CEILING: usize = 2;
const TABLE: usize = 3;
const BOARD: usize = 4;
const CHAIR: usize = 5;
const CLUTTER: usize = 6;

/// Base color per class. Per-object tints and per-point noise are added.
const PALETTE: [[f64; 3]; NUM_CLASSES] = [
    [0.55, 0.45, 0.35],
    [0.85, 0.85, 0.80],
    [0.95, 0.95, 0.95],
    [0.60, 0.35, 0.20],
    [0.20, 0.45, 0.30],
    [0.25, 0.25, 0.60],
    [0.90, 0.80, 0.15],
];

/// Layout and sampling parameters of a generated room.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Room size along x, y, z (m).
    pub extent: [f64; 3],
    /// Total number of sampled points.
    pub points: usize,
    pub walls: bool,
    pub ceiling: bool,
    /// Inclusive object count ranges.
    pub tables: (usize, usize),
    pub boards: (usize, usize),
    pub chairs: (usize, usize),
    pub clutter: (usize, usize),
    /// Gaussian coordinate noise (m).
    pub noise: f64,
    /// Gaussian color noise.
    pub color_noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            extent: [4.0, 3.5, 2.6],
            points: 150_000,
            walls: true,
            ceiling: true,
            tables: (1, 2),
            boards: (1, 2),
            chairs: (2, 4),
            clutter: (3, 6),
            noise: 0.003,
            color_noise: 0.04,
        }
    }
}

impl SceneSpec {
    /// Sparse scenes used for training at desk scale.
    pub fn desk(points: usize) -> Self {
        SceneSpec {
            points,
            ..SceneSpec::default()
        }
    }

    /// A room that holds nothing but its floor.
    pub fn floor_only(points: usize) -> Self {
        SceneSpec {
            points,
            walls: false,
            ceiling: false,
            tables: (0, 0),
            boards: (0, 0),
            chairs: (0, 0),
            clutter: (0, 0),
            ..SceneSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [x, y, z] = self.extent;
        if !(x >= 1.0 && y >= 1.0 && z >= 1.0) || !(x * y * z).is_finite() {
            return Err(Error::Config(format!(
                "room extent must be at least 1 m per axis, got {:?}",
                self.extent
            )));
        }
        if self.points == 0 {
            return Err(Error::Config("scene needs at least one point".into()));
        }
        for (name, (lo, hi)) in [
            ("tables", self.tables),
            ("boards", self.boards),
            ("chairs", self.chairs),
            ("clutter", self.clutter),
        ] {
            if lo > hi {
                return Err(Error::Config(format!("{name} range {lo}..={hi} is empty")));
            }
        }
        if !(self.noise >= 0.0 && self.color_noise >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    /// Rectangle spanned by `u` and `v` from `origin`.
    Quad { origin: Point3, u: Point3, v: Point3 },
    /// Surface of an axis-aligned box.
    Cuboid { min: Point3, size: Point3 },
    /// Side surface of a vertical cylinder.
    Cylinder { base: Point3, radius: f64, height: f64 },
    Sphere { center: Point3, radius: f64 },
}

impl Shape {
    fn area(&self) -> f64 {
        match *self {
            Shape::Quad { u, v, .. } => norm(cross(u, v)),
            Shape::Cuboid { size: [a, b, c], .. } => 2.0 * (a * b + b * c + a * c),
            Shape::Cylinder { radius, height, .. } => 2.0 * std::f64::consts::PI * radius * height,
            Shape::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point3 {
        match *self {
            Shape::Quad { origin, u, v } => {
                let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
                [0, 1, 2].map(|i| origin[i] + a * u[i] + b * v[i])
            }
            Shape::Cuboid { min, size } => {
                let [a, b, c] = size;
                let faces = [a * b, a * b, b * c, b * c, a * c, a * c];
                let total: f64 = faces.iter().sum();
                let mut t = rng.random::<f64>() * total;
                let mut face = 5;
                for (f, &w) in faces.iter().enumerate() {
                    if t < w {
                        face = f;
                        break;
                    }
                    t -= w;
                }
                let mut p = [0, 1, 2].map(|i| min[i] + rng.random::<f64>() * size[i]);
                let (axis, high) = [(2, false), (2, true), (0, false), (0, true), (1, false), (1, true)][face];
                p[axis] = min[axis] + if high { size[axis] } else { 0.0 };
                p
            }
            Shape::Cylinder { base, radius, height } => {
                let t = rng.random::<f64>() * std::f64::consts::TAU;
                [
                    base[0] + radius * t.cos(),
                    base[1] + radius * t.sin(),
                    base[2] + rng.random::<f64>() * height,
                ]
            }
            Shape::Sphere { center, radius } => {
                let z = rng.random_range(-1.0..=1.0f64);
                let t = rng.random::<f64>() * std::f64::consts::TAU;
                let r = (1.0 - z * z).max(0.0).sqrt();
                [
                    center[0] + radius * r * t.cos(),
                    center[1] + radius * r * t.sin(),
                    center[2] + radius * z,
                ]
            }
        }
    }
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

struct Part {
    shape: Shape,
    label: usize,
    tint: [f64; 3],
}

fn range(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

fn layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Part> {
    let [x, y, z] = spec.extent;
    let mut parts = Vec::new();
    let mut push = |rng: &mut ChaCha8Rng, shape, label| {
        let tint = [0, 1, 2].map(|_| rng.random_range(-0.06..0.06));
        parts.push(Part { shape, label, tint });
    };
    push(rng, Shape::Quad { origin: [0.0; 3], u: [x, 0.0, 0.0], v: [0.0, y, 0.0] }, FLOOR);
    if spec.ceiling {
        push(rng, Shape::Quad { origin: [0.0, 0.0, z], u: [x, 0.0, 0.0], v: [0.0, y, 0.0] }, CEILING);
    }
    if spec.walls {
        for (origin, u) in [
            ([0.0, 0.0, 0.0], [x, 0.0, 0.0]),
            ([0.0, y, 0.0], [x, 0.0, 0.0]),
            ([0.0, 0.0, 0.0], [0.0, y, 0.0]),
            ([x, 0.0, 0.0], [0.0, y, 0.0]),
        ] {
            push(rng, Shape::Quad { origin, u, v: [0.0, 0.0, z] }, WALL);
        }
    }
    // Boards hang slightly in front of a wall.
    for _ in 0..range(rng, spec.boards) {
        let w = rng.random_range(0.8..1.8f64).min(x - 0.4);
        let h = rng.random_range(0.6..1.1f64).min(z - 1.0);
        let bottom = rng.random_range(0.8..(z - h).max(0.81));
        let (origin, u) = match rng.random_range(0..4) {
            0 => ([rng.random_range(0.2..x - w - 0.19), 0.02, bottom], [w, 0.0, 0.0]),
            1 => ([rng.random_range(0.2..x - w - 0.19), y - 0.02, bottom], [w, 0.0, 0.0]),
            2 => ([0.02, rng.random_range(0.2..(y - w - 0.19).max(0.21)), bottom], [0.0, w.min(y - 0.4), 0.0]),
            _ => ([x - 0.02, rng.random_range(0.2..(y - w - 0.19).max(0.21)), bottom], [0.0, w.min(y - 0.4), 0.0]),
        };
        push(rng, Shape::Quad { origin, u, v: [0.0, 0.0, h] }, BOARD);
    }
    let mut table_tops = Vec::new();
    for _ in 0..range(rng, spec.tables) {
        let (w, d) = (rng.random_range(0.8..1.5), rng.random_range(0.6..0.9));
        let h = rng.random_range(0.7..0.8);
        let ox = rng.random_range(0.3..(x - w - 0.3).max(0.31));
        let oy = rng.random_range(0.3..(y - d - 0.3).max(0.31));
        push(rng, Shape::Cuboid { min: [ox, oy, h - 0.05], size: [w, d, 0.05] }, TABLE);
        for (lx, ly) in [(0.05, 0.05), (w - 0.05, 0.05), (0.05, d - 0.05), (w - 0.05, d - 0.05)] {
            push(rng, Shape::Cylinder { base: [ox + lx, oy + ly, 0.0], radius: 0.03, height: h - 0.05 }, TABLE);
        }
        table_tops.push(([ox, oy], [w, d], h));
    }
    for _ in 0..range(rng, spec.chairs) {
        let s = 0.42;
        let ox = rng.random_range(0.2..x - s - 0.2);
        let oy = rng.random_range(0.2..y - s - 0.2);
        push(rng, Shape::Cuboid { min: [ox, oy, 0.42], size: [s, s, 0.04] }, CHAIR);
        push(rng, Shape::Cuboid { min: [ox, oy, 0.46], size: [s, 0.04, 0.42] }, CHAIR);
        for (lx, ly) in [(0.03, 0.03), (s - 0.03, 0.03), (0.03, s - 0.03), (s - 0.03, s - 0.03)] {
            push(rng, Shape::Cylinder { base: [ox + lx, oy + ly, 0.0], radius: 0.015, height: 0.42 }, CHAIR);
        }
    }
    for _ in 0..range(rng, spec.clutter) {
        // Small items rest on a table when there is one, else on the floor.
        let (support, z0) = match table_tops.len() {
            0 => (None, 0.0),
            n => {
                let t = table_tops[rng.random_range(0..n)];
                (Some(t), t.2)
            }
        };
        let r = rng.random_range(0.05..0.12);
        let (cx, cy) = match support {
            Some(([ox, oy], [w, d], _)) => (
                rng.random_range(ox + r..(ox + w - r).max(ox + r + 1e-3)),
                rng.random_range(oy + r..(oy + d - r).max(oy + r + 1e-3)),
            ),
            None => (rng.random_range(r..x - r), rng.random_range(r..y - r)),
        };
        let shape = match rng.random_range(0..3) {
            0 => Shape::Sphere { center: [cx, cy, z0 + r], radius: r },
            1 => Shape::Cylinder { base: [cx, cy, z0], radius: r * 0.6, height: 2.0 * r },
            _ => Shape::Cuboid { min: [cx - r, cy - r, z0], size: [2.0 * r, 2.0 * r, 1.5 * r] },
        };
        push(rng, shape, CLUTTER);
    }
    parts
}

/// Splits `total` points over parts proportionally to area, at least one each
/// (largest remainder rounding).
fn allocate(areas: &[f64], total: usize) -> Vec<usize> {
    let n = areas.len();
    let free = total.saturating_sub(n);
    let sum: f64 = areas.iter().sum();
    let exact: Vec<f64> = areas.iter().map(|a| a / sum * free as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = free - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts.iter().map(|c| c + 1).collect()
}

/// Samples a labelled room. Layout depends only on the seed, so changing
/// `spec.points` resamples the same geometry at a different density.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<PointCloud> {
    spec.validate()?;
    let mut layout_rng = ChaCha8Rng::seed_from_u64(seed);
    let parts = layout(spec, &mut layout_rng);
    if parts.len() > spec.points {
        return Err(Error::Config(format!(
            "{} points cannot cover {} scene primitives",
            spec.points,
            parts.len()
        )));
    }
    let counts = allocate(&parts.iter().map(|p| p.shape.area()).collect::<Vec<_>>(), spec.points);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let pos_noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let col_noise = Normal::new(0.0, spec.color_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut coords = Vec::with_capacity(spec.points);
    let mut colors = Vec::with_capacity(spec.points);
    let mut labels = Vec::with_capacity(spec.points);
    for (part, &count) in parts.iter().zip(&counts) {
        for _ in 0..count {
            let p = part.shape.sample(&mut rng);
            coords.push([0, 1, 2].map(|i| p[i] + pos_noise.sample(&mut rng)));
            let base = PALETTE[part.label];
            colors.push([0, 1, 2].map(|i| (base[i] + part.tint[i] + col_noise.sample(&mut rng)).clamp(0.0, 1.0)));
            labels.push(part.label);
        }
    }
    let mut cloud = PointCloud::new(coords, colors, labels, NUM_CLASSES)?;
    cloud.size_class = Some(cloud.labels.iter().map(|&l| SizeClass::of_label(l)).collect());
    Ok(cloud)
}
