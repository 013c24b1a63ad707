//! Loop-based reference implementations used by the attention tests.
//! Everything here works on plain row vectors in f64 and shares no code with
//! the library kernels.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sat_core::attention::{BlockConfig, MgaMode, MgaParams, Projections, SatBlockParams};
use sat_core::geometry::{Point3, WindowSpec};
use sat_core::numcore::{DiffTensor, LayerNorm, Linear, Mlp, ParamStore};

pub type Rows = Vec<Vec<f64>>;

pub fn rows(t: &DiffTensor<f64>) -> Rows {
    let c = t.shape()[1];
    t.to_vec().chunks(c).map(|r| r.to_vec()).collect()
}

pub fn tensor(r: &Rows) -> DiffTensor<f64> {
    let c = r.first().map_or(0, |x| x.len());
    DiffTensor::new(&[r.len(), c], r.concat()).unwrap()
}

pub fn max_abs_diff(a: &Rows, b: &Rows) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(u, v)| (u - v).abs())
        })
        .fold(0.0, f64::max)
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn linear(x: &Rows, l: &Linear<f64>) -> Rows {
    let (i, o) = (l.in_dim(), l.out_dim());
    let w = l.w.to_vec();
    let b = l.b.as_ref().map(|b| b.to_vec());
    x.iter()
        .map(|r| {
            (0..o)
                .map(|c| {
                    let mut s = b.as_ref().map_or(0.0, |b| b[c]);
                    for k in 0..i {
                        s += r[k] * w[k * o + c];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn mlp(x: &Rows, m: &Mlp<f64>) -> Rows {
    let h: Rows = linear(x, &m.fc1)
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    linear(&h, &m.fc2)
}

pub fn layer_norm(x: &Rows, ln: &LayerNorm<f64>) -> Rows {
    let (g, b) = (ln.gain.to_vec(), ln.bias.to_vec());
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + 1e-5).sqrt();
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) * inv * g[j] + b[j])
                .collect()
        })
        .collect()
}

/// Dense multi-head attention over all query/key pairs with a mask.
pub fn masked_mha(q: &Rows, k: &Rows, v: &Rows, heads: usize, mask: impl Fn(usize, usize) -> bool) -> Rows {
    let c = q[0].len();
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![vec![0.0; c]; q.len()];
    for i in 0..q.len() {
        for h in 0..heads {
            let mut logits = Vec::new();
            for j in 0..k.len() {
                if !mask(i, j) {
                    continue;
                }
                let s: f64 = (0..d).map(|x| q[i][h * d + x] * k[j][h * d + x]).sum();
                logits.push((j, s * scale));
            }
            let z: f64 = logits.iter().map(|(_, s)| s.exp()).sum();
            for (j, s) in logits {
                let p = s.exp() / z;
                for x in 0..d {
                    out[i][h * d + x] += p * v[j][h * d + x];
                }
            }
        }
    }
    out
}

fn floor_cell(p: &Point3, shift: f64, edge: f64) -> [i64; 3] {
    [0, 1, 2].map(|a| ((p[a] + shift) / edge).floor() as i64)
}

pub fn base_cell(p: &Point3, s: &WindowSpec) -> [i64; 3] {
    floor_cell(p, s.shift, s.base)
}

pub fn voxel_window_cell(p: &Point3, s: &WindowSpec) -> [i64; 3] {
    base_cell(p, s).map(|c| c.div_euclid(s.ratio as i64))
}

/// Key of the voxel a point belongs to: grid cell clipped to its voxel window.
pub type VoxelKey = ([i64; 3], [i64; 3]);

pub fn voxel_key(p: &Point3, s: &WindowSpec) -> VoxelKey {
    (voxel_window_cell(p, s), floor_cell(p, s.shift, s.voxel))
}

/// Voxel tokens by brute-force grouping: per-voxel mean then `phi`.
pub fn voxel_tokens(coords: &[Point3], feats: &Rows, s: &WindowSpec, phi: Option<&Mlp<f64>>) -> BTreeMap<VoxelKey, Vec<f64>> {
    let mut acc: BTreeMap<VoxelKey, (Vec<f64>, usize)> = BTreeMap::new();
    for (p, f) in coords.iter().zip(feats) {
        let e = acc.entry(voxel_key(p, s)).or_insert((vec![0.0; f.len()], 0));
        for (a, b) in e.0.iter_mut().zip(f) {
            *a += b;
        }
        e.1 += 1;
    }
    let keys: Vec<VoxelKey> = acc.keys().copied().collect();
    let means: Rows = acc.values().map(|(s, n)| s.iter().map(|v| v / *n as f64).collect()).collect();
    let out = match phi {
        Some(m) => mlp(&means, m),
        None => means,
    };
    keys.into_iter().zip(out).collect()
}

fn project(x: &Rows, p: &Projections<f64>) -> (Rows, Rows, Rows) {
    (linear(x, &p.q), linear(x, &p.k), linear(x, &p.v))
}

pub fn point_branch(p: &MgaParams<f64>, coords: &[Point3], feats: &Rows, s: &WindowSpec) -> Rows {
    let n = layer_norm(feats, &p.norm);
    let (q, k, v) = project(&n, &p.fine);
    let heads = if p.mode == MgaMode::Shunted { p.heads / 2 } else { p.heads };
    let cells: Vec<_> = coords.iter().map(|c| base_cell(c, s)).collect();
    masked_mha(&q, &k, &v, heads, |i, j| cells[i] == cells[j])
}

pub fn voxel_branch(p: &MgaParams<f64>, coords: &[Point3], feats: &Rows, s: &WindowSpec) -> Rows {
    let cp = p.coarse.as_ref().unwrap();
    let tokens = voxel_tokens(coords, feats, s, cp.phi.as_ref());
    let owners: Vec<[i64; 3]> = tokens.keys().map(|k| k.0).collect();
    let tok_rows: Rows = tokens.values().cloned().collect();
    let tn = layer_norm(&tok_rows, &cp.norm);
    let n = layer_norm(feats, &p.norm);
    let q = linear(&n, &cp.proj.q);
    let k = linear(&tn, &cp.proj.k);
    let v = linear(&tn, &cp.proj.v);
    let heads = if p.mode == MgaMode::Shunted { p.heads / 2 } else { p.heads };
    let qcell: Vec<_> = coords.iter().map(|c| voxel_window_cell(c, s)).collect();
    masked_mha(&q, &k, &v, heads, |i, j| qcell[i] == owners[j])
}

pub fn mga(p: &MgaParams<f64>, coords: &[Point3], feats: &Rows, s: &WindowSpec) -> Rows {
    let fine = point_branch(p, coords, feats, s);
    let merged: Rows = match p.mode {
        MgaMode::PointOnly => fine,
        MgaMode::Shunted => {
            let coarse = voxel_branch(p, coords, feats, s);
            fine.into_iter().zip(coarse).map(|(a, b)| [a, b].concat()).collect()
        }
        MgaMode::Sum => {
            let coarse = voxel_branch(p, coords, feats, s);
            fine.into_iter()
                .zip(coarse)
                .map(|(a, b)| a.iter().zip(&b).map(|(x, y)| x + y).collect())
                .collect()
        }
    };
    match &p.out {
        Some(l) => linear(&merged, l),
        None => merged,
    }
}

pub fn sat_block(p: &SatBlockParams<f64>, coords: &[Point3], feats: &Rows, s: &WindowSpec) -> Rows {
    let attn = mga(&p.mga, coords, feats, s);
    let gated: Rows = match &p.gate {
        Some(g) => {
            let logits = mlp(feats, &g.gamma);
            let d = p.config.channels / p.config.heads;
            attn.iter()
                .zip(&logits)
                .map(|(a, l)| a.iter().enumerate().map(|(c, v)| v / (1.0 + (-l[c / d]).exp())).collect())
                .collect()
        }
        None => attn,
    };
    let f: Rows = feats.iter().zip(&gated).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
    let h = mlp(&layer_norm(&f, &p.ffn_norm), &p.ffn);
    f.iter().zip(&h).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

/// A small scene of at most `max_voxels` occupied voxels of edge `voxel`,
/// sampled inside a 4x4x4 block of voxel cells.
pub struct Instance {
    pub coords: Vec<Point3>,
    pub feats: Rows,
    pub spec: WindowSpec,
}

pub fn random_instance(seed: u64, max_points: usize, max_voxels: usize, channels: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = if rng.random_bool(0.5) { 0.16 } else { 0.1 };
    let ratio = rng.random_range(1..=3u32);
    let voxel = base / [1.0, 2.0][rng.random_range(0..2)];
    let shift = if rng.random_bool(0.5) { 0.0 } else { voxel };
    let spec = WindowSpec { base, ratio, voxel, shift };
    let nv = rng.random_range(1..=max_voxels);
    let mut cells: Vec<[i64; 3]> = Vec::new();
    while cells.len() < nv {
        let c = [0, 1, 2].map(|_| rng.random_range(0..4i64));
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    let n = rng.random_range(1..=max_points);
    let coords: Vec<Point3> = (0..n)
        .map(|_| {
            let c = cells[rng.random_range(0..nv)];
            [0, 1, 2].map(|a| (c[a] as f64 + rng.random_range(0.05..0.95)) * voxel - shift)
        })
        .collect();
    let feats = (0..n)
        .map(|_| (0..channels).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    Instance { coords, feats, spec }
}

/// Block parameters with every tensor (including norms) randomized.
pub fn random_block(seed: u64, cfg: &BlockConfig) -> SatBlockParams<f64> {
    let mut ps = ParamStore::new(seed);
    let p = SatBlockParams::new(&mut ps, cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (name, t) in ps.params() {
        let scale = if name.ends_with("gain") { 0.5 } else { 0.6 };
        let center = if name.ends_with("gain") { 1.0 } else { 0.0 };
        t.set_data((0..t.len()).map(|_| center + rng.random_range(-scale..scale)).collect())
            .unwrap();
    }
    p
}
