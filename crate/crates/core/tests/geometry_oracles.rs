//! Spatial indexing checked against brute-force oracles.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sat_core::geometry::{
    farthest_point_sample, interpolate_3nn, knn, voxel_assign, Interpolation, Point3, WindowIndex,
    WindowSpec,
};
use sat_core::numcore::DiffTensor;

fn cloud(seed: u64, n: usize, scale: f64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            [
                rng.random_range(0.0..scale),
                rng.random_range(0.0..scale),
                rng.random_range(0.0..scale),
            ]
        })
        .collect()
}

fn stage1() -> WindowSpec {
    WindowSpec {
        base: 0.16,
        ratio: 2,
        voxel: 0.08,
        shift: 0.0,
    }
}

#[test]
fn voxel_assign_matches_floor_oracle() {
    let pts = cloud(1, 1000, 1.0);
    let a = voxel_assign(&pts, 0.1).unwrap();
    assert!(a.num_cells() <= 1000);
    for (i, p) in pts.iter().enumerate() {
        let oracle = [
            (p[0] / 0.1).floor() as i64,
            (p[1] / 0.1).floor() as i64,
            (p[2] / 0.1).floor() as i64,
        ];
        assert_eq!(a.cells[a.ids[i]], oracle);
    }
    // Equal cells share ids, distinct cells do not.
    for i in 0..200 {
        for j in 0..200 {
            assert_eq!(a.ids[i] == a.ids[j], a.cells[a.ids[i]] == a.cells[a.ids[j]]);
        }
    }
    assert!(a.cells.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn windows_nest_inside_voxel_windows() {
    for (seed, spec) in [
        (2, stage1()),
        (3, WindowSpec { base: 0.1, ratio: 3, voxel: 0.1, shift: 0.0 }),
        (4, WindowSpec { base: 0.16, ratio: 2, voxel: 0.07, shift: 0.08 }),
    ] {
        let pts = cloud(seed, 600, 1.3);
        let idx = WindowIndex::build(&pts, spec).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                if idx.base_window[i] == idx.base_window[j] {
                    assert_eq!(idx.voxel_window[i], idx.voxel_window[j]);
                }
                if idx.voxel[i] == idx.voxel[j] {
                    assert_eq!(idx.voxel_window[i], idx.voxel_window[j]);
                }
            }
            assert_eq!(idx.voxel_owner[idx.voxel[i]], idx.voxel_window[i]);
        }
        // Brute-force floors for the base level.
        let base = voxel_assign(
            &pts.iter()
                .map(|p| [p[0] + spec.shift, p[1] + spec.shift, p[2] + spec.shift])
                .collect::<Vec<_>>(),
            spec.base,
        )
        .unwrap();
        assert_eq!(base.ids, idx.base_window);
    }
}

#[test]
fn translation_by_window_multiple_keeps_grouping() {
    let pts = cloud(5, 400, 1.0);
    let spec = stage1();
    let a = WindowIndex::build(&pts, spec).unwrap();
    let off = 3.0 * spec.voxel_window();
    let moved: Vec<Point3> = pts.iter().map(|p| [p[0] + off, p[1] - off, p[2] + 2.0 * off]).collect();
    let b = WindowIndex::build(&moved, spec).unwrap();
    assert_eq!(a.base_window, b.base_window);
    assert_eq!(a.voxel_window, b.voxel_window);
    assert_eq!(a.voxel, b.voxel);
    for (ca, cb) in a.base_cells.iter().zip(&b.base_cells) {
        assert_eq!([cb[0] - ca[0], cb[1] - ca[1], cb[2] - ca[2]], [6, -6, 12]);
    }
}

#[test]
fn index_is_permutation_equivariant() {
    let pts = cloud(6, 300, 0.8);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut perm: Vec<usize> = (0..pts.len()).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let permuted: Vec<Point3> = perm.iter().map(|&i| pts[i]).collect();
    let a = WindowIndex::build(&pts, stage1()).unwrap();
    let b = WindowIndex::build(&permuted, stage1()).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(b.base_window[k], a.base_window[i]);
        assert_eq!(b.voxel[k], a.voxel[i]);
    }
    // Members are visited in the same spatial order.
    for s in 0..a.num_voxels() {
        let ma: Vec<usize> = a.voxel_segments.members(s).to_vec();
        let mb: Vec<usize> = b.voxel_segments.members(s).iter().map(|&k| perm[k]).collect();
        assert_eq!(ma, mb);
    }
}

fn fps_oracle(pts: &[Point3], m: usize, start: usize) -> Vec<usize> {
    let mut sel = vec![start];
    while sel.len() < m {
        let mut best = None;
        let mut best_d = -1.0;
        for i in 0..pts.len() {
            if sel.contains(&i) {
                continue;
            }
            let d = sel
                .iter()
                .map(|&s| {
                    let (a, b) = (pts[i], pts[s]);
                    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
                })
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        sel.push(best.unwrap());
    }
    sel
}

#[test]
fn fps_matches_greedy_oracle() {
    let pts = cloud(8, 200, 2.0);
    let start = (0..pts.len())
        .min_by(|&a, &b| pts[a].partial_cmp(&pts[b]).unwrap())
        .unwrap();
    let got = farthest_point_sample(&pts, 50, None).unwrap();
    assert_eq!(got, fps_oracle(&pts, 50, start));
}

#[test]
fn fps_is_order_independent() {
    let pts = cloud(9, 150, 1.0);
    let mut perm: Vec<usize> = (0..pts.len()).rev().collect();
    perm.rotate_left(37);
    let permuted: Vec<Point3> = perm.iter().map(|&i| pts[i]).collect();
    let a = farthest_point_sample(&pts, 40, None).unwrap();
    let b: Vec<usize> = farthest_point_sample(&permuted, 40, None)
        .unwrap()
        .into_iter()
        .map(|k| perm[k])
        .collect();
    assert_eq!(a, b);
}

fn knn_oracle(data: &[Point3], q: &Point3, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = data
        .iter()
        .enumerate()
        .map(|(i, p)| {
            (
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt(),
                i,
            )
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

#[test]
fn knn_matches_full_sort() {
    let data = cloud(10, 100, 1.0);
    let queries = cloud(11, 20, 1.2);
    let r = knn(&data, &queries, 5).unwrap();
    for (qi, q) in queries.iter().enumerate() {
        assert_eq!(&r.indices[qi * 5..qi * 5 + 5], knn_oracle(&data, q, 5).as_slice());
    }
    let all = knn(&data, &queries[..1], 100).unwrap();
    assert_eq!(all.indices, knn_oracle(&data, &queries[0], 100));
    assert!(all.distances.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn knn_on_planar_clusters() {
    // Surface-like data: two separated planes, queries in between and outside.
    let mut data = cloud(12, 300, 1.0);
    for p in data.iter_mut().take(150) {
        p[2] = 0.0;
    }
    for p in data.iter_mut().skip(150) {
        p[2] = 2.5;
    }
    let queries = cloud(13, 40, 3.0);
    let r = knn(&data, &queries, 16).unwrap();
    for (qi, q) in queries.iter().enumerate() {
        assert_eq!(&r.indices[qi * 16..(qi + 1) * 16], knn_oracle(&data, q, 16).as_slice());
    }
}

#[test]
fn interpolation_cases() {
    let coarse = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]];
    let feats = DiffTensor::<f64>::new(&[4, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
    let out = interpolate_3nn(&coarse, &feats, &[[1.0, 0.0, 0.0]]).unwrap().to_vec();
    assert!((out[0] - 3.0).abs() < 1e-6 && (out[1] - 4.0).abs() < 1e-6);

    // Equidistant from three identical features.
    let tri = vec![[1.0, 0.0, 0.0], [-0.5, 0.75f64.sqrt(), 0.0], [-0.5, -(0.75f64.sqrt()), 0.0]];
    let same = DiffTensor::<f64>::new(&[3, 2], vec![0.3, -0.7, 0.3, -0.7, 0.3, -0.7]).unwrap();
    let out = interpolate_3nn(&tri, &same, &[[0.0, 0.0, 0.0]]).unwrap().to_vec();
    assert!((out[0] - 0.3).abs() < 1e-12 && (out[1] + 0.7).abs() < 1e-12);
}

#[test]
fn interpolation_matches_loop_oracle() {
    let coarse = cloud(14, 30, 1.0);
    let fine = cloud(15, 80, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let fv: Vec<f64> = (0..30 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let feats = DiffTensor::<f64>::new(&[30, 4], fv.clone()).unwrap();
    let got = interpolate_3nn(&coarse, &feats, &fine).unwrap().to_vec();
    for (fi, q) in fine.iter().enumerate() {
        let nn = knn_oracle(&coarse, q, 3);
        let d: Vec<f64> = nn
            .iter()
            .map(|&i| {
                let p = coarse[i];
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
            })
            .collect();
        let w: Vec<f64> = d.iter().map(|x| 1.0 / (x + 1e-8)).collect();
        let ws: f64 = w.iter().sum();
        for c in 0..4 {
            let oracle: f64 = nn.iter().zip(&w).map(|(&i, wi)| wi / ws * fv[i * 4 + c]).sum();
            assert!((got[fi * 4 + c] - oracle).abs() < 1e-10);
        }
    }
    let interp = Interpolation::new(&coarse, &fine).unwrap();
    for row in interp.weights.chunks(3) {
        assert!(row.iter().all(|&w| w >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn knn_agrees_with_oracle(seed in 0u64..10_000, n in 1usize..120, k in 1usize..8) {
        let data = cloud(seed, n, 2.0);
        let queries = cloud(seed + 1, 10, 2.5);
        let k = k.min(n);
        let r = knn(&data, &queries, k).unwrap();
        for (qi, q) in queries.iter().enumerate() {
            let want = knn_oracle(&data, q, k);
            prop_assert_eq!(&r.indices[qi * k..(qi + 1) * k], want.as_slice());
        }
    }
}
