//! Attention layers checked against dense masked loop oracles.

mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sat_core::attention::{
    count_attention_macs, count_pairs, mga, point_attention, pvca, re_attention, sat_block,
    voxel_tokenize, BlockConfig, MgaMode, ReAttentionParams,
};
use sat_core::geometry::{Point3, WindowIndex, WindowSpec};
use sat_core::numcore::{grad_check, DiffTensor, GradCheck, Init, ParamStore};
use support::oracle::{self, max_abs_diff, random_block, random_instance, rows, tensor, Rows};

fn cfg(c: usize, h: usize, mode: MgaMode) -> BlockConfig {
    BlockConfig {
        mode,
        ..BlockConfig::new(c, h)
    }
}

#[test]
fn tokenize_one_point_per_voxel_is_identity() {
    let coords: Vec<Point3> = (0..5).map(|i| [0.05 + 0.1 * i as f64, 0.05, 0.05]).collect();
    let spec = WindowSpec { base: 0.2, ratio: 2, voxel: 0.1, shift: 0.0 };
    let idx = WindowIndex::build(&coords, spec).unwrap();
    let f: Rows = (0..5).map(|i| vec![i as f64, -(i as f64), 0.5]).collect();
    let (tok, seg) = voxel_tokenize(&tensor(&f), &idx, None).unwrap();
    assert_eq!(seg.num_segments(), idx.num_voxel_windows());
    let t = rows(&tok);
    for i in 0..5 {
        assert_eq!(t[idx.voxel[i]], f[i]);
    }
}

#[test]
fn tokenize_two_points_average() {
    let coords = vec![[0.01, 0.01, 0.01], [0.05, 0.02, 0.07]];
    let spec = WindowSpec { base: 0.1, ratio: 1, voxel: 0.1, shift: 0.0 };
    let idx = WindowIndex::build(&coords, spec).unwrap();
    let (tok, _) = voxel_tokenize(&tensor(&vec![vec![1.0, 4.0], vec![3.0, -2.0]]), &idx, None).unwrap();
    assert_eq!(tok.to_vec(), vec![2.0, 1.0]);
}

#[test]
fn tokenize_matches_loop_oracle() {
    for seed in 0..20 {
        let inst = random_instance(seed, 64, 8, 8);
        let idx = WindowIndex::build(&inst.coords, inst.spec).unwrap();
        let p = random_block(seed, &BlockConfig::new(8, 2));
        let phi = p.mga.coarse.as_ref().unwrap().phi.as_ref();
        let (tok, _) = voxel_tokenize(&tensor(&inst.feats), &idx, phi).unwrap();
        let tok = rows(&tok);
        let want = oracle::voxel_tokens(&inst.coords, &inst.feats, &inst.spec, phi);
        assert_eq!(want.len(), idx.num_voxels());
        for (i, c) in inst.coords.iter().enumerate() {
            let w = &want[&oracle::voxel_key(c, &inst.spec)];
            assert!(max_abs_diff(&vec![w.clone()], &vec![tok[idx.voxel[i]].clone()]) < 1e-10);
        }
    }
}

#[test]
fn pvca_single_voxel_copies_value_row() {
    let coords: Vec<Point3> = (0..6).map(|i| [0.01 * i as f64, 0.02, 0.03]).collect();
    let spec = WindowSpec { base: 0.16, ratio: 2, voxel: 0.16, shift: 0.0 };
    let idx = WindowIndex::build(&coords, spec).unwrap();
    assert_eq!(idx.num_voxels(), 1);
    let p = random_block(1, &BlockConfig::new(16, 4));
    let inst = random_instance(2, 6, 1, 16);
    let out = rows(&pvca(&p.mga, &tensor(&inst.feats), &idx).unwrap().out);
    // The value row of the single token.
    let cp = p.mga.coarse.as_ref().unwrap();
    let tokens = oracle::voxel_tokens(&coords, &inst.feats, &spec, cp.phi.as_ref());
    let tok: Rows = tokens.values().cloned().collect();
    let v = oracle::linear(&oracle::layer_norm(&tok, &cp.norm), &cp.proj.v);
    for r in &out {
        assert!(max_abs_diff(&vec![r.clone()], &v) < 1e-12);
    }
}

#[test]
fn pvca_identical_keys_give_mean_of_values() {
    // Zero key weights make every score equal, so attention is uniform.
    let inst = random_instance(3, 40, 6, 16);
    let idx = WindowIndex::build(&inst.coords, inst.spec).unwrap();
    let p = random_block(3, &BlockConfig::new(16, 4));
    let cp = p.mga.coarse.as_ref().unwrap();
    cp.proj.k.w.set_data(vec![0.0; cp.proj.k.w.len()]).unwrap();
    let out = rows(&pvca(&p.mga, &tensor(&inst.feats), &idx).unwrap().out);
    let tokens = oracle::voxel_tokens(&inst.coords, &inst.feats, &inst.spec, cp.phi.as_ref());
    let keys: Vec<_> = tokens.keys().copied().collect();
    let v = oracle::linear(&oracle::layer_norm(&tokens.values().cloned().collect(), &cp.norm), &cp.proj.v);
    for (i, c) in inst.coords.iter().enumerate() {
        let cell = oracle::voxel_window_cell(c, &inst.spec);
        let members: Vec<usize> = (0..keys.len()).filter(|&j| keys[j].0 == cell).collect();
        let mean: Vec<f64> = (0..8)
            .map(|x| members.iter().map(|&j| v[j][x]).sum::<f64>() / members.len() as f64)
            .collect();
        assert!(max_abs_diff(&vec![mean], &vec![out[i].clone()]) < 1e-12);
    }
}

#[test]
fn branches_match_dense_oracles_on_random_instances() {
    let mut worst = 0.0f64;
    for seed in 0..120 {
        let inst = random_instance(100 + seed, 64, 8, 16);
        let idx = WindowIndex::build(&inst.coords, inst.spec).unwrap();
        let mode = [MgaMode::Shunted, MgaMode::Sum, MgaMode::PointOnly][seed as usize % 3];
        let p = random_block(seed, &cfg(16, 4, mode));
        let f = tensor(&inst.feats);
        let fine = rows(&point_attention(&p.mga, &f, &idx, &inst.coords).unwrap().out);
        worst = worst.max(max_abs_diff(&fine, &oracle::point_branch(&p.mga, &inst.coords, &inst.feats, &inst.spec)));
        if mode != MgaMode::PointOnly {
            let coarse = rows(&pvca(&p.mga, &f, &idx).unwrap().out);
            worst = worst.max(max_abs_diff(&coarse, &oracle::voxel_branch(&p.mga, &inst.coords, &inst.feats, &inst.spec)));
        }
        let full = rows(&mga(&p.mga, &f, &idx, &inst.coords).unwrap().out);
        worst = worst.max(max_abs_diff(&full, &oracle::mga(&p.mga, &inst.coords, &inst.feats, &inst.spec)));
    }
    assert!(worst < 1e-6, "worst deviation {worst:e}");
}

#[test]
fn point_attention_single_point_window_returns_own_value() {
    let coords = vec![[0.01, 0.01, 0.01], [0.5, 0.5, 0.5], [0.52, 0.51, 0.5]];
    let spec = WindowSpec { base: 0.16, ratio: 2, voxel: 0.08, shift: 0.0 };
    let idx = WindowIndex::build(&coords, spec).unwrap();
    let p = random_block(4, &BlockConfig::new(16, 4));
    let inst = random_instance(5, 3, 1, 16);
    let out = rows(&point_attention(&p.mga, &tensor(&inst.feats), &idx, &coords).unwrap().out);
    let v = oracle::linear(&oracle::layer_norm(&inst.feats, &p.mga.norm), &p.mga.fine.v);
    assert!(max_abs_diff(&vec![out[0].clone()], &vec![v[0].clone()]) < 1e-12);
}

#[test]
fn point_attention_identical_features_identical_outputs() {
    let coords = vec![[0.01, 0.01, 0.01], [0.02, 0.03, 0.01], [0.1, 0.1, 0.1]];
    let spec = WindowSpec { base: 0.16, ratio: 2, voxel: 0.08, shift: 0.0 };
    let idx = WindowIndex::build(&coords, spec).unwrap();
    let p = random_block(6, &BlockConfig::new(16, 4));
    let f = vec![vec![0.3; 16], vec![0.3; 16], (0..16).map(|i| i as f64 * 0.1).collect()];
    let f = {
        let mut f = f;
        f[0][3] = -1.0;
        f[1][3] = -1.0;
        f
    };
    let out = rows(&point_attention(&p.mga, &tensor(&f), &idx, &coords).unwrap().out);
    assert_eq!(out[0], out[1]);
}

#[test]
fn point_attention_window_of_32_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let coords: Vec<Point3> = (0..32).map(|_| [0, 1, 2].map(|_| rng.random_range(0.0..0.15))).collect();
    let spec = WindowSpec { base: 0.16, ratio: 2, voxel: 0.08, shift: 0.0 };
    let idx = WindowIndex::build(&coords, spec).unwrap();
    assert_eq!(idx.num_base_windows(), 1);
    let feats: Rows = (0..32).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let p = random_block(8, &BlockConfig::new(16, 4));
    let got = rows(&point_attention(&p.mga, &tensor(&feats), &idx, &coords).unwrap().out);
    assert!(max_abs_diff(&got, &oracle::point_branch(&p.mga, &coords, &feats, &spec)) < 1e-6);
}

#[test]
fn mga_shapes() {
    let spec = WindowSpec { base: 0.16, ratio: 2, voxel: 0.08, shift: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let coords: Vec<Point3> = (0..10).map(|_| [0, 1, 2].map(|_| rng.random_range(0.0..0.5))).collect();
    let idx = WindowIndex::build(&coords, spec).unwrap();
    let feats: Rows = (0..10).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let p = random_block(12, &BlockConfig::new(16, 4));
    let o = mga(&p.mga, &tensor(&feats), &idx, &coords).unwrap();
    assert_eq!(o.coarse.unwrap().shape(), &[10, 8]);
    assert_eq!(o.fine.shape(), &[10, 8]);
    assert_eq!(o.out.shape(), &[10, 16]);
}

#[test]
fn zero_voxel_values_silence_coarse_half_only() {
    let inst = random_instance(13, 50, 8, 16);
    let idx = WindowIndex::build(&inst.coords, inst.spec).unwrap();
    let p = random_block(13, &BlockConfig::new(16, 4));
    let f = tensor(&inst.feats);
    let before = mga(&p.mga, &f, &idx, &inst.coords).unwrap();
    let v1 = &p.mga.coarse.as_ref().unwrap().proj.v.w;
    v1.set_data(vec![0.0; v1.len()]).unwrap();
    let after = mga(&p.mga, &f, &idx, &inst.coords).unwrap();
    let merged = rows(&after.merged);
    let fine_before = rows(&before.merged);
    for (a, b) in merged.iter().zip(&fine_before) {
        assert_eq!(&a[..8], &b[..8]);
        assert!(a[8..].iter().all(|&x| x == 0.0));
    }
}

#[test]
fn branches_are_disentangled() {
    for trial in 0..50u64 {
        let inst = random_instance(200 + trial, 64, 8, 16);
        let idx = WindowIndex::build(&inst.coords, inst.spec).unwrap();
        let p = random_block(trial, &BlockConfig::new(16, 4));
        let f = tensor(&inst.feats);
        let base = mga(&p.mga, &f, &idx, &inst.coords).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let bump = |t: &DiffTensor<f64>, rng: &mut ChaCha8Rng| {
            let i = rng.random_range(0..t.len());
            t.update_data(|d| d[i] += rng.random_range(0.1..1.0));
        };
        let cp = p.mga.coarse.as_ref().unwrap();
        let phi = cp.phi.as_ref().unwrap();
        for t in [&cp.proj.k.w, &cp.proj.v.w, &phi.fc1.w, &phi.fc2.b.clone().unwrap()] {
            bump(t, &mut rng);
        }
        let moved = mga(&p.mga, &f, &idx, &inst.coords).unwrap();
        assert_eq!(base.fine.to_vec(), moved.fine.to_vec());
        for t in [&p.mga.fine.k.w, &p.mga.fine.v.w] {
            bump(t, &mut rng);
        }
        let moved2 = mga(&p.mga, &f, &idx, &inst.coords).unwrap();
        assert_eq!(moved.coarse.unwrap().to_vec(), moved2.coarse.unwrap().to_vec());
    }
}

#[test]
fn attention_rows_are_convex_combinations() {
    for seed in 0..10 {
        let inst = random_instance(300 + seed, 64, 8, 16);
        let idx = WindowIndex::build(&inst.coords, inst.spec).unwrap();
        let p = random_block(seed, &BlockConfig::new(16, 4));
        let out = rows(&point_attention(&p.mga, &tensor(&inst.feats), &idx, &inst.coords).unwrap().out);
        let v = oracle::linear(&oracle::layer_norm(&inst.feats, &p.mga.norm), &p.mga.fine.v);
        for i in 0..out.len() {
            let members = idx.base_segments.members(idx.base_window[i]);
            for c in 0..8 {
                let lo = members.iter().map(|&j| v[j][c]).fold(f64::INFINITY, f64::min);
                let hi = members.iter().map(|&j| v[j][c]).fold(f64::NEG_INFINITY, f64::max);
                assert!(out[i][c] >= lo - 1e-12 && out[i][c] <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn zero_gate_halves_attention_output() {
    let mut ps = ParamStore::<f64>::new(1);
    let g = ReAttentionParams::new(&mut ps, 16, 4, true);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let fin: Rows = (0..7).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let fp: Rows = (0..7).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let (out, alpha) = re_attention(&tensor(&fin), &tensor(&fp), &g).unwrap();
    assert!(alpha.to_vec().iter().all(|&a| a == 0.5));
    let want: Vec<f64> = fp.concat().iter().map(|v| 0.5 * v).collect();
    assert_eq!(out.to_vec(), want);
}

#[test]
fn saturated_gate_closes_its_head() {
    let mut ps = ParamStore::<f64>::new(1);
    let g = ReAttentionParams::new(&mut ps, 16, 4, true);
    g.gamma.fc2.b.as_ref().unwrap().set_data(vec![0.0, -60.0, 0.0, 0.0]).unwrap();
    let fp: Rows = vec![vec![1.0; 16]; 3];
    let (out, alpha) = re_attention(&tensor(&vec![vec![0.2; 16]; 3]), &tensor(&fp), &g).unwrap();
    for r in rows(&out) {
        assert!(r[4..8].iter().all(|&x| x.abs() < 1e-20));
        assert_eq!(r[0], 0.5);
    }
    assert!(alpha.to_vec().iter().all(|&a| a > 0.0 && a < 1.0));
}

#[test]
fn re_attention_matches_loop_oracle() {
    let mut ps = ParamStore::<f64>::new(3);
    let g = ReAttentionParams::new(&mut ps, 16, 4, false);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let fin: Rows = (0..9).map(|_| (0..16).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let fp: Rows = (0..9).map(|_| (0..16).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let (out, _) = re_attention(&tensor(&fin), &tensor(&fp), &g).unwrap();
    let logits = oracle::mlp(&fin, &g.gamma);
    let want: Rows = (0..9)
        .map(|i| (0..16).map(|c| fp[i][c] / (1.0 + (-logits[i][c / 4]).exp())).collect())
        .collect();
    assert!(max_abs_diff(&rows(&out), &want) < 1e-10);
}

#[test]
fn block_with_zero_weights_is_identity() {
    let mut ps = ParamStore::<f64>::new(5);
    let p = sat_core::attention::SatBlockParams::new(&mut ps, &BlockConfig::new(16, 4)).unwrap();
    for (name, t) in ps.params() {
        if !name.ends_with("gain") {
            t.set_data(vec![0.0; t.len()]).unwrap();
        }
    }
    let inst = random_instance(6, 30, 8, 16);
    let idx = WindowIndex::build(&inst.coords, inst.spec).unwrap();
    let out = sat_block(&p, &tensor(&inst.feats), &idx, &inst.coords).unwrap().out;
    assert_eq!(rows(&out), inst.feats);
}

#[test]
fn block_matches_composed_oracle() {
    for seed in 0..10 {
        let inst = random_instance(400 + seed, 64, 8, 16);
        let idx = WindowIndex::build(&inst.coords, inst.spec).unwrap();
        let p = random_block(seed, &BlockConfig::new(16, 4));
        let got = rows(&sat_block(&p, &tensor(&inst.feats), &idx, &inst.coords).unwrap().out);
        assert!(max_abs_diff(&got, &oracle::sat_block(&p, &inst.coords, &inst.feats, &inst.spec)) < 1e-6);
    }
}

fn block_grad_error(seed: u64, n: usize, cfg: &BlockConfig) -> f64 {
    let inst = random_instance(seed, n, 8, cfg.channels);
    let idx = WindowIndex::build(&inst.coords, inst.spec).unwrap();
    let mut ps = ParamStore::<f64>::new(seed);
    let p = sat_core::attention::SatBlockParams::new(&mut ps, cfg).unwrap();
    let x = DiffTensor::param(&[inst.coords.len(), cfg.channels], inst.feats.concat()).unwrap();
    let w = ps.tensor("probe", &[inst.coords.len(), cfg.channels], Init::Uniform(1.0));
    let mut params: Vec<DiffTensor<f64>> = ps.params().iter().map(|(_, t)| t.clone()).collect();
    params.pop();
    params.push(x.clone());
    grad_check(
        || sat_block(&p, &x, &idx, &inst.coords)?.out.mul(&w).map(|t| t.sum()),
        &params,
        GradCheck { h: 1e-5, max_coords: Some(24) },
    )
    .unwrap()
}

#[test]
fn single_point_block_is_finite_and_differentiable() {
    let err = block_grad_error(7, 1, &BlockConfig::new(16, 4));
    assert!(err < 1e-4, "{err:e}");
}

#[test]
fn full_block_gradients() {
    let mut c = BlockConfig::new(16, 4);
    c.rel_pos_bias = true;
    for (seed, cfg) in [(8, BlockConfig::new(16, 4)), (9, cfg(16, 4, MgaMode::Sum)), (10, c)] {
        let err = block_grad_error(seed, 64, &cfg);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn block_is_permutation_equivariant() {
    let inst = random_instance(11, 64, 8, 16);
    let p = random_block(11, &BlockConfig::new(16, 4));
    let idx = WindowIndex::build(&inst.coords, inst.spec).unwrap();
    let out = rows(&sat_block(&p, &tensor(&inst.feats), &idx, &inst.coords).unwrap().out);
    let n = inst.coords.len();
    let perm: Vec<usize> = (0..n).map(|i| (i * 37 + 5) % n).collect();
    let mut seen = perm.clone();
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), n, "not a permutation for n = {n}");
    let pc: Vec<Point3> = perm.iter().map(|&i| inst.coords[i]).collect();
    let pf: Rows = perm.iter().map(|&i| inst.feats[i].clone()).collect();
    let pidx = WindowIndex::build(&pc, inst.spec).unwrap();
    let pout = rows(&sat_block(&p, &tensor(&pf), &pidx, &pc).unwrap().out);
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(pout[k], out[i]);
    }
}

#[test]
fn mac_counts_closed_form() {
    // Ten points in one base window that is also the voxel window, two voxels.
    let coords: Vec<Point3> = (0..10)
        .map(|i| [if i < 5 { 0.01 } else { 0.09 }, 0.005 * i as f64, 0.02])
        .collect();
    let spec = WindowSpec { base: 0.16, ratio: 1, voxel: 0.08, shift: 0.0 };
    let idx = WindowIndex::build(&coords, spec).unwrap();
    assert_eq!((idx.num_base_windows(), idx.num_voxels()), (1, 2));
    let m = count_attention_macs(16, &idx);
    assert_eq!((m.point_branch, m.voxel_branch, m.baseline_full_point), (800, 160, 1600));
}

#[test]
fn mac_counts_degenerate_equality() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let coords: Vec<Point3> = (0..200).map(|_| [0, 1, 2].map(|_| rng.random_range(0.0..1.0))).collect();
    let spec = WindowSpec { base: 0.2, ratio: 1, voxel: 1e-4, shift: 0.0 };
    let idx = WindowIndex::build(&coords, spec).unwrap();
    assert_eq!(idx.num_voxels(), 200);
    let m = count_attention_macs(16, &idx);
    assert_eq!(m.point_branch + m.voxel_branch, m.baseline_full_point);
    assert_eq!(m.voxel_branch * 2, m.baseline_full_point);
}

#[test]
fn pvca_pair_count_is_points_times_voxels() {
    for seed in 0..20 {
        let inst = random_instance(500 + seed, 64, 8, 16);
        let idx = WindowIndex::build(&inst.coords, inst.spec).unwrap();
        let p = random_block(seed, &BlockConfig::new(16, 4));
        let pairs = pvca(&p.mga, &tensor(&inst.feats), &idx).unwrap().pairs;
        let want: usize = (0..idx.num_voxel_windows())
            .map(|w| {
                let pts = idx.voxel_window.iter().filter(|&&x| x == w).count();
                let vox = idx.voxel_owner.iter().filter(|&&x| x == w).count();
                pts * vox
            })
            .sum();
        assert_eq!(pairs, want);
        assert_eq!(count_pairs(&idx.voxel_window_segments, &idx.voxel_token_segments), want);
    }
}
