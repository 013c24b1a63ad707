use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{count_attention_macs, mga, MgaMode, MgaParams};
use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::WindowIndex;
use crate::network::ModelConfig;
use crate::numcore::{no_grad, DiffTensor, ParamStore};

pub const BENCH_HEADER: &str = "n_points,n_voxels,macs_fine,macs_coarse,macs_baseline,ms_forward";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n_points: usize,
    pub n_voxels: usize,
    pub macs_fine: u64,
    pub macs_coarse: u64,
    /// Full-width point attention over the same base windows.
    pub macs_baseline: u64,
    pub ms_forward: f64,
}

/// Counts first-stage attention cost on each scene and times one attention
/// forward pass over random features.
pub fn bench_attention(config: &ModelConfig, scenes: &[PointCloud], seed: u64) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let stage = &config.stages[0];
    let block = config.block_config(0);
    let mut ps = ParamStore::<f32>::new(seed);
    let params = MgaParams::new(&mut ps, &block)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(scenes.len());
    for cloud in scenes {
        let idx = WindowIndex::build(&cloud.coords, stage.window_spec(0, config.lite_mga))?;
        let macs = count_attention_macs(stage.channels, &idx);
        let (fine, coarse) = match block.mode {
            MgaMode::Shunted => (macs.point_branch, macs.voxel_branch),
            MgaMode::Sum => (2 * macs.point_branch, 2 * macs.voxel_branch),
            MgaMode::PointOnly => (macs.baseline_full_point, 0),
        };
        let n = cloud.len();
        let data = (0..n * stage.channels).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let feats = DiffTensor::new(&[n, stage.channels], data)?;
        let t = Instant::now();
        no_grad(|| mga(&params, &feats, &idx, &cloud.coords))?;
        rows.push(BenchRow {
            n_points: n,
            n_voxels: idx.num_voxels(),
            macs_fine: fine,
            macs_coarse: coarse,
            macs_baseline: macs.baseline_full_point,
            ms_forward: t.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{BENCH_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.3}",
            r.n_points, r.n_voxels, r.macs_fine, r.macs_coarse, r.macs_baseline, r.ms_forward
        );
    }
    s
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    std::fs::write(path, bench_csv(rows)).map_err(|e| Error::io(path, e))
}
