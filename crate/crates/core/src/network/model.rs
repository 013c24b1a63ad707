use std::path::Path;

use super::config::ModelConfig;
use crate::attention::{sat_block, SatBlockParams};
use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample, knn, Interpolation, Point3, WindowIndex};
use crate::numcore::{
    load_params, read_checkpoint, write_checkpoint, DiffTensor, LayerNorm, Linear, Mlp, ParamStore,
    ReduceKind, Scalar, SegmentMap,
};

/// File written next to a checkpoint describing the architecture.
pub const MODEL_CONFIG_FILE: &str = "model.cfg";

/// Farthest-point downsampling followed by neighbourhood max pooling of
/// per-point lifted features.
#[derive(Clone)]
pub struct TransitionDown<T: Scalar> {
    pub lift: Linear<T>,
    pub ratio: usize,
    pub k: usize,
}

/// Coarse level produced by [`TransitionDown::forward`].
pub struct Downsampled<T: Scalar> {
    /// Index of each kept point in the finer level.
    pub selected: Vec<usize>,
    pub coords: Vec<Point3>,
    pub feats: DiffTensor<T>,
}

impl<T: Scalar> TransitionDown<T> {
    pub fn new(ps: &mut ParamStore<T>, input: usize, output: usize, ratio: usize, k: usize) -> Self {
        TransitionDown {
            lift: Linear::new(ps, "lift", input, output, true),
            ratio,
            k,
        }
    }

    pub fn forward(&self, coords: &[Point3], feats: &DiffTensor<T>) -> Result<Downsampled<T>> {
        let n = coords.len();
        if n == 0 {
            return Err(Error::Parameter("transition down needs at least one point".into()));
        }
        let m = n.div_ceil(self.ratio);
        let selected = farthest_point_sample(coords, m, None)?;
        let centers: Vec<Point3> = selected.iter().map(|&i| coords[i]).collect();
        let k = self.k.min(n);
        let nb = knn(coords, &centers, k)?;
        let lifted = self.lift.forward(feats)?.gelu();
        let grouped = lifted.gather_rows(&nb.indices)?;
        let (pooled, _) = grouped.segmented_reduce(&SegmentMap::uniform(m, k), ReduceKind::Max)?;
        Ok(Downsampled {
            selected,
            coords: centers,
            feats: pooled,
        })
    }
}

/// Interpolates coarse features to the finer level, adds the projected skip
/// features and mixes with an MLP.
#[derive(Clone)]
pub struct TransitionUp<T: Scalar> {
    pub skip: Linear<T>,
    pub mlp: Mlp<T>,
}

impl<T: Scalar> TransitionUp<T> {
    pub fn new(ps: &mut ParamStore<T>, coarse: usize, fine: usize) -> Self {
        TransitionUp {
            skip: Linear::new(ps, "skip", fine, coarse, true),
            mlp: Mlp::new(ps, "mlp", coarse, fine, fine),
        }
    }

    pub fn forward(
        &self,
        coarse_coords: &[Point3],
        coarse_feats: &DiffTensor<T>,
        fine_coords: &[Point3],
        skip: &DiffTensor<T>,
    ) -> Result<DiffTensor<T>> {
        let up = Interpolation::new(coarse_coords, fine_coords)?.apply(coarse_feats)?;
        self.mlp.forward(&up.add(&self.skip.forward(skip)?)?)
    }
}

#[derive(Clone)]
pub struct Stage<T: Scalar> {
    pub down: Option<TransitionDown<T>>,
    pub blocks: Vec<SatBlockParams<T>>,
}

/// Re-attention gates of one block, for diagnostics.
#[derive(Debug, Clone)]
pub struct GateCapture {
    pub stage: usize,
    pub block: usize,
    pub heads: usize,
    /// Row-major `[points, heads]`.
    pub values: Vec<f64>,
    /// Input index of each point at this stage.
    pub sources: Vec<usize>,
}

pub struct ForwardOutput<T: Scalar> {
    /// `[N, classes]`, rows in input order.
    pub logits: DiffTensor<T>,
    pub gates: Vec<GateCapture>,
    /// Point count per encoder stage.
    pub stage_points: Vec<usize>,
}

/// The hierarchical segmentation network.
pub struct SatModel<T: Scalar> {
    pub config: ModelConfig,
    pub embed: Mlp<T>,
    pub stages: Vec<Stage<T>>,
    /// `ups[s]` maps stage `s + 1` back to stage `s`.
    pub ups: Vec<TransitionUp<T>>,
    pub head_norm: LayerNorm<T>,
    pub head: Linear<T>,
    params: Vec<(String, DiffTensor<T>)>,
}

/// Order used for every forward pass: coordinates, then colors, then index.
pub fn canonical_order(cloud: &PointCloud) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |i: usize| {
            let (p, c) = (cloud.coords[i], cloud.colors[i]);
            [p[0], p[1], p[2], c[0], c[1], c[2]]
        };
        let (ka, kb) = (key(a), key(b));
        ka.iter()
            .zip(&kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

impl<T: Scalar> SatModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new(seed);
        let c1 = config.stages[0].channels;
        let embed = Mlp::new(&mut ps, "embed", config.in_channels, c1, c1);
        let mut stages = Vec::new();
        for (s, sc) in config.stages.iter().enumerate() {
            let bc = config.block_config(s);
            let stage = ps.scope(format!("enc{s}"), |ps| -> Result<Stage<T>> {
                let down = (s > 0).then(|| {
                    ps.scope("down", |ps| {
                        TransitionDown::new(ps, config.stages[s - 1].channels, sc.channels, config.downsample, config.knn)
                    })
                });
                let blocks = (0..sc.blocks)
                    .map(|b| ps.scope(format!("block{b}"), |ps| SatBlockParams::new(ps, &bc)))
                    .collect::<Result<_>>()?;
                Ok(Stage { down, blocks })
            })?;
            stages.push(stage);
        }
        let ups = (0..config.stages.len() - 1)
            .map(|s| {
                ps.scope(format!("dec{s}"), |ps| {
                    TransitionUp::new(ps, config.stages[s + 1].channels, config.stages[s].channels)
                })
            })
            .collect();
        let head_norm = LayerNorm::new(&mut ps, "head_norm", c1);
        let head = Linear::new(&mut ps, "head", c1, config.num_classes, true);
        Ok(SatModel {
            config,
            embed,
            stages,
            ups,
            head_norm,
            head,
            params: ps.into_params(),
        })
    }

    pub fn params(&self) -> &[(String, DiffTensor<T>)] {
        &self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn forward(&self, cloud: &PointCloud) -> Result<DiffTensor<T>> {
        Ok(self.forward_with(cloud, false)?.logits)
    }

    /// Forward pass; optionally records every block's re-attention gates.
    ///
    /// Points are processed in [`canonical_order`], so the result does not
    /// depend on the order of the input rows.
    pub fn forward_with(&self, cloud: &PointCloud, capture: bool) -> Result<ForwardOutput<T>> {
        cloud.validate()?;
        let order = canonical_order(cloud);
        let coords: Vec<Point3> = order.iter().map(|&i| cloud.coords[i]).collect();
        let lo = [0, 1, 2].map(|a| coords.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min));
        let mut input = Vec::with_capacity(coords.len() * 6);
        for &i in &order {
            let (p, c) = (cloud.coords[i], cloud.colors[i]);
            input.extend([p[0] - lo[0], p[1] - lo[1], p[2] - lo[2], c[0], c[1], c[2]].map(T::of));
        }
        let x = DiffTensor::new(&[coords.len(), 6], input)?;
        let mut feats = self.embed.forward(&x)?;
        feats.check_finite("embed")?;

        let mut gates = Vec::new();
        let mut levels: Vec<(Vec<Point3>, DiffTensor<T>)> = Vec::new();
        let mut sources = order.clone();
        let mut pts = coords;
        for (s, stage) in self.stages.iter().enumerate() {
            if let Some(down) = &stage.down {
                let d = down.forward(&pts, &feats)?;
                d.feats.check_finite(&format!("enc{s}.down"))?;
                sources = d.selected.iter().map(|&i| sources[i]).collect();
                pts = d.coords;
                feats = d.feats;
            }
            let sc = &self.config.stages[s];
            let mut indexes: [Option<WindowIndex>; 2] = [None, None];
            for (b, block) in stage.blocks.iter().enumerate() {
                let spec = sc.window_spec(b, self.config.lite_mga);
                let slot = &mut indexes[sc.shift[b] as usize];
                if slot.is_none() {
                    *slot = Some(WindowIndex::build(&pts, spec)?);
                }
                let idx = slot.as_ref().expect("built above");
                let out = sat_block(block, &feats, idx, &pts)?;
                out.out.check_finite(&format!("enc{s}.block{b}"))?;
                if capture {
                    if let Some(g) = &out.gates {
                        gates.push(GateCapture {
                            stage: s,
                            block: b,
                            heads: sc.heads,
                            values: g.to_f64_vec(),
                            sources: sources.clone(),
                        });
                    }
                }
                feats = out.out;
            }
            levels.push((pts.clone(), feats.clone()));
        }
        let stage_points = levels.iter().map(|(p, _)| p.len()).collect();

        let (mut coarse_pts, mut up) = levels.pop().expect("at least one stage");
        for s in (0..levels.len()).rev() {
            let (fine_pts, skip) = &levels[s];
            up = self.ups[s].forward(&coarse_pts, &up, fine_pts, skip)?;
            up.check_finite(&format!("dec{s}"))?;
            coarse_pts = fine_pts.clone();
        }
        let logits = self.head.forward(&self.head_norm.forward(&up)?)?;
        logits.check_finite("head")?;
        let mut inverse = vec![0; order.len()];
        for (pos, &i) in order.iter().enumerate() {
            inverse[i] = pos;
        }
        Ok(ForwardOutput {
            logits: logits.gather_rows(&inverse)?,
            gates,
            stage_points,
        })
    }

    /// Writes `<dir>/<file>` and the architecture sidecar `<dir>/model.cfg`.
    pub fn save(&self, dir: &Path, file: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = dir.join(MODEL_CONFIG_FILE);
        std::fs::write(&cfg, self.config.to_config_string()).map_err(|e| Error::io(&cfg, e))?;
        write_checkpoint(&dir.join(file), &self.params)
    }

    /// Rebuilds a model from a checkpoint and the `model.cfg` beside it.
    pub fn load(checkpoint: &Path) -> Result<Self> {
        let stored = read_checkpoint(checkpoint)?;
        let dir = checkpoint.parent().unwrap_or(Path::new("."));
        let cfg_path = dir.join(MODEL_CONFIG_FILE);
        let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let model = SatModel::new(ModelConfig::from_config_str(&text)?, 0)?;
        load_params(&model.params, &stored)?;
        Ok(model)
    }
}
