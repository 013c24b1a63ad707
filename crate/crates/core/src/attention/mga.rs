use super::kernel::{attention_pairs, grouped_attention, Attended};
use crate::error::{Error, Result};
use crate::geometry::{Point3, WindowIndex};
use crate::numcore::{DiffTensor, Init, LayerNorm, Linear, Mlp, ParamStore, ReduceKind, Scalar, SegmentMap};

/// How the two attention granularities are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgaMode {
    /// Fine heads and coarse heads each get half the channels and are
    /// concatenated, fine first.
    Shunted,
    /// Both branches run at full width with all heads and are added.
    Sum,
    /// Full-width point attention in the base window, no voxel branch.
    PointOnly,
}

/// Hyperparameters of one transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockConfig {
    pub channels: usize,
    pub heads: usize,
    pub mode: MgaMode,
    pub re_attention: bool,
    /// Output projection after the branch merge.
    pub output_proj: bool,
    /// Learned per-head relative position bias in the point branch.
    pub rel_pos_bias: bool,
    pub ffn_ratio: usize,
    /// Start the gate's last layer at zero so every gate opens at 0.5.
    pub zero_gate_init: bool,
}

impl BlockConfig {
    pub fn new(channels: usize, heads: usize) -> Self {
        BlockConfig {
            channels,
            heads,
            mode: MgaMode::Shunted,
            re_attention: true,
            output_proj: true,
            rel_pos_bias: false,
            ffn_ratio: 4,
            zero_gate_init: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h) = (self.channels, self.heads);
        if h == 0 || h % 2 != 0 {
            return Err(Error::Config(format!("head count must be even and positive, got {h}")));
        }
        if c % h != 0 {
            return Err(Error::Config(format!("{c} channels do not split into {h} heads")));
        }
        if self.ffn_ratio == 0 {
            return Err(Error::Config("ffn expansion must be >= 1".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Channel width and head count of each branch.
    pub fn branch_shape(&self) -> (usize, usize) {
        match self.mode {
            MgaMode::Shunted => (self.channels / 2, self.heads / 2),
            MgaMode::Sum | MgaMode::PointOnly => (self.channels, self.heads),
        }
    }
}

/// Query/key/value projections of one branch; no bias, so zero value
/// weights silence the branch exactly.
#[derive(Clone)]
pub struct Projections<T: Scalar> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
}

/// Voxel-branch parameters.
#[derive(Clone)]
pub struct CoarseParams<T: Scalar> {
    /// Token MLP. `None` is the identity, used by tests.
    pub phi: Option<Mlp<T>>,
    pub norm: LayerNorm<T>,
    pub proj: Projections<T>,
}

#[derive(Clone)]
pub struct MgaParams<T: Scalar> {
    pub channels: usize,
    pub heads: usize,
    pub mode: MgaMode,
    /// Shared by every point-side input.
    pub norm: LayerNorm<T>,
    pub fine: Projections<T>,
    pub coarse: Option<CoarseParams<T>>,
    pub out: Option<Linear<T>>,
    pub rel_bias: Option<Mlp<T>>,
}

impl<T: Scalar> MgaParams<T> {
    pub fn new(ps: &mut ParamStore<T>, cfg: &BlockConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let (w, bh) = cfg.branch_shape();
        Ok(MgaParams {
            channels: c,
            heads: cfg.heads,
            mode: cfg.mode,
            norm: LayerNorm::new(ps, "norm", c),
            fine: Projections {
                q: Linear::new(ps, "q2", c, w, false),
                k: Linear::new(ps, "k2", c, w, false),
                v: Linear::new(ps, "v2", c, w, false),
            },
            coarse: (cfg.mode != MgaMode::PointOnly).then(|| CoarseParams {
                phi: Some(Mlp::new(ps, "phi", c, c, c)),
                norm: LayerNorm::new(ps, "voxel_norm", c),
                proj: Projections {
                    q: Linear::new(ps, "q1", c, w, false),
                    k: Linear::new(ps, "k1", c, w, false),
                    v: Linear::new(ps, "v1", c, w, false),
                },
            }),
            out: cfg.output_proj.then(|| Linear::new(ps, "out", c, c, true)),
            rel_bias: cfg.rel_pos_bias.then(|| Mlp::new(ps, "rel_bias", 3, 16, bh)),
        })
    }

    fn branch_heads(&self) -> usize {
        match self.mode {
            MgaMode::Shunted => self.heads / 2,
            _ => self.heads,
        }
    }

    fn check_input(&self, feats: &DiffTensor<T>, idx: &WindowIndex) -> Result<()> {
        if feats.rank() != 2 || feats.shape()[1] != self.channels || feats.shape()[0] != idx.num_points() {
            return Err(Error::dim(
                "mga",
                format!(
                    "features {:?} for {} points with {} channels",
                    feats.shape(),
                    idx.num_points(),
                    self.channels
                ),
            ));
        }
        Ok(())
    }
}

/// Mean of member point features per occupied voxel, passed through `phi`.
/// Returns the tokens and their grouping by voxel window.
pub fn voxel_tokenize<T: Scalar>(
    feats: &DiffTensor<T>,
    idx: &WindowIndex,
    phi: Option<&Mlp<T>>,
) -> Result<(DiffTensor<T>, SegmentMap)> {
    let (mean, _) = feats.segmented_reduce(&idx.voxel_segments, ReduceKind::Mean)?;
    let tokens = match phi {
        Some(m) => m.forward(&mean)?,
        None => mean,
    };
    Ok((tokens, idx.voxel_token_segments.clone()))
}

fn pvca_normed<T: Scalar>(
    p: &MgaParams<T>,
    raw: &DiffTensor<T>,
    normed: &DiffTensor<T>,
    idx: &WindowIndex,
) -> Result<Attended<T>> {
    let coarse = p
        .coarse
        .as_ref()
        .ok_or_else(|| Error::Config("point-only attention has no voxel branch".into()))?;
    let (tokens, token_seg) = voxel_tokenize(raw, idx, coarse.phi.as_ref())?;
    let tn = coarse.norm.forward(&tokens)?;
    let q = coarse.proj.q.forward(normed)?;
    let k = coarse.proj.k.forward(&tn)?;
    let v = coarse.proj.v.forward(&tn)?;
    grouped_attention(&q, &k, &v, &idx.voxel_window_segments, &token_seg, p.branch_heads(), None)
}

fn point_normed<T: Scalar>(
    p: &MgaParams<T>,
    normed: &DiffTensor<T>,
    idx: &WindowIndex,
    coords: &[Point3],
) -> Result<Attended<T>> {
    let q = p.fine.q.forward(normed)?;
    let k = p.fine.k.forward(normed)?;
    let v = p.fine.v.forward(normed)?;
    let seg = &idx.base_segments;
    let bias = match &p.rel_bias {
        Some(mlp) => {
            if coords.len() != idx.num_points() {
                return Err(Error::dim(
                    "point_attention",
                    format!("{} coordinates for {} points", coords.len(), idx.num_points()),
                ));
            }
            let inv = 1.0 / idx.spec.base;
            let offsets: Vec<T> = attention_pairs(seg, seg)
                .into_iter()
                .flat_map(|(i, j)| (0..3).map(move |a| (i, j, a)))
                .map(|(i, j, a)| T::of((coords[i][a] - coords[j][a]) * inv))
                .collect();
            let n = offsets.len() / 3;
            Some(mlp.forward(&DiffTensor::new(&[n, 3], offsets)?)?)
        }
        None => None,
    };
    grouped_attention(&q, &k, &v, seg, seg, p.branch_heads(), bias.as_ref())
}

/// Point-voxel cross attention: every point queries the voxel tokens of its
/// voxel window. Output width is the branch width.
pub fn pvca<T: Scalar>(p: &MgaParams<T>, feats: &DiffTensor<T>, idx: &WindowIndex) -> Result<Attended<T>> {
    p.check_input(feats, idx)?;
    let normed = p.norm.forward(feats)?;
    pvca_normed(p, feats, &normed, idx)
}

/// Windowed point self-attention inside base windows.
pub fn point_attention<T: Scalar>(
    p: &MgaParams<T>,
    feats: &DiffTensor<T>,
    idx: &WindowIndex,
    coords: &[Point3],
) -> Result<Attended<T>> {
    p.check_input(feats, idx)?;
    let normed = p.norm.forward(feats)?;
    point_normed(p, &normed, idx, coords)
}

/// Branch outputs and the merged multi-granularity result.
pub struct MgaOutput<T: Scalar> {
    pub fine: DiffTensor<T>,
    pub coarse: Option<DiffTensor<T>>,
    /// Branch merge before the output projection.
    pub merged: DiffTensor<T>,
    pub out: DiffTensor<T>,
    pub fine_pairs: usize,
    pub coarse_pairs: usize,
}

pub fn mga<T: Scalar>(
    p: &MgaParams<T>,
    feats: &DiffTensor<T>,
    idx: &WindowIndex,
    coords: &[Point3],
) -> Result<MgaOutput<T>> {
    p.check_input(feats, idx)?;
    let normed = p.norm.forward(feats)?;
    let fine = point_normed(p, &normed, idx, coords)?;
    let coarse = match p.mode {
        MgaMode::PointOnly => None,
        _ => Some(pvca_normed(p, feats, &normed, idx)?),
    };
    let merged = match (&coarse, p.mode) {
        (Some(c), MgaMode::Shunted) => DiffTensor::concat_cols(&[&fine.out, &c.out])?,
        (Some(c), _) => fine.out.add(&c.out)?,
        (None, _) => fine.out.clone(),
    };
    let out = match &p.out {
        Some(l) => l.forward(&merged)?,
        None => merged.clone(),
    };
    Ok(MgaOutput {
        fine: fine.out,
        coarse_pairs: coarse.as_ref().map_or(0, |c| c.pairs),
        coarse: coarse.map(|c| c.out),
        merged,
        out,
        fine_pairs: fine.pairs,
    })
}

/// Gate network producing one logit per head and point.
#[derive(Clone)]
pub struct ReAttentionParams<T: Scalar> {
    pub gamma: Mlp<T>,
    pub heads: usize,
}

impl<T: Scalar> ReAttentionParams<T> {
    pub fn new(ps: &mut ParamStore<T>, channels: usize, heads: usize, zero_init: bool) -> Self {
        let gamma = ps.scope("gamma", |ps| {
            let fc1 = Linear::new(ps, "fc1", channels, heads, true);
            let fc2 = if zero_init {
                Linear::with_init(ps, "fc2", heads, heads, true, Init::Zeros)
            } else {
                Linear::new(ps, "fc2", heads, heads, true)
            };
            Mlp { fc1, fc2 }
        });
        ReAttentionParams { gamma, heads }
    }

    /// Gate values `sigmoid(gamma(f_in))`, shape `[N, H]`.
    pub fn gates(&self, f_in: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        Ok(self.gamma.forward(f_in)?.sigmoid())
    }
}

/// Scales each head's channels of `f_prime` by that head's gate computed
/// from the block input. Returns the gated features and the gates.
pub fn re_attention<T: Scalar>(
    f_in: &DiffTensor<T>,
    f_prime: &DiffTensor<T>,
    params: &ReAttentionParams<T>,
) -> Result<(DiffTensor<T>, DiffTensor<T>)> {
    if f_in.shape() != f_prime.shape() || f_prime.rank() != 2 {
        return Err(Error::dim(
            "re_attention",
            format!("input {:?} vs attention output {:?}", f_in.shape(), f_prime.shape()),
        ));
    }
    let c = f_prime.shape()[1];
    if !c.is_multiple_of(params.heads) {
        return Err(Error::dim("re_attention", format!("{c} channels over {} heads", params.heads)));
    }
    let alpha = params.gates(f_in)?;
    let out = f_prime.mul(&alpha.repeat_cols(c / params.heads)?)?;
    Ok((out, alpha))
}

#[derive(Clone)]
pub struct SatBlockParams<T: Scalar> {
    pub config: BlockConfig,
    pub mga: MgaParams<T>,
    pub gate: Option<ReAttentionParams<T>>,
    pub ffn_norm: LayerNorm<T>,
    pub ffn: Mlp<T>,
}

impl<T: Scalar> SatBlockParams<T> {
    pub fn new(ps: &mut ParamStore<T>, cfg: &BlockConfig) -> Result<Self> {
        let mga = ps.scope("mga", |ps| MgaParams::new(ps, cfg))?;
        let c = cfg.channels;
        Ok(SatBlockParams {
            config: cfg.clone(),
            mga,
            gate: cfg
                .re_attention
                .then(|| ReAttentionParams::new(ps, c, cfg.heads, cfg.zero_gate_init)),
            ffn_norm: LayerNorm::new(ps, "ffn_norm", c),
            ffn: Mlp::new(ps, "ffn", c, cfg.ffn_ratio * c, c),
        })
    }
}

pub struct BlockOutput<T: Scalar> {
    pub out: DiffTensor<T>,
    /// Re-attention gates `[N, H]` when the gate is enabled.
    pub gates: Option<DiffTensor<T>>,
}

/// `F = F_in + gate(F_in) * MGA(F_in)`, then `F = F + FFN(LN(F))`.
pub fn sat_block<T: Scalar>(
    p: &SatBlockParams<T>,
    f_in: &DiffTensor<T>,
    idx: &WindowIndex,
    coords: &[Point3],
) -> Result<BlockOutput<T>> {
    let attn = mga(&p.mga, f_in, idx, coords)?.out;
    let (attn, gates) = match &p.gate {
        Some(g) => {
            let (o, a) = re_attention(f_in, &attn, g)?;
            (o, Some(a))
        }
        None => (attn, None),
    };
    let f = f_in.add(&attn)?;
    let out = f.add(&p.ffn.forward(&p.ffn_norm.forward(&f)?)?)?;
    Ok(BlockOutput { out, gates })
}

/// Multiply-accumulate counts of the attention score and value products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MacCounts {
    /// Half-width point attention in base windows: `sum n_w^2 * C/2`.
    pub point_branch: u64,
    /// Half-width point-voxel attention: `sum n_W * v_W * C/2`.
    pub voxel_branch: u64,
    /// Full-width point attention in base windows: `sum n_w^2 * C`.
    pub baseline_full_point: u64,
}

impl MacCounts {
    /// Cost of the given merge mode, relative to the same counts.
    pub fn for_mode(&self, mode: MgaMode) -> u64 {
        match mode {
            MgaMode::Shunted => self.point_branch + self.voxel_branch,
            MgaMode::Sum => 2 * (self.point_branch + self.voxel_branch),
            MgaMode::PointOnly => self.baseline_full_point,
        }
    }
}

pub fn count_attention_macs(channels: usize, idx: &WindowIndex) -> MacCounts {
    let half = (channels / 2) as u64;
    let base: u64 = (0..idx.num_base_windows())
        .map(|w| (idx.base_segments.count(w) as u64).pow(2))
        .sum();
    let cross: u64 = (0..idx.num_voxel_windows())
        .map(|w| idx.voxel_window_segments.count(w) as u64 * idx.voxel_token_segments.count(w) as u64)
        .sum();
    MacCounts {
        point_branch: base * half,
        voxel_branch: cross * half,
        baseline_full_point: base * channels as u64,
    }
}
