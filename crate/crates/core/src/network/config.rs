use std::fmt::Write as _;

use crate::attention::{BlockConfig, MgaMode};
use crate::error::{Error, Result};
use crate::geometry::WindowSpec;

/// One encoder stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub channels: usize,
    pub blocks: usize,
    /// Base window edge (m).
    pub base_window: f64,
    /// Window ratio of the fine heads; always 1.
    pub fine_ratio: u32,
    /// Edge ratio of the voxel window to the base window.
    pub coarse_ratio: u32,
    /// Voxel edge (m).
    pub voxel: f64,
    pub heads: usize,
    /// Per block: shift the windows by half a base window.
    pub shift: Vec<bool>,
}

impl StageConfig {
    /// Heads at width 8 and shifted windows on every second block.
    pub fn new(channels: usize, blocks: usize, base_window: f64, coarse_ratio: u32, voxel: f64) -> Self {
        StageConfig {
            channels,
            blocks,
            base_window,
            fine_ratio: 1,
            coarse_ratio,
            voxel,
            heads: channels / 8,
            shift: (0..blocks).map(|b| b % 2 == 1).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::Config("every stage needs at least one block".into()));
        }
        if self.shift.len() != self.blocks {
            return Err(Error::Config(format!(
                "{} shift flags for {} blocks",
                self.shift.len(),
                self.blocks
            )));
        }
        if self.fine_ratio != 1 {
            return Err(Error::Config("fine window ratio must be 1".into()));
        }
        if self.coarse_ratio == 0 {
            return Err(Error::Config("coarse window ratio must be >= 1".into()));
        }
        if !(self.base_window > 0.0 && self.voxel > 0.0) {
            return Err(Error::Config("window and voxel sizes must be positive".into()));
        }
        BlockConfig::new(self.channels, self.heads).validate()
    }

    pub fn window_spec(&self, block: usize, lite: bool) -> WindowSpec {
        WindowSpec {
            base: self.base_window,
            ratio: if lite { 1 } else { self.coarse_ratio },
            voxel: self.voxel,
            shift: if self.shift[block] { self.base_window / 2.0 } else { 0.0 },
        }
    }
}

/// Named ablation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoReAttention,
    /// Re-attention removed and the shunted concat replaced by a sum.
    NoReAttentionSum,
    /// Re-attention removed and MGA replaced by plain point attention.
    NoReAttentionPointOnly,
    /// Shunted attention with both branches in the base window, no gate.
    LiteMga,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoReAttention,
        Variant::NoReAttentionSum,
        Variant::NoReAttentionPointOnly,
        Variant::LiteMga,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoReAttention => "no-reattention",
            Variant::NoReAttentionSum => "no-reattention-sum",
            Variant::NoReAttentionPointOnly => "no-reattention-point-only",
            Variant::LiteMga => "lite-mga",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub stages: Vec<StageConfig>,
    /// xyz + rgb.
    pub in_channels: usize,
    pub num_classes: usize,
    pub downsample: usize,
    /// Neighbours pooled by transition down.
    pub knn: usize,
    pub re_attention: bool,
    pub mode: MgaMode,
    pub lite_mga: bool,
    pub output_proj: bool,
    pub rel_pos_bias: bool,
    pub zero_gate_init: bool,
}

impl ModelConfig {
    fn with_stages(stages: Vec<StageConfig>, num_classes: usize) -> Self {
        ModelConfig {
            stages,
            in_channels: 6,
            num_classes,
            downsample: 4,
            knn: 16,
            re_attention: true,
            mode: MgaMode::Shunted,
            lite_mga: false,
            output_proj: true,
            rel_pos_bias: false,
            zero_gate_init: false,
        }
    }

    pub fn s3dis(num_classes: usize) -> Self {
        let s = |c, n, bw, vox| StageConfig::new(c, n, bw, 2, vox);
        Self::with_stages(
            vec![
                s(48, 2, 0.16, 0.08),
                s(96, 2, 0.32, 0.16),
                s(192, 6, 0.64, 0.16),
                s(384, 2, 1.28, 0.32),
            ],
            num_classes,
        )
    }

    pub fn scannet(num_classes: usize) -> Self {
        let s = |c, n, bw, vox| StageConfig::new(c, n, bw, 3, vox);
        Self::with_stages(
            vec![
                s(48, 3, 0.1, 0.1),
                s(96, 6, 0.2, 0.2),
                s(192, 6, 0.4, 0.2),
                s(384, 6, 0.8, 0.4),
                s(384, 3, 1.6, 0.4),
            ],
            num_classes,
        )
    }

    /// Two small stages with the first two S3DIS window settings.
    pub fn desk(num_classes: usize) -> Self {
        Self::with_stages(
            vec![StageConfig::new(16, 1, 0.16, 2, 0.08), StageConfig::new(32, 1, 0.32, 2, 0.16)],
            num_classes,
        )
    }

    pub fn preset(name: &str, num_classes: usize) -> Result<Self> {
        match name {
            "s3dis" => Ok(Self::s3dis(num_classes)),
            "scannet" => Ok(Self::scannet(num_classes)),
            "desk" => Ok(Self::desk(num_classes)),
            _ => Err(Error::Config(format!("unknown model preset `{name}` (expected s3dis, scannet or desk)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("model needs at least one stage".into()));
        }
        if self.num_classes < 1 || self.in_channels != 6 {
            return Err(Error::Config(format!(
                "need >= 1 class and 6 input channels, got {} and {}",
                self.num_classes, self.in_channels
            )));
        }
        if self.downsample < 1 || self.knn < 1 {
            return Err(Error::Config("downsample ratio and knn must be >= 1".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.validate().map_err(|e| Error::Config(format!("stage {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn block_config(&self, stage: usize) -> BlockConfig {
        let s = &self.stages[stage];
        BlockConfig {
            channels: s.channels,
            heads: s.heads,
            mode: self.mode,
            re_attention: self.re_attention,
            output_proj: self.output_proj,
            rel_pos_bias: self.rel_pos_bias,
            ffn_ratio: 4,
            zero_gate_init: self.zero_gate_init,
        }
    }

    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.blocks).sum()
    }

    /// The variant these switches correspond to, if any.
    pub fn variant(&self) -> Option<Variant> {
        match (self.re_attention, self.mode, self.lite_mga) {
            (true, MgaMode::Shunted, false) => Some(Variant::Full),
            (false, MgaMode::Shunted, false) => Some(Variant::NoReAttention),
            (false, MgaMode::Sum, false) => Some(Variant::NoReAttentionSum),
            (false, MgaMode::PointOnly, false) => Some(Variant::NoReAttentionPointOnly),
            (false, MgaMode::Shunted, true) => Some(Variant::LiteMga),
            _ => None,
        }
    }

    /// Flat `key = value` text; [`ModelConfig::from_config_str`] reads it back.
    pub fn to_config_string(&self) -> String {
        let join = |f: &dyn Fn(&StageConfig) -> String| {
            self.stages.iter().map(f).collect::<Vec<_>>().join(",")
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("classes", self.num_classes.to_string());
        kv("in_channels", self.in_channels.to_string());
        kv("downsample", self.downsample.to_string());
        kv("knn", self.knn.to_string());
        kv("re_attention", self.re_attention.to_string());
        kv("mga_mode", mode_name(self.mode).to_string());
        kv("lite_mga", self.lite_mga.to_string());
        kv("output_proj", self.output_proj.to_string());
        kv("rel_pos_bias", self.rel_pos_bias.to_string());
        kv("zero_gate_init", self.zero_gate_init.to_string());
        kv("channels", join(&|s| s.channels.to_string()));
        kv("blocks", join(&|s| s.blocks.to_string()));
        kv("heads", join(&|s| s.heads.to_string()));
        kv("base_window", join(&|s| s.base_window.to_string()));
        kv("coarse_ratio", join(&|s| s.coarse_ratio.to_string()));
        kv("voxel", join(&|s| s.voxel.to_string()));
        kv(
            "shift",
            join(&|s| s.shift.iter().map(|&b| if b { "1" } else { "0" }).collect::<String>()),
        );
        s
    }

    pub fn from_config_str(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| {
            kv.iter()
                .rev()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("model config lacks `{k}`")))
        };
        let list = |k: &str| -> Result<Vec<String>> { Ok(get(k)?.split(',').map(|s| s.trim().to_string()).collect()) };
        let channels: Vec<usize> = parse_list(&list("channels")?, "channels")?;
        let n = channels.len();
        let blocks: Vec<usize> = parse_list(&list("blocks")?, "blocks")?;
        let heads: Vec<usize> = parse_list(&list("heads")?, "heads")?;
        let base: Vec<f64> = parse_list(&list("base_window")?, "base_window")?;
        let ratio: Vec<u32> = parse_list(&list("coarse_ratio")?, "coarse_ratio")?;
        let voxel: Vec<f64> = parse_list(&list("voxel")?, "voxel")?;
        let shift = list("shift")?;
        for (k, len) in [
            ("blocks", blocks.len()),
            ("heads", heads.len()),
            ("base_window", base.len()),
            ("coarse_ratio", ratio.len()),
            ("voxel", voxel.len()),
            ("shift", shift.len()),
        ] {
            if len != n {
                return Err(Error::Config(format!("`{k}` lists {len} stages, `channels` lists {n}")));
            }
        }
        let stages = (0..n)
            .map(|i| StageConfig {
                channels: channels[i],
                blocks: blocks[i],
                base_window: base[i],
                fine_ratio: 1,
                coarse_ratio: ratio[i],
                voxel: voxel[i],
                heads: heads[i],
                shift: shift[i].chars().map(|c| c == '1').collect(),
            })
            .collect();
        let cfg = ModelConfig {
            stages,
            in_channels: parse_value(get("in_channels")?, "in_channels")?,
            num_classes: parse_value(get("classes")?, "classes")?,
            downsample: parse_value(get("downsample")?, "downsample")?,
            knn: parse_value(get("knn")?, "knn")?,
            re_attention: parse_value(get("re_attention")?, "re_attention")?,
            mode: parse_mode(get("mga_mode")?)?,
            lite_mga: parse_value(get("lite_mga")?, "lite_mga")?,
            output_proj: parse_value(get("output_proj")?, "output_proj")?,
            rel_pos_bias: parse_value(get("rel_pos_bias")?, "rel_pos_bias")?,
            zero_gate_init: parse_value(get("zero_gate_init")?, "zero_gate_init")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn mode_name(m: MgaMode) -> &'static str {
    match m {
        MgaMode::Shunted => "shunted",
        MgaMode::Sum => "sum",
        MgaMode::PointOnly => "point_only",
    }
}

fn parse_mode(s: &str) -> Result<MgaMode> {
    match s {
        "shunted" => Ok(MgaMode::Shunted),
        "sum" => Ok(MgaMode::Sum),
        "point_only" => Ok(MgaMode::PointOnly),
        _ => Err(Error::Config(format!("unknown mga_mode `{s}`"))),
    }
}

pub fn parse_value<V: std::str::FromStr>(s: &str, key: &str) -> Result<V> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{s}`")))
}

fn parse_list<V: std::str::FromStr>(items: &[String], key: &str) -> Result<Vec<V>> {
    items.iter().map(|s| parse_value(s, key)).collect()
}

/// Parses flat `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{raw}`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Applies a named ablation to a configuration.
pub fn apply_variant(mut cfg: ModelConfig, variant: Variant) -> Result<ModelConfig> {
    match variant {
        Variant::Full => {}
        Variant::NoReAttention => cfg.re_attention = false,
        Variant::NoReAttentionSum => {
            cfg.re_attention = false;
            cfg.mode = MgaMode::Sum;
        }
        Variant::NoReAttentionPointOnly => {
            cfg.re_attention = false;
            cfg.mode = MgaMode::PointOnly;
        }
        Variant::LiteMga => {
            cfg.re_attention = false;
            cfg.lite_mga = true;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
