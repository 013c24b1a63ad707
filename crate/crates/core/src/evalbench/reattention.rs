use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{PointCloud, SizeClass};
use crate::error::{Error, Result};
use crate::network::SatModel;
use crate::numcore::{no_grad, Scalar};

/// Mean gate vectors of one SAT block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGates {
    pub stage: usize,
    pub block: usize,
    pub heads: usize,
    /// `[classes][heads]`; `None` where no point of the class reached this stage.
    pub class_means: Vec<Option<Vec<f64>>>,
    /// Indexed like `SizeClass::ALL`.
    pub size_means: Vec<Option<Vec<f64>>>,
}

impl LayerGates {
    pub fn name(&self) -> String {
        format!("enc{}.block{}", self.stage, self.block)
    }

    /// Cosine distance between the small- and large-object mean gates.
    pub fn small_large_distance(&self) -> Option<f64> {
        let small = self.size_means[0].as_ref()?;
        let large = self.size_means[2].as_ref()?;
        let dot: f64 = small.iter().zip(large).map(|(a, b)| a * b).sum();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        Some(1.0 - dot / (norm(small) * norm(large)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReAttentionReport {
    pub num_classes: usize,
    pub layers: Vec<LayerGates>,
}

#[derive(Default, Clone)]
struct Acc {
    sum: Vec<f64>,
    count: usize,
}

impl Acc {
    fn add(&mut self, row: &[f64]) {
        if self.sum.is_empty() {
            self.sum = vec![0.0; row.len()];
        }
        for (s, v) in self.sum.iter_mut().zip(row) {
            *s += v;
        }
        self.count += 1;
    }

    fn mean(&self) -> Option<Vec<f64>> {
        (self.count > 0).then(|| self.sum.iter().map(|s| s / self.count as f64).collect())
    }
}

/// Averages gate outputs per class and per object-size class for every block.
/// A point deeper in the hierarchy takes the label of the input point it was
/// sampled from.
pub fn reattention_report<T: Scalar>(model: &SatModel<T>, clouds: &[PointCloud]) -> Result<ReAttentionReport> {
    if !model.config.re_attention {
        return Err(Error::Config("model was built without re-attention gates".into()));
    }
    let k = model.config.num_classes;
    let mut classes: Vec<Vec<Acc>> = Vec::new();
    let mut sizes: Vec<Vec<Acc>> = Vec::new();
    let mut layout = Vec::new();
    for cloud in clouds {
        if cloud.num_classes != k {
            return Err(Error::Config(format!(
                "model predicts {k} classes but data has {}",
                cloud.num_classes
            )));
        }
        let out = no_grad(|| model.forward_with(cloud, true))?;
        if layout.is_empty() {
            layout = out.gates.iter().map(|g| (g.stage, g.block, g.heads)).collect();
            classes = vec![vec![Acc::default(); k]; layout.len()];
            sizes = vec![vec![Acc::default(); 3]; layout.len()];
        }
        for (l, g) in out.gates.iter().enumerate() {
            for (row, &src) in g.values.chunks(g.heads).zip(&g.sources) {
                let label = cloud.labels[src];
                classes[l][label].add(row);
                let size = SizeClass::ALL.iter().position(|&s| s == SizeClass::of_label(label)).unwrap();
                sizes[l][size].add(row);
            }
        }
    }
    let layers = layout
        .into_iter()
        .enumerate()
        .map(|(l, (stage, block, heads))| LayerGates {
            stage,
            block,
            heads,
            class_means: classes[l].iter().map(Acc::mean).collect(),
            size_means: sizes[l].iter().map(Acc::mean).collect(),
        })
        .collect();
    Ok(ReAttentionReport { num_classes: k, layers })
}

pub fn layer_csv(layer: &LayerGates) -> String {
    let mut s = String::from("layer,class");
    for h in 1..=layer.heads {
        let _ = write!(s, ",head_{h}");
    }
    s.push('\n');
    for (class, mean) in layer.class_means.iter().enumerate() {
        let _ = write!(s, "{},{class}", layer.name());
        match mean {
            Some(m) => m.iter().for_each(|v| {
                let _ = write!(s, ",{v:.6}");
            }),
            None => s.push_str(&",".repeat(layer.heads)),
        }
        s.push('\n');
    }
    s
}

pub fn trend_csv(report: &ReAttentionReport) -> String {
    let mut s = String::from("layer,stage,block,small_large_cosine_distance\n");
    for l in &report.layers {
        let d = l.small_large_distance().map_or(String::new(), |d| format!("{d:.6}"));
        let _ = writeln!(s, "{},{},{},{d}", l.name(), l.stage, l.block);
    }
    s
}

/// Loads a checkpoint, builds the report and writes one CSV per layer plus
/// the depth trend. Returns the report and the written paths.
pub fn export_reattention(
    checkpoint: &Path,
    clouds: &[PointCloud],
    out: &Path,
) -> Result<(ReAttentionReport, Vec<PathBuf>)> {
    let model = SatModel::<f32>::load(checkpoint)?;
    let report = reattention_report(&model, clouds)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for l in &report.layers {
        let path = out.join(format!("reattention_{}.csv", l.name()));
        std::fs::write(&path, layer_csv(l)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let path = out.join("reattention_trend.csv");
    std::fs::write(&path, trend_csv(&report)).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok((report, written))
}
