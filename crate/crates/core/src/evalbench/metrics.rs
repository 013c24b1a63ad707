use crate::error::{Error, Result};

/// `K x K` counts; rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Validation("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn from_labels(truth: &[usize], pred: &[usize], k: usize) -> Result<Self> {
        let mut cm = Self::new(k);
        cm.add_labels(truth, pred)?;
        Ok(cm)
    }

    pub fn add_labels(&mut self, truth: &[usize], pred: &[usize]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::Validation(format!(
                "{} labels vs {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= self.k || p >= self.k {
                return Err(Error::Validation(format!(
                    "label pair ({t}, {p}) out of range for {} classes",
                    self.k
                )));
            }
            self.counts[t * self.k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Validation(format!("cannot merge {} and {} classes", self.k, other.k)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }
}

/// Segmentation scores in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// `None` for classes without ground-truth points.
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_acc: Vec<Option<f64>>,
    pub miou: f64,
    pub macc: f64,
    /// Overall point accuracy.
    pub oa: f64,
}

pub fn miou_macc(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Validation("confusion matrix is empty".into()));
    }
    let k = cm.num_classes();
    let mut ious = Vec::with_capacity(k);
    let mut accs = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.get(c, c) as f64;
        let gt: u64 = (0..k).map(|p| cm.get(c, p)).sum();
        let pred: u64 = (0..k).map(|t| cm.get(t, c)).sum();
        if gt == 0 {
            ious.push(None);
            accs.push(None);
            continue;
        }
        let union = gt as f64 + pred as f64 - tp;
        ious.push(Some(100.0 * tp / union));
        accs.push(Some(100.0 * tp / gt as f64));
    }
    let mean = |v: &[Option<f64>]| {
        let xs: Vec<f64> = v.iter().flatten().copied().collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    Ok(Metrics {
        miou: mean(&ious),
        macc: mean(&accs),
        oa: 100.0 * cm.correct() as f64 / total as f64,
        per_class_iou: ious,
        per_class_acc: accs,
    })
}

/// Population variance of the per-class IoUs not listed in `exclude`.
pub fn class_iou_variance(per_class_iou: &[f64], exclude: &[usize]) -> Result<f64> {
    let xs: Vec<f64> = per_class_iou
        .iter()
        .enumerate()
        .filter(|(i, _)| !exclude.contains(i))
        .map(|(_, &v)| v)
        .collect();
    if xs.len() < 2 {
        return Err(Error::Validation(format!(
            "variance needs at least 2 classes, {} remain",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    Ok(xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

/// Class order of the published S3DIS Area 5 table.
pub const S3DIS_CLASSES: [&str; 13] = [
    "ceiling", "floor", "wall", "beam", "column", "window", "door", "table", "chair", "sofa",
    "bookcase", "board", "clutter",
];

/// Index of the beam column, zero for every method.
pub const S3DIS_BEAM: usize = 3;

/// Published S3DIS Area 5 per-class IoUs of the methods that report all
/// classes.
pub const S3DIS_AREA5_ROWS: [(&str, [f64; 13]); 13] = [
    ("PointNet", [88.8, 97.3, 69.8, 1.0, 3.9, 46.3, 10.8, 59.0, 52.6, 5.9, 40.3, 26.4, 33.2]),
    ("RSNet", [93.3, 98.3, 79.2, 0.0, 15.8, 45.4, 50.1, 67.9, 65.5, 52.5, 22.5, 41.0, 43.6]),
    ("PointCNN", [92.3, 98.2, 79.4, 0.0, 17.6, 22.8, 62.1, 74.4, 80.6, 31.7, 66.7, 62.1, 56.7]),
    ("SPGraph", [89.4, 96.9, 78.1, 0.0, 42.8, 48.9, 61.6, 84.7, 75.4, 69.8, 52.6, 2.1, 52.2]),
    ("PCCN", [92.3, 96.2, 75.9, 3.0, 6.0, 69.5, 63.5, 66.9, 65.6, 47.3, 68.9, 59.1, 46.2]),
    ("PointWeb", [92.0, 98.5, 79.4, 0.0, 21.1, 59.7, 34.8, 76.3, 88.3, 46.9, 69.3, 64.9, 52.5]),
    ("MinkowskiNet", [91.8, 98.7, 86.2, 0.0, 34.1, 48.9, 62.4, 81.6, 89.8, 47.2, 74.9, 74.4, 58.6]),
    ("KPConv", [92.8, 97.3, 82.4, 0.0, 23.9, 58.0, 69.0, 81.5, 91.0, 75.4, 75.3, 66.7, 58.9]),
    ("CBL", [93.9, 98.4, 84.2, 0.0, 37.0, 57.7, 71.9, 91.7, 81.8, 77.8, 75.6, 69.1, 62.9]),
    ("Point Transformer", [94.0, 98.5, 86.3, 0.0, 38.0, 63.4, 74.3, 82.4, 89.1, 80.2, 74.3, 76.0, 59.3]),
    ("PointNeXt-XL", [94.2, 98.5, 84.4, 0.0, 37.7, 59.3, 74.0, 83.1, 91.6, 77.4, 76.72, 78.8, 60.6]),
    ("StratifiedFormer", [96.2, 98.7, 85.6, 0.0, 46.1, 60.0, 76.8, 92.6, 84.5, 77.8, 75.2, 78.1, 64.0]),
    ("SAT", [93.6, 98.5, 87.2, 0.0, 49.3, 61.1, 73.6, 83.7, 91.8, 81.7, 77.9, 82.3, 63.4]),
];

/// Name of the row with the lowest class-IoU variance.
pub fn lowest_variance_row<'a>(rows: &[(&'a str, [f64; 13])], exclude: &[usize]) -> Result<(&'a str, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for (name, ious) in rows {
        let v = class_iou_variance(ious, exclude)?;
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((name, v));
        }
    }
    best.ok_or_else(|| Error::Validation("no rows to compare".into()))
}
