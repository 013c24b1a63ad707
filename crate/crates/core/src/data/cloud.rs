use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Class names of the default palette, in label order.
pub const CLASS_NAMES: [&str; 7] = ["floor", "wall", "ceiling", "table", "board", "chair", "clutter"];

pub const NUM_CLASSES: usize = CLASS_NAMES.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];

    /// Size class of a default-palette label.
    pub fn of_label(label: usize) -> SizeClass {
        match label {
            0..=2 => SizeClass::Large,
            3 | 4 => SizeClass::Medium,
            _ => SizeClass::Small,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }
}

/// Labelled points with RGB colors in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub coords: Vec<Point3>,
    pub colors: Vec<[f64; 3]>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub size_class: Option<Vec<SizeClass>>,
}

impl PointCloud {
    pub fn new(coords: Vec<Point3>, colors: Vec<[f64; 3]>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let c = PointCloud {
            coords,
            colors,
            labels,
            num_classes,
            size_class: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.coords.len();
        if n == 0 {
            return Err(Error::Validation("point cloud is empty".into()));
        }
        if self.colors.len() != n || self.labels.len() != n {
            return Err(Error::Validation(format!(
                "{n} points but {} colors and {} labels",
                self.colors.len(),
                self.labels.len()
            )));
        }
        if let Some(s) = &self.size_class {
            if s.len() != n {
                return Err(Error::Validation(format!("{n} points but {} size classes", s.len())));
            }
        }
        if let Some((i, &l)) = self.labels.iter().enumerate().find(|(_, &l)| l >= self.num_classes) {
            return Err(Error::Validation(format!(
                "point {i} has label {l}, class count is {}",
                self.num_classes
            )));
        }
        if let Some(i) = self.coords.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Validation(format!("point {i} has non-finite coordinates")));
        }
        Ok(())
    }

    /// The points at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
            colors: indices.iter().map(|&i| self.colors[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            size_class: self
                .size_class
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}
