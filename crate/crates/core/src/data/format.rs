//! `SATPC1` text point clouds.
//!
//! ```text
//! SATPC1 <points> <feature channels> <classes>
//! x y z c1 c2 c3 label
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::cloud::PointCloud;
use crate::error::{Error, Result};

pub const FORMAT_MAGIC: &str = "SATPC1";
const CHANNELS: usize = 3;

pub fn encode_cloud(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 64 + 32);
    let _ = writeln!(s, "{FORMAT_MAGIC} {} {CHANNELS} {}", cloud.len(), cloud.num_classes);
    for ((p, c), l) in cloud.coords.iter().zip(&cloud.colors).zip(&cloud.labels) {
        let _ = writeln!(
            s,
            "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {l}",
            p[0], p[1], p[2], c[0], c[1], c[2]
        );
    }
    s
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    cloud.validate()?;
    std::fs::write(path, encode_cloud(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_cloud(&text, &path.display().to_string())
}

/// Parses `SATPC1` text; `origin` names the source in errors.
pub fn decode_cloud(text: &str, origin: &str) -> Result<PointCloud> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty file, expected SATPC1 header".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != FORMAT_MAGIC {
        return Err(err(1, format!("expected `{FORMAT_MAGIC} N C K`, got `{header}`")));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| err(1, format!("bad {what} `{s}`")));
    let n = num(fields[1], "point count")?;
    let c = num(fields[2], "channel count")?;
    let k = num(fields[3], "class count")?;
    if c != CHANNELS {
        return Err(err(1, format!("only {CHANNELS} feature channels are supported, got {c}")));
    }
    if n == 0 || k == 0 {
        return Err(err(1, "point and class counts must be positive".into()));
    }
    let mut coords = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        if labels.len() == n {
            return Err(err(lineno, format!("more than the {n} declared rows")));
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 + CHANNELS {
            return Err(err(lineno, format!("expected {} fields, got {}", 4 + CHANNELS, f.len())));
        }
        let mut v = [0.0f64; 6];
        for (slot, s) in v.iter_mut().zip(&f[..6]) {
            *slot = s
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(lineno, format!("bad number `{s}`")))?;
        }
        let label: usize = f[6].parse().map_err(|_| err(lineno, format!("bad label `{}`", f[6])))?;
        if label >= k {
            return Err(Error::Validation(format!(
                "{origin}:{lineno}: label {label} out of range for {k} classes"
            )));
        }
        coords.push([v[0], v[1], v[2]]);
        colors.push([v[3], v[4], v[5]]);
        labels.push(label);
    }
    if labels.len() != n {
        return Err(err(
            text.lines().count() + 1,
            format!("file ends after {} of {n} rows", labels.len()),
        ));
    }
    PointCloud::new(coords, colors, labels, k)
}
