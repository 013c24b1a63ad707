use super::DiffTensor;
use crate::error::{Error, Result};

/// Settings for [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Central-difference step.
    pub h: f64,
    /// Upper bound on probed coordinates per parameter; `None` probes all.
    pub max_coords: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            h: 1e-5,
            max_coords: None,
        }
    }
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences and returns the largest
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
///
/// `f` must rebuild its graph from `params` on every call. Probed coordinates
/// are spread evenly over each parameter when `max_coords` is set.
pub fn grad_check<F>(mut f: F, params: &[DiffTensor<f64>], cfg: GradCheck) -> Result<f64>
where
    F: FnMut() -> Result<DiffTensor<f64>>,
{
    for p in params {
        p.zero_grad();
    }
    let loss = f()?;
    loss.check_finite("grad_check loss")?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let eval = |f: &mut F| -> Result<f64> {
        let v = f()?.item();
        if !v.is_finite() {
            return Err(Error::NonFinite {
                site: "grad_check loss".into(),
            });
        }
        Ok(v)
    };

    let mut worst = 0.0f64;
    for (p, grad) in params.iter().zip(&analytic) {
        let n = p.len();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = p.data()[i];
            p.update_data(|d| d[i] = orig + cfg.h);
            let plus = eval(&mut f);
            p.update_data(|d| d[i] = orig - cfg.h);
            let minus = eval(&mut f);
            p.update_data(|d| d[i] = orig);
            let numeric = (plus? - minus?) / (2.0 * cfg.h);
            let a = grad[i];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(rel);
        }
    }
    for p in params {
        p.zero_grad();
    }
    Ok(worst)
}
