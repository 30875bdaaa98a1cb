use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Least-squares line through (ln x, ln y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    pub points: usize,
}

impl ExponentFit {
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

/// 1 + √|ln x|.
pub fn log_factor(x: f64) -> f64 {
    1.0 + x.ln().abs().sqrt()
}

/// Fits y ≈ e^b x^a; with `log_correction` y is first divided by 1 + √|ln x|.
pub fn fit_exponent(points: &[(f64, f64)], log_correction: bool) -> Result<ExponentFit> {
    if points.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "exponent fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0) || !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonPositiveData);
    }
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| {
            let y = if log_correction { y / log_factor(x) } else { y };
            (x.ln(), y.ln())
        })
        .collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("exponent fit needs distinct abscissae".into()));
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = logs.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(ExponentFit {
        slope,
        intercept,
        residual: (ss / n).sqrt(),
        points: points.len(),
    })
}
