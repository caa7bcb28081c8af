//! Regret summaries and log-log slope fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Points that survived the positivity filter.
    pub used: usize,
}

/// Least squares of `ln(regret)` on `ln(T)`. Nonpositive points are dropped
/// with a warning; fewer than three remaining points is an error.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|(t, r)| {
            let ok = *t > 0.0 && *r > 0.0 && t.is_finite() && r.is_finite();
            if !ok {
                log::warn!("fit_slope: dropping point (T = {t}, regret = {r})");
            }
            ok
        })
        .map(|(t, r)| (t.ln(), r.ln()))
        .collect();
    if kept.len() < 3 {
        return Err(Error::Parameter(format!(
            "slope fit needs at least 3 positive points, got {}",
            kept.len()
        )));
    }
    let n = kept.len() as f64;
    let mx = kept.iter().map(|p| p.0).sum::<f64>() / n;
    let my = kept.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = kept.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = kept.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = kept.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Parameter(
            "slope fit needs at least two distinct horizons".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = kept
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        used: kept.len(),
    })
}

/// Sample mean and standard error of the mean (zero for a single sample).
pub fn mean_se(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}
