//! Summaries of replicated experiments: log-log rate fits, one-dimensional
//! Wasserstein-2 barycenters and the theoretical contraction exponents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadvar::{default_ell, SieveSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
    /// `(log n, log error)`.
    pub points: Vec<(f64, f64)>,
}

/// Ordinary least squares of `log(error)` on `log(n)`.
pub fn rate_regression(ns: &[f64], errors: &[f64]) -> Result<RateFit> {
    if ns.len() != errors.len() {
        return Err(Error::validation("sample sizes and errors differ in length"));
    }
    if ns.len() < 3 {
        return Err(Error::validation("a rate fit needs at least three points"));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
        return Err(Error::validation(format!("errors must be finite and > 0, got {e}")));
    }
    if ns.iter().any(|n| !(*n > 0.0)) {
        return Err(Error::validation("sample sizes must be > 0"));
    }
    let points: Vec<(f64, f64)> = ns.iter().zip(errors).map(|(n, e)| (n.ln(), e.ln())).collect();
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::validation("sample sizes must not all be equal"));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr_slope = (rss / (k - 2.0) / sxx).sqrt();
    Ok(RateFit { slope, intercept, stderr_slope, points })
}

/// Linear-interpolation empirical quantile of sorted data at `p ∈ [0, 1]`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub const DEFAULT_QUANTILES: usize = 512;

/// Barycenter of one-dimensional samples: the average of their quantile
/// functions on the grid `p_k = (k + ½)/K`, returned as `K` sorted values.
pub fn w2_barycenter(sample_sets: &[Vec<f64>], quantiles: usize) -> Result<Vec<f64>> {
    if sample_sets.is_empty() || sample_sets.iter().any(|s| s.is_empty()) {
        return Err(Error::validation("barycenter needs at least one nonempty sample set"));
    }
    if quantiles == 0 {
        return Err(Error::validation("quantile grid must be nonempty"));
    }
    // deviations from the first set keep identical inputs exact
    let mut base: Option<Vec<f64>> = None;
    let mut out = vec![0.0; quantiles];
    for set in sample_sets {
        let mut s = set.clone();
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("samples must be finite"));
        }
        s.sort_by(f64::total_cmp);
        let q: Vec<f64> = (0..quantiles).map(|k| quantile_sorted(&s, (k as f64 + 0.5) / quantiles as f64)).collect();
        match &base {
            None => base = Some(q),
            Some(b) => out.iter_mut().zip(q.iter().zip(b)).for_each(|(o, (x, y))| *o += x - y),
        }
    }
    let c = sample_sets.len() as f64;
    let base = base.expect("nonempty");
    Ok(base.iter().zip(&out).map(|(b, o)| b + o / c).collect())
}

/// `(b₁, b₂) = (1/{2(4ν/d + 1)}, 1/2)`.
pub fn theoretical_rates(nu: f64, d: usize) -> (f64, f64) {
    (1.0 / (2.0 * (4.0 * nu / d as f64 + 1.0)), 0.5)
}

/// Contraction exponents for explicit sieve exponents, cell exponent `gamma`
/// and slack `varsigma > 0`, using `ℓ = ℓ⋆`.
pub fn contraction_exponents(nu: f64, d: usize, gamma: f64, sieve: &SieveSpec, varsigma: f64) -> Result<(f64, f64)> {
    sieve.validate(nu, d, gamma)?;
    let df = d as f64;
    let ell = default_ell(nu, d) as f64;
    let g = 1.0 - gamma;
    let SieveSpec { rho1, rho21, rho22, .. } = *sieve;
    let b1 = [
        0.5 - 2.0 * g * nu / df - rho22,
        g / 2.0 - varsigma,
        0.25 + g * (ell - 2.0 * nu) / df - (rho1 + rho22) / 2.0,
        g / 4.0 + g * (ell - nu) / df - rho1 / 2.0 - varsigma,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    let b2 = [
        0.5,
        g * (4.0 * nu + df) / (2.0 * df) - rho21 - varsigma,
        0.25 + g * ell / df - (rho1 + rho21) / 2.0,
        g * (4.0 * nu + df + 4.0 * ell) / (4.0 * df) - (rho1 + 2.0 * rho21) / 2.0 - varsigma,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    Ok((b1, b2))
}
