//! Stationary isotropic covariance families written as `θ K_{α,ν}(h)`.
//!
//! | family | θ |
//! |---|---|
//! | Matérn | σ² α^{2ν} |
//! | tapered Matérn | σ² α^{2ν} (Matérn times a compactly supported taper) |
//! | generalized Wendland | σ² α^{2ν}, support `α‖h‖ < 1` |
//! | confluent hypergeometric | σ² α^{2ν} Γ(ν+μ)/Γ(μ) |

use std::f64::consts::PI;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::specialfn::{self, integrate, QuadratureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Matern,
    TaperedMatern,
    GeneralizedWendland,
    ConfluentHypergeometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaperKind {
    /// `(1 − r/R)²₊ (1 + r/(2R))`
    Spherical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaperDescriptor {
    pub kind: TaperKind,
    pub range: f64,
}

impl TaperDescriptor {
    pub fn spherical(range: f64) -> Self {
        Self { kind: TaperKind::Spherical, range }
    }

    pub fn value(&self, r: f64) -> f64 {
        match self.kind {
            TaperKind::Spherical => {
                let x = r / self.range;
                if x >= 1.0 {
                    0.0
                } else {
                    (1.0 - x).powi(2) * (1.0 + 0.5 * x)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub family: Family,
    pub theta: f64,
    pub alpha: f64,
    pub nu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taper: Option<TaperDescriptor>,
}

/// Exact half-integer Matérn orders that get closed-form evaluation.
fn half_integer(nu: f64) -> Option<u8> {
    if nu == 0.5 {
        Some(0)
    } else if nu == 1.5 {
        Some(1)
    } else if nu == 2.5 {
        Some(2)
    } else {
        None
    }
}

impl CovarianceModel {
    pub fn matern(theta: f64, alpha: f64, nu: f64) -> Self {
        Self { family: Family::Matern, theta, alpha, nu, mu: None, taper: None }
    }

    pub fn tapered_matern(theta: f64, alpha: f64, nu: f64, taper: TaperDescriptor) -> Self {
        Self { family: Family::TaperedMatern, theta, alpha, nu, mu: None, taper: Some(taper) }
    }

    pub fn generalized_wendland(theta: f64, alpha: f64, nu: f64, mu: f64) -> Self {
        Self { family: Family::GeneralizedWendland, theta, alpha, nu, mu: Some(mu), taper: None }
    }

    pub fn confluent_hypergeometric(theta: f64, alpha: f64, nu: f64, mu: f64) -> Self {
        Self { family: Family::ConfluentHypergeometric, theta, alpha, nu, mu: Some(mu), taper: None }
    }

    /// Same family and shape with new `(θ, α)`.
    pub fn with_params(&self, theta: f64, alpha: f64) -> Self {
        Self { theta, alpha, ..*self }
    }

    /// Checks that do not depend on the domain dimension.
    pub fn validate_params(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        pos("theta", self.theta)?;
        pos("alpha", self.alpha)?;
        pos("nu", self.nu)?;
        match self.family {
            Family::Matern => {}
            Family::TaperedMatern => {
                let t = self.taper.ok_or_else(|| Error::validation("tapered Matérn needs a taper"))?;
                pos("taper range", t.range)?;
            }
            Family::GeneralizedWendland => {
                pos("mu", self.mu.ok_or_else(|| Error::validation("generalized Wendland needs mu"))?)?;
                if self.nu < 0.5 {
                    return Err(Error::validation(format!("generalized Wendland needs nu >= 1/2, got {}", self.nu)));
                }
            }
            Family::ConfluentHypergeometric => {
                pos("mu", self.mu.ok_or_else(|| Error::validation("confluent hypergeometric needs mu"))?)?;
            }
        }
        let s2 = self.variance();
        if !(s2.is_finite() && s2 > 0.0) {
            return Err(Error::validation(format!("implied variance {s2} is not finite and positive")));
        }
        Ok(())
    }

    /// Full validation in dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        self.validate_params()?;
        if self.family == Family::GeneralizedWendland {
            let mu = self.mu.unwrap_or(0.0);
            if mu <= self.nu + d as f64 {
                return Err(Error::validation(format!(
                    "generalized Wendland needs mu > nu + d = {}, got {mu}",
                    self.nu + d as f64
                )));
            }
        }
        Ok(())
    }

    /// `θ K(0)`, the marginal variance σ² of the process.
    pub fn variance(&self) -> f64 {
        let base = self.theta * self.alpha.powf(-2.0 * self.nu);
        match self.family {
            Family::ConfluentHypergeometric => {
                let mu = self.mu.unwrap_or(f64::NAN);
                base * (libm::lgamma(mu) - libm::lgamma(self.nu + mu)).exp()
            }
            _ => base,
        }
    }

    /// `θ K(h)` at lag vector `h`.
    pub fn kernel_value(&self, h: &[f64]) -> Result<f64> {
        self.validate(h.len())?;
        let r = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.radial(r)
    }

    /// `θ K` as a function of the distance `r ≥ 0`; the model is assumed valid.
    pub fn radial(&self, r: f64) -> Result<f64> {
        match self.family {
            Family::Matern => Ok(matern(self.variance(), self.alpha * r, self.nu)),
            Family::TaperedMatern => {
                let t = self.taper.expect("validated").value(r);
                if t == 0.0 {
                    Ok(0.0)
                } else {
                    Ok(t * matern(self.variance(), self.alpha * r, self.nu))
                }
            }
            Family::GeneralizedWendland => self.wendland(r),
            Family::ConfluentHypergeometric => self.confluent(r),
        }
    }

    fn wendland(&self, r: f64) -> Result<f64> {
        let a = self.alpha * r;
        if a >= 1.0 {
            return Ok(0.0);
        }
        let (nu, mu) = (self.nu, self.mu.expect("validated"));
        let ln_beta = libm::lgamma(2.0 * nu) + libm::lgamma(mu) - libm::lgamma(2.0 * nu + mu);
        let scale = self.variance() * (-ln_beta).exp();
        // t = a + (1 − a)u turns the integral into (1 − a)^{ν+μ−1/2} ∫₀¹ ... du
        let q = if nu == 0.5 {
            (1.0 - a).powf(mu) / mu
        } else {
            let e = nu - 0.5;
            let inner = integrate(
                |u| u.powf(e) * (1.0 - u).powf(mu - 1.0) * (2.0 * a + (1.0 - a) * u).powf(e),
                0.0,
                1.0,
                &QuadratureSpec::default(),
            )?;
            (1.0 - a).powf(nu + mu - 0.5) * inner
        };
        Ok(scale * q)
    }

    fn confluent(&self, r: f64) -> Result<f64> {
        let (nu, mu, a2) = (self.nu, self.mu.expect("validated"), self.alpha * self.alpha);
        if r == 0.0 {
            return Ok(self.variance());
        }
        let c = nu * r * r;
        let spec = QuadratureSpec::default();
        // (0, 1): t = v^{1/ν}
        let lower = integrate(
            |v| {
                if v <= 0.0 {
                    return 0.0;
                }
                let t = v.powf(1.0 / nu);
                (a2 * t + 1.0).powf(-(nu + mu)) * (-c / t).exp()
            },
            0.0,
            1.0,
            &spec,
        )? / nu;
        // (1, ∞): t = 1/u, then u = w^{1/μ}
        let upper = integrate(
            |w| {
                let u = w.powf(1.0 / mu);
                (a2 + u).powf(-(nu + mu)) * (-c * u).exp()
            },
            0.0,
            1.0,
            &spec,
        )? / mu;
        let ln_pref = self.theta.ln() - libm::lgamma(nu);
        Ok(ln_pref.exp() * (lower + upper))
    }

    /// Spectral density `f(w) = (2π)^{-d} ∫ e^{−i wᵀx} θK(x) dx`.
    pub fn spectral_density(&self, w: &[f64]) -> Result<f64> {
        let d = w.len();
        self.validate(d)?;
        match self.family {
            Family::Matern => Ok(matern_spectral(self.theta, self.alpha, self.nu, w)),
            Family::TaperedMatern => {
                if d != 1 {
                    return Err(Error::Unsupported(format!(
                        "tapered Matérn spectral density is only available for d = 1, got d = {d}"
                    )));
                }
                // Fourier integral over the compact support; equals the convolution
                // of the Matérn and taper densities.
                let range = self.taper.expect("validated").range;
                let freq = w[0];
                let spec = QuadratureSpec { abs_tol: 1e-13, rel_tol: 1e-10, max_subdivisions: 2000 };
                let v = integrate(
                    |h| (freq * h).cos() * self.radial(h).unwrap_or(f64::NAN),
                    0.0,
                    range,
                    &spec,
                )?;
                Ok((v / PI).max(0.0))
            }
            Family::GeneralizedWendland | Family::ConfluentHypergeometric => Err(Error::Unsupported(format!(
                "spectral density not implemented for {:?}",
                self.family
            ))),
        }
    }
}

fn matern(sigma2: f64, x: f64, nu: f64) -> f64 {
    if x == 0.0 {
        return sigma2;
    }
    match half_integer(nu) {
        Some(0) => sigma2 * (-x).exp(),
        Some(1) => sigma2 * (1.0 + x) * (-x).exp(),
        Some(2) => sigma2 * (1.0 + x + x * x / 3.0) * (-x).exp(),
        _ => {
            let (ks, _) = specialfn::bessel_k_pair_scaled(nu, x);
            let v = sigma2 * (2f64.powf(1.0 - nu) / specialfn::gamma(nu)) * x.powf(nu) * ks * (-x).exp();
            if v.is_finite() {
                v.min(sigma2)
            } else {
                sigma2
            }
        }
    }
}

fn matern_spectral(theta: f64, alpha: f64, nu: f64, w: &[f64]) -> f64 {
    let d = w.len() as f64;
    let w2: f64 = w.iter().map(|v| v * v).sum();
    let ln_c = libm::lgamma(nu + d / 2.0) - libm::lgamma(nu) - 0.5 * d * PI.ln();
    theta * (ln_c - (nu + d / 2.0) * (alpha * alpha + w2).ln()).exp()
}

/// `θK(S) + τI` over row-major points in dimension `d`.
pub fn covariance_matrix_points(model: &CovarianceModel, points: &[f64], d: usize, tau: f64) -> Result<Mat<f64>> {
    model.validate(d)?;
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::validation(format!("nugget must be finite and >= 0, got {tau}")));
    }
    let n = points.len() / d;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let pi = &points[i * d..(i + 1) * d];
            (i..n)
                .map(|j| {
                    let pj = &points[j * d..(j + 1) * d];
                    let r = pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    model.radial(r)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut k = Mat::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += tau;
    }
    Ok(k)
}

/// `θK(S_n) + τI_n` for a design; rejects duplicate points.
pub fn covariance_matrix(model: &CovarianceModel, design: &Design, tau: f64) -> Result<Mat<f64>> {
    design.check_distinct()?;
    covariance_matrix_points(model, design.points(), design.d(), tau)
}

/// `θK(a_i − b_j)` between two row-major point sets.
pub fn cross_covariance(model: &CovarianceModel, a: &[f64], b: &[f64], d: usize) -> Result<Mat<f64>> {
    model.validate(d)?;
    let (na, nb) = (a.len() / d, b.len() / d);
    let cols: Vec<Vec<f64>> = (0..nb)
        .into_par_iter()
        .map(|j| {
            let pj = &b[j * d..(j + 1) * d];
            (0..na)
                .map(|i| {
                    let pi = &a[i * d..(i + 1) * d];
                    let r = pi.iter().zip(pj).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    model.radial(r)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(Mat::from_fn(na, nb, |i, j| cols[j][i]))
}

/// Coefficients of the small-distance expansion
/// `θK(r) = Σ_j ζ_j r^{2j} + ζ*_{ν+j} G_{ν+j}(r)`, with `G_s(t) = t^{2s} log t`
/// for integer `s` and `t^{2s}` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorCoefficients {
    pub zeta: Vec<f64>,
    pub zeta_star: Vec<f64>,
    pub nu: f64,
    pub nu_integer: bool,
}

impl TaylorCoefficients {
    /// Truncated series at distance `r > 0`.
    pub fn evaluate(&self, r: f64) -> f64 {
        let mut acc = 0.0;
        for (j, (z, zs)) in self.zeta.iter().zip(&self.zeta_star).enumerate() {
            let s = self.nu + j as f64;
            let g = if self.nu_integer { r.powf(2.0 * s) * r.ln() } else { r.powf(2.0 * s) };
            acc += z * r.powi(2 * j as i32) + zs * g;
        }
        acc
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// Series coefficients up to order `J` for a Matérn model.
pub fn taylor_coefficients(model: &CovarianceModel, order: usize) -> Result<TaylorCoefficients> {
    if model.family != Family::Matern {
        return Err(Error::Unsupported(format!("series coefficients need the Matérn family, got {:?}", model.family)));
    }
    model.validate_params()?;
    let (theta, alpha, nu) = (model.theta, model.alpha, model.nu);
    let min_order = (nu + 0.5).ceil() as usize + 2;
    if order < min_order {
        return Err(Error::validation(format!("series order must be at least {min_order}, got {order}")));
    }
    let nu_integer = nu == nu.round();
    let mut zeta = Vec::with_capacity(order + 1);
    let mut zeta_star = Vec::with_capacity(order + 1);
    if !nu_integer {
        let mut xi = 1.0;
        let mut xi_star = -PI / (2f64.powf(2.0 * nu) * specialfn::gamma(1.0 + nu) * specialfn::gamma(nu) * (nu * PI).sin());
        for j in 0..=order {
            if j > 0 {
                let jf = j as f64;
                xi /= 4.0 * jf * (jf - nu);
                xi_star /= 4.0 * jf * (jf + nu);
            }
            zeta.push(theta * alpha.powf(2.0 * j as f64 - 2.0 * nu) * xi);
            zeta_star.push(theta * alpha.powi(2 * j as i32) * xi_star);
        }
    } else {
        let v = nu as usize;
        let sign = |k: usize| if k % 2 == 0 { 1.0 } else { -1.0 };
        for j in 0..=order {
            let scale = theta * alpha.powf(2.0 * j as f64 - 2.0 * nu);
            let z = if j < v {
                scale * sign(j) * factorial(v - j - 1) / (4f64.powi(j as i32) * factorial(v - 1) * factorial(j))
            } else {
                let denom = factorial(j - v) * factorial(j) * factorial(v - 1);
                let psi = specialfn::digamma((j - v + 1) as f64)? + specialfn::digamma((j + 1) as f64)?;
                let xi1 = sign(v) * (psi + 2.0 * 2f64.ln()) / (4f64.powi(j as i32) * denom);
                let xi2 = sign(v + 1) / (2f64.powi(2 * j as i32 - 1) * denom);
                scale * (xi1 + xi2 * alpha.ln())
            };
            zeta.push(z);
            let xs = sign(v + 1) / (2f64.powi((2 * v + 2 * j) as i32 - 1) * factorial(v - 1) * factorial(j) * factorial(v + j));
            zeta_star.push(theta * alpha.powi(2 * j as i32) * xs);
        }
    }
    Ok(TaylorCoefficients { zeta, zeta_star, nu, nu_integer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{grid_design, stratified_design};
    use crate::linalg::symmetric_eigenvalues;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn matern_closed_forms() {
        let m = CovarianceModel::matern(5.0, 2.0, 0.5);
        let s2 = 5.0 / 2.0;
        assert_relative_eq!(m.kernel_value(&[0.3, 0.4]).unwrap(), s2 * (-1.0f64).exp(), max_relative = 1e-15);
        assert_eq!(m.kernel_value(&[0.0]).unwrap(), s2);
        let m = CovarianceModel::matern(1.0, 3.0, 1.5);
        let x = 3.0 * 0.2;
        assert_relative_eq!(
            m.kernel_value(&[0.2]).unwrap(),
            3f64.powf(-3.0) * (1.0 + x) * (-x).exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn matern_general_order_is_continuous_through_half_integers() {
        for &nu in &[0.5, 1.5, 2.5] {
            for &r in &[0.01, 0.3, 1.7, 6.0] {
                let exact = matern(1.0, r, nu);
                let near = matern(1.0, r, nu + 1e-9);
                assert_relative_eq!(exact, near, max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn reparameterization_identity() {
        let (theta, alpha, nu) = (2.3, 1.7, 0.8);
        let m = CovarianceModel::matern(theta, alpha, nu);
        let sigma2 = theta * alpha.powf(-2.0 * nu);
        for &r in &[0.05, 0.5, 2.0] {
            let x: f64 = alpha * r;
            let direct = sigma2 * 2f64.powf(1.0 - nu) / specialfn::gamma(nu) * x.powf(nu) * specialfn::bessel_k(nu, x).unwrap();
            assert_relative_eq!(m.kernel_value(&[r]).unwrap(), direct, max_relative = 1e-13);
        }
    }

    #[test]
    fn tapered_matern_vanishes_beyond_range() {
        let m = CovarianceModel::tapered_matern(1.0, 1.0, 0.5, TaperDescriptor::spherical(0.3));
        assert_eq!(m.kernel_value(&[0.3]).unwrap(), 0.0);
        assert_eq!(m.kernel_value(&[0.0]).unwrap(), 1.0);
        let r = 0.1;
        assert_relative_eq!(
            m.kernel_value(&[r]).unwrap(),
            (-r).exp() * (1.0 - r / 0.3).powi(2) * (1.0 + r / 0.6),
            max_relative = 1e-14
        );
    }

    /// Composite Simpson with `n` panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn confluent_hypergeometric_at_zero_against_simpson() {
        let (theta, alpha, nu, mu) = (2.0, 1.3, 1.5, 2.5);
        let m = CovarianceModel::confluent_hypergeometric(theta, alpha, nu, mu);
        // ∫₀^∞ t^{ν−1}(α²t+1)^{−(ν+μ)} dt on t = x/(1−x), 10⁶ panels
        let integrand = |x: f64| {
            if x >= 1.0 {
                return 0.0;
            }
            let t = x / (1.0 - x);
            t.powf(nu - 1.0) * (alpha * alpha * t + 1.0).powf(-(nu + mu)) / (1.0 - x).powi(2)
        };
        let oracle = theta / specialfn::gamma(nu) * simpson(integrand, 0.0, 1.0, 1_000_000);
        assert_relative_eq!(m.kernel_value(&[0.0]).unwrap(), oracle, max_relative = 1e-8);
        // the quadrature path agrees with the closed form at tiny lags
        assert_relative_eq!(m.kernel_value(&[1e-7]).unwrap(), oracle, max_relative = 1e-6);
    }

    #[test]
    fn confluent_hypergeometric_against_simpson_at_positive_lag() {
        let (theta, alpha, nu, mu, r) = (1.0, 0.8, 0.5, 1.5, 0.4);
        let m = CovarianceModel::confluent_hypergeometric(theta, alpha, nu, mu);
        let integrand = |x: f64| {
            if x <= 0.0 || x >= 1.0 {
                return 0.0;
            }
            let t = x / (1.0 - x);
            t.powf(nu - 1.0) * (alpha * alpha * t + 1.0).powf(-(nu + mu)) * (-nu * r * r / t).exp() / (1.0 - x).powi(2)
        };
        let want = theta * simpson(integrand, 0.0, 1.0, 1_000_000) / specialfn::gamma(nu);
        assert_relative_eq!(m.kernel_value(&[r]).unwrap(), want, max_relative = 1e-7);
    }

    #[test]
    fn wendland_support_and_peak() {
        let m = CovarianceModel::generalized_wendland(1.0, 2.0, 1.0, 3.5);
        let s2 = 2f64.powf(-2.0);
        assert_relative_eq!(m.kernel_value(&[0.0, 0.0]).unwrap(), s2, max_relative = 1e-8);
        assert_eq!(m.kernel_value(&[0.5, 0.0]).unwrap(), 0.0);
        assert_eq!(m.kernel_value(&[0.4, 0.4]).unwrap(), 0.0);
        assert!(m.kernel_value(&[0.49, 0.0]).unwrap() > 0.0);
        assert!(CovarianceModel::generalized_wendland(1.0, 2.0, 1.0, 2.5).validate(2).is_err());
        assert!(CovarianceModel::generalized_wendland(1.0, 2.0, 0.4, 9.0).validate(1).is_err());
        // ν = 1/2, μ = 2 is the Askey function (1 − αr)²₊ up to scale
        let askey = CovarianceModel::generalized_wendland(1.0, 1.0, 0.5, 2.0);
        assert_relative_eq!(askey.kernel_value(&[0.25]).unwrap(), 0.75f64.powi(2), max_relative = 1e-14);
    }

    #[test]
    fn wendland_against_simpson() {
        let (alpha, nu, mu, r) = (1.5, 1.25, 4.0, 0.3);
        let m = CovarianceModel::generalized_wendland(1.0, alpha, nu, mu);
        let a = alpha * r;
        let raw = simpson(|t| (t * t - a * a).max(0.0).powf(nu - 0.5) * (1.0 - t).powf(mu - 1.0), a, 1.0, 1_000_000);
        let beta = (libm::lgamma(2.0 * nu) + libm::lgamma(mu) - libm::lgamma(2.0 * nu + mu)).exp();
        assert_relative_eq!(m.kernel_value(&[r]).unwrap(), alpha.powf(-2.0 * nu) / beta * raw, max_relative = 1e-8);
    }

    #[test]
    fn spectral_density_examples() {
        let m = CovarianceModel::matern(3.0, 2.0, 0.5);
        let w = 1.3;
        assert_relative_eq!(m.spectral_density(&[w]).unwrap(), 3.0 / (PI * (4.0 + w * w)), max_relative = 1e-14);
        let wider = CovarianceModel::matern(3.0, 2.5, 0.5);
        assert!(wider.spectral_density(&[w]).unwrap() <= m.spectral_density(&[w]).unwrap());
        let gw = CovarianceModel::generalized_wendland(1.0, 1.0, 1.0, 3.0);
        assert!(matches!(gw.spectral_density(&[0.0]), Err(Error::Unsupported(_))));
        let tm = CovarianceModel::tapered_matern(1.0, 1.0, 0.5, TaperDescriptor::spherical(0.5));
        assert!(matches!(tm.spectral_density(&[0.0, 0.0]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn spectral_density_integrates_to_variance() {
        let spec = QuadratureSpec::default();
        for &(theta, alpha, nu) in &[(1.0, 1.0, 0.5), (5.0, 0.7, 1.3), (0.2, 2.5, 0.25)] {
            let m = CovarianceModel::matern(theta, alpha, nu);
            let mass = integrate(|w| m.spectral_density(&[w]).unwrap(), f64::NEG_INFINITY, f64::INFINITY, &spec).unwrap();
            assert_relative_eq!(mass, m.kernel_value(&[0.0]).unwrap(), max_relative = 1e-6);
        }
    }

    #[test]
    fn tapered_spectral_density_is_positive_and_integrates() {
        // spherical taper transform: (R/π)[1.5/x² − 3 sin x/x³ + 3(1 − cos x)/x⁴], x = wR;
        // with α tiny the Matérn factor is nearly constant σ², giving σ² times it
        let r = 0.8;
        let m = CovarianceModel::tapered_matern(1e-6, 1e-6, 0.5, TaperDescriptor::spherical(r));
        for &w in &[0.5, 2.0, 7.0] {
            let x: f64 = w * r;
            let want = (r / PI) * (1.5 / (x * x) - 3.0 * x.sin() / x.powi(3) + 3.0 * (1.0 - x.cos()) / x.powi(4));
            assert_relative_eq!(m.spectral_density(&[w]).unwrap(), want, max_relative = 1e-5);
        }
        let m = CovarianceModel::tapered_matern(2.0, 1.5, 0.3, TaperDescriptor::spherical(0.6));
        for &w in &[0.0, 1.0, 5.0, 20.0] {
            assert!(m.spectral_density(&[w]).unwrap() > 0.0);
        }
    }

    #[test]
    fn spectral_ratio_bound() {
        // sup_w |f_α/f_α₀ − 1| = |(α₀/α)^{2ν+d} − 1|, attained at w = 0
        for &(nu, d) in &[(0.5, 1usize), (0.5, 2), (1.5, 2), (0.25, 1)] {
            let alpha0 = 1.3;
            let p = 2.0 * nu + d as f64;
            let stated = 4.0 * p / (3.0 * alpha0) * alpha0;
            let full_band = p * (4.0f64 / 3.0).powf(p + 1.0);
            let f0 = CovarianceModel::matern(2.0, alpha0, nu);
            for k in -25..=25 {
                let ratio = 1.0 + k as f64 / 100.0;
                let f = CovarianceModel::matern(2.0, alpha0 * ratio, nu);
                let mut sup: f64 = 0.0;
                for g in 0..200 {
                    let w = vec![g as f64 * 0.05; d];
                    sup = sup.max((f.spectral_density(&w).unwrap() / f0.spectral_density(&w).unwrap() - 1.0).abs());
                }
                let dev = (ratio - 1.0).abs();
                assert!(sup <= full_band * dev + 1e-12);
                if ratio >= 1.0 {
                    assert!(sup <= stated * dev + 1e-12);
                }
            }
        }
    }

    #[test]
    fn covariance_matrix_examples() {
        let m = CovarianceModel::matern(2.0, 1.0, 0.5);
        let g = grid_design(2, 1, 0.5).unwrap();
        let k = covariance_matrix(&m, &g, 0.0).unwrap();
        let off = 2.0 * (-0.5f64).exp();
        assert_eq!(k[(0, 0)], 2.0);
        assert_relative_eq!(k[(0, 1)], off, max_relative = 1e-15);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
        let k = covariance_matrix_points(&m, &[0.4], 1, 0.3).unwrap();
        assert_eq!(k[(0, 0)], 2.3);
    }

    #[test]
    fn covariance_matrix_monotone_in_alpha() {
        let g = stratified_design(40, 1, 3).unwrap();
        let k1 = covariance_matrix(&CovarianceModel::matern(1.0, 1.0, 0.5), &g, 0.0).unwrap();
        let k2 = covariance_matrix(&CovarianceModel::matern(1.0, 2.0, 0.5), &g, 0.0).unwrap();
        let diff = Mat::from_fn(40, 40, |i, j| k1[(i, j)] - k2[(i, j)]);
        assert!(symmetric_eigenvalues(&diff).unwrap()[0] >= -1e-8);
    }

    #[test]
    fn covariance_matrices_are_psd_for_all_families() {
        let models = [
            CovarianceModel::matern(1.0, 2.0, 0.75),
            CovarianceModel::tapered_matern(1.0, 2.0, 0.5, TaperDescriptor::spherical(0.4)),
            CovarianceModel::generalized_wendland(1.0, 2.0, 0.5, 3.5),
            CovarianceModel::confluent_hypergeometric(1.0, 2.0, 0.5, 1.0),
        ];
        for (f, model) in models.iter().enumerate() {
            for seed in 0..6 {
                let g = stratified_design(4, 2, 100 * f as u64 + seed).unwrap();
                let k = covariance_matrix(model, &g, 0.0).unwrap();
                let tr: f64 = (0..g.n()).map(|i| k[(i, i)]).sum();
                let min = symmetric_eigenvalues(&k).unwrap()[0];
                assert!(min >= -1e-8 * tr / g.n() as f64, "{:?}: {min}", model.family);
            }
        }
    }

    #[test]
    fn taylor_coefficient_examples() {
        let t = taylor_coefficients(&CovarianceModel::matern(1.0, 1.0, 0.5), 8).unwrap();
        assert_relative_eq!(t.zeta_star[0], -1.0, max_relative = 1e-14);
        for j in 0..=8 {
            assert_relative_eq!(t.zeta[j], 1.0 / factorial(2 * j), max_relative = 1e-13);
            assert_relative_eq!(t.zeta_star[j], -1.0 / factorial(2 * j + 1), max_relative = 1e-13);
        }
        let t = taylor_coefficients(&CovarianceModel::matern(1.0, 1.0, 1.0), 8).unwrap();
        assert_relative_eq!(t.zeta_star[0], 0.5, max_relative = 1e-15);
        assert!(t.nu_integer);
        let gw = CovarianceModel::generalized_wendland(1.0, 1.0, 1.0, 3.0);
        assert!(matches!(taylor_coefficients(&gw, 8), Err(Error::Unsupported(_))));
        assert!(taylor_coefficients(&CovarianceModel::matern(1.0, 1.0, 0.5), 1).is_err());
    }

    #[test]
    fn taylor_series_matches_bessel_evaluation() {
        for &(theta, alpha, nu) in &[(1.0, 1.0, 0.25), (2.0, 0.7, 0.5), (1.5, 2.0, 1.0), (0.3, 1.4, 2.0), (1.0, 0.9, 1.37), (4.0, 3.0, 3.0)] {
            let m = CovarianceModel::matern(theta, alpha, nu);
            let t = taylor_coefficients(&m, 8).unwrap();
            let r = 0.05 / alpha;
            assert_relative_eq!(t.evaluate(r), m.kernel_value(&[r]).unwrap(), max_relative = 1e-10);
        }
    }

    proptest! {
        #[test]
        fn stationarity_and_peak(h1 in -2.0f64..2.0, h2 in -2.0f64..2.0, nu in 0.1f64..3.0, alpha in 0.2f64..4.0) {
            let m = CovarianceModel::matern(1.3, alpha, nu);
            let k = m.kernel_value(&[h1, h2]).unwrap();
            prop_assert_eq!(k, m.kernel_value(&[-h1, -h2]).unwrap());
            prop_assert!(k <= m.kernel_value(&[0.0, 0.0]).unwrap() * (1.0 + 1e-14));
            prop_assert!(k >= 0.0);
        }
    }
}
