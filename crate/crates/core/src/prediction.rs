//! Kriging and posterior prediction of the noiseless surface `f(s)ᵀβ + X(s)`.

use std::sync::atomic::{AtomicUsize, Ordering};

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::covariance::{cross_covariance, CovarianceModel};
use crate::design::features_at;
use crate::error::{Error, Result};
use crate::gp_sim::Dataset;
use crate::inference::{dense_factor, Draw};
use crate::linalg::{self, Cholesky};

static CLAMPED: AtomicUsize = AtomicUsize::new(0);

/// Number of predictive variances clamped to zero so far in this process.
pub fn clamped_variance_count() -> usize {
    CLAMPED.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub location: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    /// The raw variance was slightly negative and has been set to zero.
    pub clamped: bool,
}

fn check_location(dataset: &Dataset, points: &[f64]) -> Result<()> {
    let d = dataset.d();
    if points.len() % d != 0 {
        return Err(Error::validation("prediction points are not a multiple of the dimension"));
    }
    if points.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::validation("prediction locations must lie in the unit cube"));
    }
    Ok(())
}

/// `βᵀf(s*) + θK(S, s*)ᵀ[θK(S) + τI]⁻¹(Y − Fβ)` at one location.
pub fn blup(model: &CovarianceModel, tau: f64, beta: &[f64], dataset: &Dataset, s_star: &[f64]) -> Result<f64> {
    Ok(blup_many(model, tau, beta, dataset, s_star)?[0])
}

/// [`blup`] at row-major locations with one shared factorization.
pub fn blup_many(model: &CovarianceModel, tau: f64, beta: &[f64], dataset: &Dataset, points: &[f64]) -> Result<Vec<f64>> {
    check_location(dataset, points)?;
    if beta.len() != dataset.p {
        return Err(Error::validation(format!("beta has {} entries, expected {}", beta.len(), dataset.p)));
    }
    let d = dataset.d();
    let fs = features_at(&dataset.features, points, d)?;
    let p = dataset.p;
    let ns = points.len() / d;
    let trend: Vec<f64> = (0..ns).map(|j| linalg::dot(&fs[j * p..(j + 1) * p], beta)).collect();
    if model.theta == 0.0 {
        return Ok(trend);
    }
    let chol = dense_factor(model, tau, dataset)?;
    let r: Vec<f64> = (0..dataset.n()).map(|i| dataset.y[i] - linalg::dot(dataset.f_row(i), beta)).collect();
    let alpha = chol.solve_vec(&r);
    let k = cross_covariance(model, dataset.design.points(), points, d)?;
    Ok((0..ns).map(|j| trend[j] + (0..dataset.n()).map(|i| k[(i, j)] * alpha[i]).sum::<f64>()).collect())
}

/// Factorization of one parameter value, reused across prediction locations.
pub struct Predictor<'a> {
    model: CovarianceModel,
    dataset: &'a Dataset,
    chol: Cholesky,
    z: Vec<f64>,
    w: Mat<f64>,
    prec: Cholesky,
    /// `P⁻¹Wᵀz`.
    gamma: Vec<f64>,
}

impl<'a> Predictor<'a> {
    pub fn new(model: &CovarianceModel, tau: f64, dataset: &'a Dataset, a0: f64) -> Result<Self> {
        if !(a0.is_finite() && a0 > 0.0) {
            return Err(Error::validation(format!("a0 must be finite and > 0, got {a0}")));
        }
        let chol = dense_factor(model, tau, dataset)?;
        let (n, p) = (dataset.n(), dataset.p);
        let mut w = Mat::from_fn(n, p, |i, j| dataset.f[i * p + j]);
        chol.whiten_in_place(&mut w);
        let z = chol.whiten(&dataset.y);
        let mut pm = Mat::from_fn(p, p, |a, b| (0..n).map(|i| w[(i, a)] * w[(i, b)]).sum::<f64>());
        for j in 0..p {
            pm[(j, j)] += 1.0 / a0;
        }
        let wz: Vec<f64> = (0..p).map(|j| (0..n).map(|i| w[(i, j)] * z[i]).sum()).collect();
        let prec = Cholesky::new(&pm)?;
        let gamma = prec.solve_vec(&wz);
        Ok(Self { model: *model, dataset, chol, z, w, prec, gamma })
    }

    /// Predictive mean and variance at row-major locations.
    pub fn predict(&self, points: &[f64]) -> Result<Vec<PredictionResult>> {
        check_location(self.dataset, points)?;
        let d = self.dataset.d();
        let (n, p) = (self.dataset.n(), self.dataset.p);
        let ns = points.len() / d;
        let fs = features_at(&self.dataset.features, points, d)?;
        let mut a = cross_covariance(&self.model, self.dataset.design.points(), points, d)?;
        self.chol.whiten_in_place(&mut a);
        let s2 = self.model.variance();
        let mut out = Vec::with_capacity(ns);
        for j in 0..ns {
            let b: Vec<f64> = (0..p).map(|q| fs[j * p + q] - (0..n).map(|i| self.w[(i, q)] * a[(i, j)]).sum::<f64>()).collect();
            let az: f64 = (0..n).map(|i| a[(i, j)] * self.z[i]).sum();
            let aa: f64 = (0..n).map(|i| a[(i, j)] * a[(i, j)]).sum();
            let u = self.prec.whiten(&b);
            let mean = az + linalg::dot(&b, &self.gamma);
            let mut variance = s2 - aa + linalg::dot(&u, &u);
            let mut clamped = false;
            if variance < 0.0 {
                if variance < -1e-10 * s2 {
                    return Err(Error::Numerical {
                        message: format!("predictive variance {variance:e} is negative beyond round-off"),
                        n,
                        mean_diag: s2,
                        min_diag: s2,
                        max_diag: s2,
                    });
                }
                CLAMPED.fetch_add(1, Ordering::Relaxed);
                log::warn!("clamping predictive variance {variance:e} to zero");
                variance = 0.0;
                clamped = true;
            }
            out.push(PredictionResult { location: points[j * d..(j + 1) * d].to_vec(), mean, variance, clamped });
        }
        Ok(out)
    }
}

/// Posterior predictive mean and variance with β integrated out.
pub fn predictive(model: &CovarianceModel, tau: f64, dataset: &Dataset, a0: f64, s_star: &[f64]) -> Result<PredictionResult> {
    Ok(Predictor::new(model, tau, dataset, a0)?.predict(s_star)?.remove(0))
}

fn truth_of(dataset: &Dataset) -> Result<&crate::gp_sim::Truth> {
    dataset.truth.as_ref().ok_or_else(|| Error::validation("dataset carries no generating truth"))
}

/// `(Y† − β₀ᵀf − X*)² + v` for predictions at row-major locations with latent values `x_star`.
pub fn mse_from_predictions(dataset: &Dataset, preds: &[PredictionResult], x_star: &[f64]) -> Result<Vec<f64>> {
    let truth = truth_of(dataset)?;
    if preds.len() != x_star.len() {
        return Err(Error::validation("one latent value per prediction location is required"));
    }
    preds
        .iter()
        .zip(x_star)
        .map(|(pr, x)| {
            let f = dataset.features.eval(&pr.location)?;
            let err = pr.mean - linalg::dot(&f, &truth.beta) - x;
            Ok(err * err + pr.variance)
        })
        .collect()
}

/// `M_post` contribution of one parameter value at one location.
pub fn mse_post(model: &CovarianceModel, tau: f64, dataset: &Dataset, a0: f64, s_star: &[f64], x_star: f64) -> Result<f64> {
    let pr = predictive(model, tau, dataset, a0, s_star)?;
    Ok(mse_from_predictions(dataset, &[pr], &[x_star])?[0])
}

/// `mse_post` evaluated at the generating parameters.
pub fn mse_oracle(dataset: &Dataset, a0: f64, s_star: &[f64], x_star: f64) -> Result<f64> {
    let t = truth_of(dataset)?;
    mse_post(&t.model, t.tau, dataset, a0, s_star, x_star)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSummary {
    /// Per-location `M_post` averaged over draws.
    pub m_post: Vec<f64>,
    /// Per-location oracle error.
    pub m_0: Vec<f64>,
    pub mean_m_post: f64,
    pub mean_m_0: f64,
    /// `mean_m_post / mean_m_0`.
    pub ratio: f64,
    /// Oracle predictions (mean, variance) per location.
    pub oracle: Vec<PredictionResult>,
    /// Mean and variance of the draw-mixture predictive per location.
    pub post_mean: Vec<f64>,
    pub post_variance: Vec<f64>,
    pub draws_used: usize,
}

/// Averages `M_post` over the given posterior draws and compares with the
/// oracle at the truth. `template` supplies the family and ν.
pub fn mse_ratio_experiment(
    dataset: &Dataset,
    template: &CovarianceModel,
    draws: &[Draw],
    a0: f64,
    test_points: &[f64],
    x_star: &[f64],
) -> Result<MseSummary> {
    if draws.is_empty() {
        return Err(Error::validation("at least one posterior draw is required"));
    }
    let truth = truth_of(dataset)?;
    let oracle = Predictor::new(&truth.model, truth.tau, dataset, a0)?.predict(test_points)?;
    let m_0 = mse_from_predictions(dataset, &oracle, x_star)?;
    let ns = m_0.len();
    let mut m_post = vec![0.0; ns];
    let (mut s1, mut s2, mut sv) = (vec![0.0; ns], vec![0.0; ns], vec![0.0; ns]);
    for dr in draws {
        let model = template.with_params(dr.theta, dr.alpha);
        let preds = Predictor::new(&model, dr.tau, dataset, a0)?.predict(test_points)?;
        for (j, v) in mse_from_predictions(dataset, &preds, x_star)?.into_iter().enumerate() {
            m_post[j] += v;
            s1[j] += preds[j].mean;
            s2[j] += preds[j].mean * preds[j].mean;
            sv[j] += preds[j].variance;
        }
    }
    let k = draws.len() as f64;
    m_post.iter_mut().for_each(|v| *v /= k);
    let post_mean: Vec<f64> = s1.iter().map(|v| v / k).collect();
    let post_variance: Vec<f64> = (0..ns).map(|j| sv[j] / k + (s2[j] / k - post_mean[j] * post_mean[j]).max(0.0)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mp, m0) = (mean(&m_post), mean(&m_0));
    Ok(MseSummary { mean_m_post: mp, mean_m_0: m0, ratio: mp / m0, m_post, m_0, oracle, post_mean, post_variance, draws_used: draws.len() })
}

/// `count` draws taken at evenly spaced positions of a chain.
pub fn evenly_spaced(draws: &[Draw], count: usize) -> Vec<Draw> {
    if count == 0 || draws.is_empty() {
        return Vec::new();
    }
    if count >= draws.len() {
        return draws.to_vec();
    }
    (0..count).map(|k| draws[(k * draws.len()) / count + draws.len() / (2 * count)]).collect()
}
