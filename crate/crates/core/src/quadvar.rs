//! Higher-order quadratic variations and the resulting estimators of the
//! microergodic parameter θ and the nugget τ.
//!
//! For a base multi-index `i` the stencil covers `s(i + kω)` for
//! `k ∈ {0,…,ℓ}^d`. Stencil weights `c_i` annihilate every monomial of total
//! degree ≤ ℓ except `s_d^ℓ`, on which they give `ℓ!(ω/m)^ℓ`. Among all such
//! weights the minimum-norm one is used.

use std::f64::consts::PI;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::design::{advance, features, index_set, Design, FeatureSpec, IndexSet};
use crate::error::{Error, Result};
use crate::gp_sim::Dataset;
use crate::specialfn;

/// Smallest admissible singular-value ratio of the moment system.
const RANK_TOL: f64 = 1e-10;

/// User-facing configuration; unset fields take their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QvConfig {
    /// Differencing order; defaults to `⌈ν + d/2⌉`.
    #[serde(default)]
    pub ell: Option<usize>,
    /// Cell exponent of the θ estimator; defaults to `4ν/(4ν + d)`.
    #[serde(default)]
    pub gamma_theta: Option<f64>,
    /// Cell exponent of the τ estimator; defaults to [`DEFAULT_GAMMA_TAU`].
    #[serde(default)]
    pub gamma_tau: Option<f64>,
}

/// With `m^γ < 2` the cell width is the minimal even spacing `ω = 2`, which
/// keeps the smoothing bias of `τ̂` of order `θ/(τ m)`.
pub const DEFAULT_GAMMA_TAU: f64 = 0.02;

/// A configuration resolved against `(ν, d, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QvPlan {
    pub ell: usize,
    pub gamma_theta: f64,
    pub gamma_tau: f64,
    pub omega_theta: usize,
    pub omega_tau: usize,
    pub m: usize,
    pub d: usize,
}

/// `ℓ⋆ = ⌈ν + d/2⌉`.
pub fn default_ell(nu: f64, d: usize) -> usize {
    ((nu + d as f64 / 2.0) - 1e-12).ceil().max(1.0) as usize
}

/// Lower end of the cell-exponent interval, `max{1 − d/(4ν), 0}`.
pub fn gamma_lower_bound(nu: f64, d: usize) -> f64 {
    (1.0 - d as f64 / (4.0 * nu)).max(0.0)
}

/// `ω = ⌊m^γ⌋` rounded down to an even number ≥ 2, then reduced until the
/// lag-`u` index set is nonempty.
pub fn omega_for(m: usize, gamma: f64, ell: usize, u: usize) -> Result<usize> {
    let raw = ((m as f64).powf(gamma) * (1.0 + 1e-12)).floor() as usize;
    let mut omega = (raw / 2 * 2).max(2);
    while omega >= 2 && m <= 2 * ell * omega + u {
        omega -= 2;
    }
    if omega < 2 {
        return Err(Error::Infeasible(format!(
            "m = {m} leaves no room for a stencil: need m > 2·ell·omega + u = {} with ell = {ell}, omega = 2, u = {u}",
            4 * ell + u
        )));
    }
    Ok(omega)
}

impl QvConfig {
    pub fn resolve(&self, nu: f64, d: usize, m: usize) -> Result<QvPlan> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::validation(format!("nu must be finite and > 0, got {nu}")));
        }
        let ell = self.ell.unwrap_or_else(|| default_ell(nu, d));
        if ell < 1 {
            return Err(Error::validation("ell must be at least 1"));
        }
        let lo = gamma_lower_bound(nu, d);
        let gamma_theta = self.gamma_theta.unwrap_or(4.0 * nu / (4.0 * nu + d as f64));
        if !(gamma_theta > lo && gamma_theta < 1.0) {
            return Err(Error::validation(format!("gamma_theta = {gamma_theta} must lie in ({lo}, 1)")));
        }
        let gamma_tau = self.gamma_tau.unwrap_or(DEFAULT_GAMMA_TAU);
        if !(0.0..1.0).contains(&gamma_tau) {
            return Err(Error::validation(format!("gamma_tau = {gamma_tau} must lie in [0, 1)")));
        }
        Ok(QvPlan {
            ell,
            gamma_theta,
            gamma_tau,
            omega_theta: omega_for(m, gamma_theta, ell, 1)?,
            omega_tau: omega_for(m, gamma_tau, ell, 0)?,
            m,
            d,
        })
    }
}

/// Stencil offsets `k ∈ {0,…,ℓ}^d` in flat order (`k₁` fastest).
pub fn stencil_offsets(d: usize, ell: usize) -> Vec<Vec<usize>> {
    let count = (ell + 1).pow(d as u32);
    let mut out = Vec::with_capacity(count);
    let mut k = vec![0usize; d];
    for _ in 0..count {
        out.push(k.clone());
        for v in k.iter_mut() {
            if *v < ell {
                *v += 1;
                break;
            }
            *v = 0;
        }
    }
    out
}

/// Exponent vectors of all monomials of total degree ≤ ℓ; the pure `s_d^ℓ`
/// term comes last.
fn moment_exponents(d: usize, ell: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = stencil_offsets(d, ell).into_iter().filter(|l| l.iter().sum::<usize>() <= ell).collect();
    let pure = out.iter().position(|l| l[d - 1] == ell).expect("pure term present");
    let p = out.remove(pure);
    out.push(p);
    out
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// Minimum-norm solution of the moment system for local coordinates `z`
/// (row-major `K × d`) with target `ℓ!` on the pure term.
fn min_norm_solve(z: &[f64], d: usize, ell: usize) -> Result<Vec<f64>> {
    let exps = moment_exponents(d, ell);
    let k = z.len() / d;
    let q = exps.len();
    let a = Mat::from_fn(q, k, |r, c| exps[r].iter().enumerate().map(|(j, &e)| z[c * d + j].powi(e as i32)).product::<f64>());
    let svd = a.thin_svd().map_err(|_| Error::SingularDesign("SVD of the moment system did not converge".into()))?;
    let s = svd.S();
    let smax: f64 = s[0];
    let smin: f64 = s[q - 1];
    if !(smin > RANK_TOL * smax) {
        return Err(Error::SingularDesign(format!(
            "moment system is rank deficient (singular values {smax:e} .. {smin:e})"
        )));
    }
    // c = V Σ⁻¹ Uᵀ b with b = ℓ! e_q
    let (u, v) = (svd.U(), svd.V());
    let target = factorial(ell);
    let w: Vec<f64> = (0..q).map(|j| u[(q - 1, j)] * target / s[j]).collect();
    Ok((0..k).map(|c| (0..q).map(|j| v[(c, j)] * w[j]).sum()).collect())
}

/// Weights for one stencil block `s(i + kω)` (row-major `K × d`, `k₁` fastest).
pub fn solve_constants(block: &[f64], d: usize, ell: usize, m: usize, omega: usize) -> Result<Vec<f64>> {
    let k = (ell + 1).pow(d as u32);
    if block.len() != k * d {
        return Err(Error::validation(format!("stencil block needs {k} points of dimension {d}")));
    }
    let scale = m as f64 / omega as f64;
    let z: Vec<f64> = block.iter().enumerate().map(|(idx, &v)| (v - block[idx % d]) * scale).collect();
    min_norm_solve(&z, d, ell)
}

/// Largest absolute violation of the moment conditions in original coordinates.
pub fn moment_residual(block: &[f64], c: &[f64], d: usize, ell: usize, m: usize, omega: usize) -> f64 {
    let exps = moment_exponents(d, ell);
    let q = exps.len();
    let target = factorial(ell) * (omega as f64 / m as f64).powi(ell as i32);
    exps.iter()
        .enumerate()
        .map(|(r, e)| {
            let lhs: f64 = c
                .iter()
                .enumerate()
                .map(|(kk, ck)| ck * e.iter().enumerate().map(|(j, &p)| block[kk * d + j].powi(p as i32)).product::<f64>())
                .sum();
            (lhs - if r == q - 1 { target } else { 0.0 }).abs()
        })
        .fold(0.0, f64::max)
}

/// `m`-independent limits obtained on the integer lattice `z = k`.
pub fn limit_constants(d: usize, ell: usize) -> Vec<f64> {
    let z: Vec<f64> = stencil_offsets(d, ell).into_iter().flatten().map(|v| v as f64).collect();
    min_norm_solve(&z, d, ell).expect("the integer lattice is unisolvent")
}

/// Stencil weights for every base index in `[1, m − 2ℓω]^d`.
#[derive(Debug, Clone)]
pub struct Stencils {
    pub d: usize,
    pub ell: usize,
    pub omega: usize,
    pub m: usize,
    /// Upper coordinate of the base box.
    pub upper: usize,
    /// Flat design offsets of the stencil points relative to the base point.
    offsets: Vec<usize>,
    /// One shared weight vector, or one per base index in box order.
    weights: Vec<f64>,
    shared: bool,
}

impl Stencils {
    pub fn new(design: &Design, ell: usize, omega: usize) -> Result<Self> {
        let (d, m) = (design.d(), design.m());
        let box_set = index_set(0, m, d, ell, omega)?;
        let upper = box_set.upper();
        let ks = stencil_offsets(d, ell);
        let offsets: Vec<usize> = ks
            .iter()
            .map(|k| {
                let mut stride = 1;
                let mut off = 0;
                for &kj in k {
                    off += kj * omega * stride;
                    stride *= m;
                }
                off
            })
            .collect();
        let kk = ks.len();
        let block_at = |base: usize| -> Vec<f64> {
            offsets.iter().flat_map(|&o| design.point(base + o).iter().copied()).collect()
        };
        let shared = design.is_equispaced();
        let weights = if shared {
            let w = solve_constants(&block_at(0), d, ell, m, omega)?;
            check_residual(&block_at(0), &w, d, ell, m, omega)?;
            w
        } else {
            let mut w = Vec::with_capacity(upper.pow(d as u32) * kk);
            let mut idx = vec![1usize; d];
            for _ in 0..upper.pow(d as u32) {
                let base = design.flat_index(&idx);
                let block = block_at(base);
                let c = solve_constants(&block, d, ell, m, omega)?;
                check_residual(&block, &c, d, ell, m, omega)?;
                w.extend(c);
                advance(&mut idx, upper);
            }
            w
        };
        Ok(Self { d, ell, omega, m, upper, offsets, weights, shared })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Weights at position `pos` of the base box (box order, `i₁` fastest).
    pub fn weights(&self, pos: usize) -> &[f64] {
        let k = self.len();
        if self.shared {
            &self.weights[..k]
        } else {
            &self.weights[pos * k..(pos + 1) * k]
        }
    }

    /// Flat design offsets of the stencil points.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Flat design index of every base point, in box order.
    pub fn bases(&self, design: &Design) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.upper.pow(self.d as u32));
        let mut idx = vec![1usize; self.d];
        for _ in 0..self.upper.pow(self.d as u32) {
            out.push(design.flat_index(&idx));
            advance(&mut idx, self.upper);
        }
        out
    }

    /// `∇Y(s(i))` for every base point in box order.
    pub fn differences(&self, design: &Design, y: &[f64]) -> Vec<f64> {
        self.bases(design)
            .iter()
            .enumerate()
            .map(|(pos, &b)| self.weights(pos).iter().zip(&self.offsets).map(|(c, &o)| c * y[b + o]).sum())
            .collect()
    }

    /// `Σ_i Σ_k c_i^k²` over the base box.
    pub fn sum_sq(&self) -> f64 {
        let boxes = self.upper.pow(self.d as u32);
        (0..boxes).map(|p| self.weights(p).iter().map(|c| c * c).sum::<f64>()).sum()
    }
}

fn check_residual(block: &[f64], c: &[f64], d: usize, ell: usize, m: usize, omega: usize) -> Result<()> {
    let tol = 1e-9 * factorial(ell) * (omega as f64 / m as f64).powi(ell as i32);
    let res = moment_residual(block, c, d, ell, m, omega);
    if res > tol {
        return Err(Error::SingularDesign(format!("moment residual {res:e} exceeds {tol:e}")));
    }
    Ok(())
}

/// Box positions of the members of `Ξ_{u,m}` and of their `+u e₁` partners.
fn lag_pairs(upper: usize, d: usize, u: usize) -> Vec<(usize, usize)> {
    let total = upper.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![1usize; d];
    for pos in 0..total {
        if idx[0] + u <= upper {
            out.push((pos, pos + u));
        }
        advance(&mut idx, upper);
    }
    out
}

/// `V_u = Σ_{i∈Ξ_u} ∇Y(s(i)) ∇Y(s(i + u e₁))` with explicit `(ℓ, ω)`.
pub fn quadratic_variation_with(design: &Design, y: &[f64], u: usize, ell: usize, omega: usize) -> Result<f64> {
    let set = index_set(u, design.m(), design.d(), ell, omega)?;
    let st = Stencils::new(design, ell, omega)?;
    Ok(variation_from(&st, design, y, &set))
}

fn variation_from(st: &Stencils, design: &Design, y: &[f64], set: &IndexSet) -> f64 {
    let diffs = st.differences(design, y);
    lag_pairs(st.upper, st.d, set.u).iter().map(|&(a, b)| diffs[a] * diffs[b]).sum()
}

/// `V_u` using the cell width the configuration assigns to lag `u`.
pub fn quadratic_variation(dataset: &Dataset, nu: f64, u: usize, config: &QvConfig) -> Result<f64> {
    let plan = config.resolve(nu, dataset.d(), dataset.design.m())?;
    let omega = if u == 0 { plan.omega_tau } else { plan.omega_theta };
    quadratic_variation_with(&dataset.design, &dataset.y, u, plan.ell, omega)
}

/// `G_ν(t)`: `t^{2ν}` for non-integer ν, `t^{2ν} log t` for integer ν, with `G(0) = 0`.
pub fn g_nu(nu: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    if nu == nu.round() {
        t.powf(2.0 * nu) * t.ln()
    } else {
        t.powf(2.0 * nu)
    }
}

/// Leading coefficient `ξ*_ν` of the non-smooth part of the Matérn expansion.
pub fn xi_star(nu: f64) -> f64 {
    if nu == nu.round() {
        let v = nu as i32;
        let sign = if (v + 1) % 2 == 0 { 1.0 } else { -1.0 };
        sign / (2f64.powi(2 * v - 1) * factorial(v as usize) * factorial(v as usize - 1))
    } else {
        -PI / (2f64.powf(2.0 * nu) * specialfn::gamma(nu + 1.0) * specialfn::gamma(nu) * (nu * PI).sin())
    }
}

/// `H = Σ c^{(k₁)} c^{(k₂)} G_ν(‖k₁ − k₂‖)` over the limit constants.
pub fn h_constant(d: usize, ell: usize, nu: f64) -> f64 {
    let c = limit_constants(d, ell);
    let ks = stencil_offsets(d, ell);
    let mut h = 0.0;
    for (a, ka) in ks.iter().enumerate() {
        for (b, kb) in ks.iter().enumerate() {
            let dist = ka.iter().zip(kb).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>().sqrt();
            h += c[a] * c[b] * g_nu(nu, dist);
        }
    }
    h
}

/// Both estimators together with every constant that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvEstimate {
    pub theta_hat: f64,
    pub tau_hat: f64,
    pub v0: f64,
    pub v1: f64,
    pub c_v0: f64,
    pub g: f64,
    pub h: f64,
    pub xi_star: f64,
    pub xi0_len: usize,
    pub xi1_len: usize,
    /// Raw estimate was negative (returned unclamped).
    pub theta_negative: bool,
    pub tau_negative: bool,
    pub plan: QvPlan,
}

/// Normalizing constants `(C_{V,0}, g, H, ξ*, |Ξ₀|, |Ξ₁|)` for a plan.
fn normalizers(design: &Design, nu: f64, plan: &QvPlan) -> Result<(f64, f64, f64, f64, usize, usize, Stencils, Stencils)> {
    let (m, d) = (design.m(), design.d());
    let set0 = index_set(0, m, d, plan.ell, plan.omega_tau)?;
    let set1 = index_set(1, m, d, plan.ell, plan.omega_theta)?;
    let st0 = Stencils::new(design, plan.ell, plan.omega_tau)?;
    let st1 = Stencils::new(design, plan.ell, plan.omega_theta)?;
    let c_v0 = st0.sum_sq();
    let h = h_constant(d, plan.ell, nu);
    let xs = xi_star(nu);
    if !(xs * h > 0.0) {
        return Err(Error::Infeasible(format!(
            "xi_star·H = {} is not positive for nu = {nu}, d = {d}, ell = {}",
            xs * h,
            plan.ell
        )));
    }
    let g = (plan.omega_theta as f64 / m as f64).powf(2.0 * nu) * set1.len() as f64 * xs * h;
    Ok((c_v0, g, h, xs, set0.len(), set1.len(), st0, st1))
}

/// `τ̂ = V₀/C_{V,0}` and `θ̂ = V₁/g`.
pub fn estimate(dataset: &Dataset, nu: f64, config: &QvConfig) -> Result<QvEstimate> {
    let design = &dataset.design;
    let plan = config.resolve(nu, design.d(), design.m())?;
    let (c_v0, g, h, xs, n0, n1, st0, st1) = normalizers(design, nu, &plan)?;
    let set0 = index_set(0, design.m(), design.d(), plan.ell, plan.omega_tau)?;
    let set1 = index_set(1, design.m(), design.d(), plan.ell, plan.omega_theta)?;
    let v0 = variation_from(&st0, design, &dataset.y, &set0);
    let v1 = variation_from(&st1, design, &dataset.y, &set1);
    let (theta_hat, tau_hat) = (v1 / g, v0 / c_v0);
    Ok(QvEstimate {
        theta_hat,
        tau_hat,
        v0,
        v1,
        c_v0,
        g,
        h,
        xi_star: xs,
        xi0_len: n0,
        xi1_len: n1,
        theta_negative: theta_hat < 0.0,
        tau_negative: tau_hat < 0.0,
        plan,
    })
}

/// Exact `E[V_u]` under the model, with explicit `(ℓ, ω)`.
#[allow(clippy::too_many_arguments)]
pub fn expected_v_with(
    model: &CovarianceModel,
    tau: f64,
    beta: &[f64],
    features_spec: &FeatureSpec,
    design: &Design,
    u: usize,
    ell: usize,
    omega: usize,
) -> Result<f64> {
    let d = design.d();
    let set = index_set(u, design.m(), d, ell, omega)?;
    let st = Stencils::new(design, ell, omega)?;
    let p = features_spec.p(d)?;
    if beta.len() != p {
        return Err(Error::validation(format!("beta has {} entries but the features define {p}", beta.len())));
    }
    let theta_zero = model.theta == 0.0;
    if !theta_zero {
        model.validate(d)?;
    }
    let f = features(features_spec, design)?;
    let mean: Vec<f64> = (0..design.n()).map(|i| f[i * p..(i + 1) * p].iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
    let mean_diffs = st.differences(design, &mean);
    let bases = st.bases(design);
    let offs = st.offsets();
    let mut total = 0.0;
    for (a, b) in lag_pairs(st.upper, d, set.u) {
        let (ca, cb) = (st.weights(a), st.weights(b));
        let mut acc = mean_diffs[a] * mean_diffs[b];
        for (x, &oa) in ca.iter().zip(offs) {
            let pa = bases[a] + oa;
            for (y, &ob) in cb.iter().zip(offs) {
                let pb = bases[b] + ob;
                let mut cov = if pa == pb { tau } else { 0.0 };
                if !theta_zero {
                    let r = design.point(pa).iter().zip(design.point(pb)).map(|(s, t)| (s - t) * (s - t)).sum::<f64>().sqrt();
                    cov += model.radial(r)?;
                }
                acc += x * y * cov;
            }
        }
        total += acc;
    }
    Ok(total)
}

/// Exact expectations of `τ̂` and `θ̂` under the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedEstimates {
    pub expected_v0: f64,
    pub expected_v1: f64,
    pub expected_tau_hat: f64,
    pub expected_theta_hat: f64,
    pub plan: QvPlan,
}

/// `E[V₀]`, `E[V₁]` and the implied `E[τ̂]`, `E[θ̂]` for a design.
pub fn expected_estimates(
    model: &CovarianceModel,
    tau: f64,
    beta: &[f64],
    features_spec: &FeatureSpec,
    design: &Design,
    config: &QvConfig,
) -> Result<ExpectedEstimates> {
    let nu = model.nu;
    let plan = config.resolve(nu, design.d(), design.m())?;
    let (c_v0, g, ..) = normalizers(design, nu, &plan)?;
    let e0 = expected_v_with(model, tau, beta, features_spec, design, 0, plan.ell, plan.omega_tau)?;
    let e1 = expected_v_with(model, tau, beta, features_spec, design, 1, plan.ell, plan.omega_theta)?;
    Ok(ExpectedEstimates { expected_v0: e0, expected_v1: e1, expected_tau_hat: e0 / c_v0, expected_theta_hat: e1 / g, plan })
}

/// Exponents bounding the sieve set used in the contraction analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SieveSpec {
    pub rho1: f64,
    pub rho21: f64,
    pub rho22: f64,
    pub rho31: f64,
    pub rho32: f64,
}

impl SieveSpec {
    /// Half of every upper bound; `ρ₃₁` has none and is set to 1.
    pub fn default_for(nu: f64, d: usize, gamma: f64) -> Self {
        let df = d as f64;
        Self {
            rho1: 0.5 * (1.0 - gamma),
            rho21: 0.5 * 2.0 * nu * (1.0 - gamma) / df,
            rho22: 0.5 * (0.5 - 2.0 * (1.0 - gamma) * nu / df),
            rho31: 1.0,
            rho32: 0.5 * (1.0 - gamma) / df,
        }
    }

    pub fn validate(&self, nu: f64, d: usize, gamma: f64) -> Result<()> {
        let df = d as f64;
        let checks = [
            (self.rho1 > 0.0 && self.rho1 < 1.0 - gamma, "0 < rho1 < 1 - gamma"),
            (self.rho21 > 0.0 && self.rho21 < 2.0 * nu * (1.0 - gamma) / df, "0 < rho21 < 2 nu (1 - gamma)/d"),
            (self.rho22 > 0.0 && self.rho22 < 0.5 - 2.0 * (1.0 - gamma) * nu / df, "0 < rho22 < 1/2 - 2(1 - gamma) nu/d"),
            (self.rho31 > 0.0, "rho31 > 0"),
            (self.rho32 > 0.0 && self.rho32 < (1.0 - gamma) / df, "0 < rho32 < (1 - gamma)/d"),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(Error::validation(format!("sieve exponents violate {what}")));
            }
        }
        Ok(())
    }

    /// Whether `(θ, α, τ, β)` lies in the sieve set at sample size `n`.
    pub fn contains(&self, theta: f64, alpha: f64, tau: f64, beta: &[f64], n: usize) -> bool {
        let nf = n as f64;
        let b2: f64 = beta.iter().map(|b| b * b).sum();
        let ratio = tau / theta;
        b2 / theta <= nf.powf(self.rho1)
            && ratio >= nf.powf(-self.rho21)
            && ratio <= nf.powf(self.rho22)
            && alpha >= nf.powf(-self.rho31)
            && alpha <= nf.powf(self.rho32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{grid_design, stratified_design};
    use crate::gp_sim::{simulate, simulate_replicate, Truth};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn classical_stencils() {
        let c = limit_constants(1, 1);
        assert_relative_eq!(c[0], -1.0, epsilon = 1e-13);
        assert_relative_eq!(c[1], 1.0, epsilon = 1e-13);
        let c = limit_constants(1, 2);
        for (a, b) in c.iter().zip([1.0, -2.0, 1.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn grid_constants_equal_limits() {
        for &(d, ell) in &[(1, 1), (1, 2), (2, 2), (2, 3)] {
            let g = grid_design(20, d, 0.5).unwrap();
            let st = Stencils::new(&g, ell, 2).unwrap();
            for (a, b) in st.weights(0).iter().zip(limit_constants(d, ell)) {
                assert_relative_eq!(*a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn residuals_on_random_designs() {
        for &(d, ell) in &[(1, 1), (1, 2), (2, 2), (2, 3)] {
            for seed in 0..5 {
                let g = stratified_design(16, d, seed).unwrap();
                let st = Stencils::new(&g, ell, 2).unwrap();
                let bases = st.bases(&g);
                for (pos, &b) in bases.iter().enumerate() {
                    let block: Vec<f64> = st.offsets().iter().flat_map(|&o| g.point(b + o).to_vec()).collect();
                    let res = moment_residual(&block, st.weights(pos), d, ell, 16, 2);
                    assert!(res <= 1e-9 * factorial(ell) * (2.0f64 / 16.0).powi(ell as i32));
                }
            }
        }
    }

    #[test]
    fn degenerate_block_is_singular() {
        let block = [0.3, 0.3];
        assert!(matches!(solve_constants(&block, 1, 1, 10, 2), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn h_and_xi_star_examples() {
        assert_relative_eq!(h_constant(1, 1, 0.5), -2.0, epsilon = 1e-12);
        assert_relative_eq!(xi_star(0.5), -1.0, epsilon = 1e-14);
        assert_relative_eq!(h_constant(1, 2, 0.5), -4.0, epsilon = 1e-11);
        assert_relative_eq!(xi_star(1.0), 0.5, epsilon = 1e-15);
        for &(nu, d) in &[(0.25, 1usize), (0.5, 2), (1.0, 1), (1.5, 2), (2.0, 2), (0.75, 3)] {
            let ell = default_ell(nu, d);
            assert!(xi_star(nu) * h_constant(d, ell, nu) > 0.0, "nu = {nu}, d = {d}");
        }
    }

    #[test]
    fn default_ell_values() {
        assert_eq!(default_ell(0.5, 1), 1);
        assert_eq!(default_ell(0.5, 2), 2);
        assert_eq!(default_ell(1.0, 2), 2);
        assert_eq!(default_ell(0.25, 2), 2);
        assert_eq!(default_ell(1.5, 1), 2);
    }

    #[test]
    fn omega_is_even_and_feasible() {
        assert_eq!(omega_for(1000, 2.0 / 3.0, 1, 1).unwrap(), 100);
        assert_eq!(omega_for(200, 0.02, 1, 0).unwrap(), 2);
        assert_eq!(omega_for(20, 0.9, 2, 1).unwrap(), 4);
        assert!(matches!(omega_for(4, 0.5, 1, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn variation_matches_brute_force() {
        let g = stratified_design(12, 1, 5).unwrap();
        let y: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64).sin()).collect();
        let (ell, omega) = (1, 2);
        for u in 0..2 {
            let got = quadratic_variation_with(&g, &y, u, ell, omega).unwrap();
            let mut want = 0.0;
            let grad = |i: usize| {
                let block = [g.point(i)[0], g.point(i + omega)[0]];
                let c = solve_constants(&block, 1, ell, 12, omega).unwrap();
                c[0] * y[i] + c[1] * y[i + omega]
            };
            for i in 0..(12 - 2 * ell * omega - u) {
                want += grad(i) * grad(i + u);
            }
            assert_relative_eq!(got, want, max_relative = 1e-13);
        }
    }

    #[test]
    fn annihilated_polynomials_have_zero_variation() {
        let g = stratified_design(14, 2, 2).unwrap();
        let ell = 2;
        // every monomial of total degree ≤ 2 except s2²
        let y: Vec<f64> = (0..g.n())
            .map(|i| {
                let s = g.point(i);
                3.0 - s[0] + 2.0 * s[1] + 0.5 * s[0] * s[0] - 4.0 * s[0] * s[1]
            })
            .collect();
        for u in 0..2 {
            let v = quadratic_variation_with(&g, &y, u, ell, 2).unwrap();
            assert!(v.abs() < 1e-20, "u = {u}: {v}");
        }
        assert_eq!(quadratic_variation_with(&g, &vec![0.0; g.n()], 0, ell, 2).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_mean_gives_zero_estimates() {
        let g = stratified_design(30, 1, 4).unwrap();
        let fs = FeatureSpec::PolynomialTotalDegree { degree: 0 };
        let y = vec![1.7; g.n()];
        let ds = Dataset::new(g, fs, y).unwrap();
        let e = estimate(&ds, 0.5, &QvConfig::default()).unwrap();
        assert!(e.theta_hat.abs() < 1e-20 && e.tau_hat.abs() < 1e-20);
    }

    #[test]
    fn pure_noise_expectations() {
        let g = stratified_design(40, 1, 8).unwrap();
        let fs = FeatureSpec::PolynomialTotalDegree { degree: 0 };
        let model = CovarianceModel::matern(0.0, 1.0, 0.5);
        let st = Stencils::new(&g, 1, 2).unwrap();
        let e0 = expected_v_with(&model, 0.7, &[0.0], &fs, &g, 0, 1, 2).unwrap();
        assert_relative_eq!(e0, 0.7 * st.sum_sq(), max_relative = 1e-13);
        assert_eq!(expected_v_with(&model, 0.7, &[0.0], &fs, &g, 1, 1, 4).unwrap(), 0.0);
    }

    #[test]
    fn expectation_matches_monte_carlo() {
        let g = stratified_design(60, 1, 1).unwrap();
        let fs = FeatureSpec::PolynomialTotalDegree { degree: 1 };
        let truth = Truth { model: CovarianceModel::matern(2.0, 1.0, 0.5), tau: 0.3, beta: vec![1.0, 2.0] };
        let cfg = QvConfig::default();
        let exact = expected_estimates(&truth.model, truth.tau, &truth.beta, &fs, &g, &cfg).unwrap();
        let reps = 2000;
        let (mut t, mut th) = (0.0, 0.0);
        let (mut t2, mut th2) = (0.0, 0.0);
        for r in 0..reps {
            let ds = simulate_replicate(&truth, &g, &fs, 77, r).unwrap();
            let e = estimate(&ds, 0.5, &cfg).unwrap();
            t += e.tau_hat;
            th += e.theta_hat;
            t2 += e.tau_hat * e.tau_hat;
            th2 += e.theta_hat * e.theta_hat;
        }
        let n = reps as f64;
        let se = |s: f64, s2: f64| ((s2 / n - (s / n).powi(2)) / n).sqrt();
        assert!((t / n - exact.expected_tau_hat).abs() < 4.0 * se(t, t2));
        assert!((th / n - exact.expected_theta_hat).abs() < 4.0 * se(th, th2));
    }

    #[test]
    fn expected_theta_ratio_improves_with_m() {
        let fs = FeatureSpec::PolynomialTotalDegree { degree: 0 };
        let model = CovarianceModel::matern(1.0, 1.0, 0.5);
        let mut last = f64::INFINITY;
        for &m in &[500usize, 1000, 2000] {
            let g = grid_design(m, 1, 0.5).unwrap();
            let e = expected_estimates(&model, 0.0, &[0.0], &fs, &g, &QvConfig::default()).unwrap();
            let gap = (e.expected_theta_hat - 1.0).abs();
            assert!(gap < last);
            last = gap;
        }
    }

    #[test]
    fn infeasible_configuration_reported() {
        let g = grid_design(5, 1, 0.5).unwrap();
        let ds = Dataset::new(g, FeatureSpec::PolynomialTotalDegree { degree: 0 }, vec![0.0; 5]).unwrap();
        assert!(matches!(estimate(&ds, 0.5, &QvConfig::default()), Err(Error::Infeasible(_))));
        let cfg = QvConfig { gamma_theta: Some(0.3), ..Default::default() };
        assert!(matches!(cfg.resolve(0.5, 1, 100), Err(Error::Validation(_))));
    }

    #[test]
    fn reference_setting_recovers_parameters() {
        let g = grid_design(1000, 1, 0.5).unwrap();
        let fs = FeatureSpec::PolynomialTotalDegree { degree: 3 };
        let model = CovarianceModel::matern(5.0, 1.0, 0.5);
        let beta = [1.0, 0.66, -1.5, 1.0];
        let mut th = Vec::new();
        let mut ta = Vec::new();
        for seed in 0..7 {
            let ds = simulate(&model, 0.5, &beta, &g, &fs, seed).unwrap();
            let e = estimate(&ds, 0.5, &QvConfig::default()).unwrap();
            th.push(e.theta_hat / 5.0);
            ta.push(e.tau_hat / 0.5);
        }
        th.sort_by(f64::total_cmp);
        ta.sort_by(f64::total_cmp);
        assert!((th[3] - 1.0).abs() < 0.25, "{th:?}");
        assert!((ta[3] - 1.0).abs() < 0.25, "{ta:?}");
    }

    #[test]
    fn sieve_defaults_are_valid() {
        for &(nu, d) in &[(0.5, 1usize), (0.5, 2), (1.5, 2)] {
            let gamma = 4.0 * nu / (4.0 * nu + d as f64);
            let s = SieveSpec::default_for(nu, d, gamma);
            s.validate(nu, d, gamma).unwrap();
            assert!(s.contains(1.0, 1.0, 0.5, &[1.0, -1.0], 1000));
            assert!(!s.contains(1.0, 1e-9, 0.5, &[1.0, -1.0], 1000));
        }
    }

    proptest! {
        #[test]
        fn scale_equivariance(c in 0.1f64..10.0, seed in 0u64..50) {
            let g = stratified_design(30, 1, seed).unwrap();
            let fs = FeatureSpec::PolynomialTotalDegree { degree: 0 };
            let ds = simulate(&CovarianceModel::matern(1.0, 1.0, 0.5), 0.2, &[0.0], &g, &fs, seed).unwrap();
            let scaled = ds.with_y(ds.y.iter().map(|v| c * v).collect()).unwrap();
            let a = estimate(&ds, 0.5, &QvConfig::default()).unwrap();
            let b = estimate(&scaled, 0.5, &QvConfig::default()).unwrap();
            prop_assert!((b.theta_hat - c * c * a.theta_hat).abs() <= 1e-10 * (c * c * a.theta_hat).abs());
            prop_assert!((b.tau_hat - c * c * a.tau_hat).abs() <= 1e-10 * (c * c * a.tau_hat).abs());
        }

        #[test]
        fn mean_shift_insensitivity(a0 in -5.0f64..5.0, a1 in -5.0f64..5.0, a2 in -5.0f64..5.0, seed in 0u64..50) {
            let g = stratified_design(12, 2, seed).unwrap();
            let fs = FeatureSpec::PolynomialTotalDegree { degree: 0 };
            let ds = simulate(&CovarianceModel::matern(1.0, 1.0, 0.5), 0.2, &[0.0], &g, &fs, seed).unwrap();
            let shifted: Vec<f64> = (0..ds.n()).map(|i| {
                let s = g.point(i);
                ds.y[i] + a0 + a1 * s[0] + a2 * s[1] + a1 * s[0] * s[0] + a2 * s[0] * s[1]
            }).collect();
            for u in 0..2 {
                let v = quadratic_variation_with(&g, &ds.y, u, 2, 2).unwrap();
                let w = quadratic_variation_with(&g, &shifted, u, 2, 2).unwrap();
                prop_assert!((v - w).abs() <= 1e-8 * v.abs().max(1e-12));
            }
        }
    }
}
