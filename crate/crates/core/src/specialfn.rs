//! Special functions and adaptive quadrature used by the kernels and densities.
//!
//! `log_gamma`/`gamma` delegate to `libm` (a port of the FreeBSD/musl routines).
//! The modified Bessel function of the second kind is evaluated for real order
//! with Temme's series for `x < 2` and Steed's continued fraction otherwise,
//! followed by upward recurrence in the order.

use std::collections::BinaryHeap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[cfg(test)]
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// ln Γ(x) for x > 0.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::domain(format!("log_gamma requires finite x > 0, got {x}")));
    }
    Ok(libm::lgamma(x))
}

/// Γ(x) for finite x that is not a non-positive integer.
pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// Digamma ψ(x) = d/dx ln Γ(x).
///
/// Recurrence up to x ≥ 10, then the asymptotic series; reflection for x < 0.
pub fn digamma(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("digamma requires finite x, got {x}")));
    }
    if x <= 0.0 && x == x.floor() {
        return Err(Error::domain(format!("digamma has a pole at {x}")));
    }
    if x < 0.0 {
        // ψ(1 − x) − ψ(x) = π cot(πx)
        return Ok(digamma(1.0 - x)? - PI / (PI * x).tan());
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < 10.0 {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let z2 = 1.0 / (z * z);
    // Bernoulli terms B_{2k}/(2k)
    let series = z2
        * (1.0 / 12.0
            - z2 * (1.0 / 120.0
                - z2 * (1.0 / 252.0
                    - z2 * (1.0 / 240.0 - z2 * (1.0 / 132.0 - z2 * (691.0 / 32760.0 - z2 / 12.0))))));
    Ok(acc + z.ln() - 0.5 / z - series)
}

/// Odd and even parts of 1/Γ(1 ± μ) needed by Temme's series:
/// returns (Γ₁, Γ₂, 1/Γ(1+μ), 1/Γ(1−μ)).
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    // Taylor coefficients of 1/Γ(1+z)
    const A: [f64; 12] = [
        1.0,
        0.577_215_664_901_532_9,
        -0.655_878_071_520_253_9,
        -0.042_002_635_034_095_24,
        0.166_538_611_382_291_5,
        -0.042_197_734_555_544_34,
        -0.009_621_971_527_876_974,
        0.007_218_943_246_663_1,
        -0.001_165_167_591_859_065,
        -0.000_215_241_674_114_951,
        0.000_128_050_282_388_116_2,
        -0.000_020_134_854_780_788_24,
    ];
    if mu.abs() < 0.1 {
        let m2 = mu * mu;
        let gam1 = -(A[1] + m2 * (A[3] + m2 * (A[5] + m2 * (A[7] + m2 * (A[9] + m2 * A[11])))));
        let gam2 = A[0] + m2 * (A[2] + m2 * (A[4] + m2 * (A[6] + m2 * (A[8] + m2 * A[10]))));
        (gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1)
    } else {
        let gampl = 1.0 / gamma(1.0 + mu);
        let gammi = 1.0 / gamma(1.0 - mu);
        ((gammi - gampl) / (2.0 * mu), 0.5 * (gammi + gampl), gampl, gammi)
    }
}

/// Returns (e^x K_ν(x), e^x K_{ν+1}(x)).
pub(crate) fn bessel_k_pair_scaled(nu: f64, x: f64) -> (f64, f64) {
    const EPS: f64 = 1e-16;
    const MAXIT: usize = 100_000;
    let nl = (nu + 0.5).floor() as usize;
    let xmu = nu - nl as f64;
    let xmu2 = xmu * xmu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    let (mut rkmu, mut rk1);
    if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = PI * xmu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = xmu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(xmu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..MAXIT {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - xmu2);
            c *= dd / fi;
            p /= fi - xmu;
            q /= fi + xmu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        let scale = x.exp();
        rkmu = sum * scale;
        rk1 = sum1 * xi2 * scale;
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - xmu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..MAXIT {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        rkmu = (PI / (2.0 * x)).sqrt() / s;
        rk1 = rkmu * (xmu + x + 0.5 - h) * xi;
    }
    for i in 1..=nl {
        let next = (xmu + i as f64) * xi2 * rk1 + rkmu;
        rkmu = rk1;
        rk1 = next;
    }
    (rkmu, rk1)
}

/// Modified Bessel function of the second kind K_ν(x) for real ν ≥ 0, x > 0.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !nu.is_finite() || nu < 0.0 {
        return Err(Error::domain(format!("bessel_k requires order >= 0, got {nu}")));
    }
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::domain(format!("bessel_k requires x > 0, got {x}")));
    }
    let (k, _) = bessel_k_pair_scaled(nu, x);
    Ok(k * (-x).exp())
}

/// ln K_ν(x), finite even where K_ν(x) itself under- or overflows.
pub fn ln_bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !nu.is_finite() || nu < 0.0 {
        return Err(Error::domain(format!("ln_bessel_k requires order >= 0, got {nu}")));
    }
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::domain(format!("ln_bessel_k requires x > 0, got {x}")));
    }
    let (k, _) = bessel_k_pair_scaled(nu, x);
    Ok(k.ln() - x)
}

/// Tolerances and subdivision budget for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { abs_tol: 1e-10, rel_tol: 1e-8, max_subdivisions: 500 }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(Error::validation("quadrature tolerances must be strictly positive"));
        }
        if self.max_subdivisions < 1 {
            return Err(Error::validation("max_subdivisions must be at least 1"));
        }
        Ok(())
    }
}

// 15-point Kronrod abscissae with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gauss_kronrod<F: Fn(f64) -> f64 + ?Sized>(f: &F, lo: f64, hi: f64) -> Result<Segment> {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut finite = fc.is_finite();
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        finite &= f1.is_finite() && f2.is_finite();
        kronrod += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    if !finite {
        return Err(Error::domain(format!("integrand not finite on ({lo}, {hi})")));
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    Ok(Segment { lo, hi, value, error })
}

fn adaptive<F: Fn(f64) -> f64 + ?Sized>(f: &F, lo: f64, hi: f64, spec: &QuadratureSpec) -> Result<f64> {
    let first = gauss_kronrod(f, lo, hi)?;
    let mut total = first.value;
    let mut total_err = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    let mut splits = 0;
    loop {
        let tol = spec.abs_tol.max(spec.rel_tol * total.abs());
        if total_err <= tol {
            return Ok(total);
        }
        if splits >= spec.max_subdivisions {
            return Err(Error::Accuracy { estimate: total, error_bound: total_err });
        }
        let worst = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            // interval can no longer be bisected in floating point
            return Err(Error::Accuracy { estimate: total, error_bound: total_err });
        }
        let left = gauss_kronrod(f, worst.lo, mid)?;
        let right = gauss_kronrod(f, mid, worst.hi)?;
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        splits += 1;
        if splits % 64 == 0 {
            // resum to keep round-off from drifting
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
}

/// Adaptive Gauss–Kronrod (7/15) quadrature of `integrand` over `[lower, upper]`.
///
/// Either limit may be infinite; a half-line is mapped onto `[0, 1)` with
/// t = a + u/(1−u), and the whole line is split at zero.
pub fn integrate<F: Fn(f64) -> f64>(
    integrand: F,
    lower: f64,
    upper: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    spec.validate()?;
    integrate_dyn(&integrand, lower, upper, spec)
}

fn integrate_dyn(integrand: &dyn Fn(f64) -> f64, lower: f64, upper: f64, spec: &QuadratureSpec) -> Result<f64> {
    if lower.is_nan() || upper.is_nan() {
        return Err(Error::domain("integration limits must not be NaN"));
    }
    if lower == upper {
        return Ok(0.0);
    }
    if lower > upper {
        return integrate_dyn(integrand, upper, lower, spec).map(|v| -v);
    }
    match (lower.is_finite(), upper.is_finite()) {
        (true, true) => adaptive(integrand, lower, upper, spec),
        (true, false) => {
            let g = |u: f64| {
                let w = 1.0 - u;
                if w <= 0.0 {
                    return 0.0;
                }
                let t = lower + u / w;
                if !t.is_finite() {
                    return 0.0;
                }
                integrand(t) / (w * w)
            };
            adaptive(&g, 0.0, 1.0, spec)
        }
        (false, true) => {
            let g = |u: f64| {
                let w = 1.0 - u;
                if w <= 0.0 {
                    return 0.0;
                }
                let t = upper - u / w;
                if !t.is_finite() {
                    return 0.0;
                }
                integrand(t) / (w * w)
            };
            adaptive(&g, 0.0, 1.0, spec)
        }
        (false, false) => {
            let left = integrate_dyn(integrand, f64::NEG_INFINITY, 0.0, spec)?;
            let right = integrate_dyn(integrand, 0.0, f64::INFINITY, spec)?;
            Ok(left + right)
        }
    }
}
