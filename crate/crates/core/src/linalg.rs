//! Dense Cholesky factorization with jitter escalation and a few small helpers.

use std::sync::Once;

use faer::{Mat, MatRef, Par, Side};

use crate::error::{Error, Result};

static SEQUENTIAL: Once = Once::new();

// faer's parallel kernels reduce in a thread-dependent order; results must be
// bitwise reproducible, so everything runs sequentially inside faer.
fn sequential() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(Par::Seq));
}

/// Lower Cholesky factor `A + jitter·I = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Mat<f64>,
    jitter: f64,
}

fn diagnostics(a: &Mat<f64>, message: String) -> Error {
    let n = a.nrows();
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let mean = if n > 0 { diag.iter().sum::<f64>() / n as f64 } else { f64::NAN };
    Error::Numerical {
        message,
        n,
        mean_diag: mean,
        min_diag: diag.iter().copied().fold(f64::INFINITY, f64::min),
        max_diag: diag.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

impl Cholesky {
    /// Factor without any jitter.
    pub fn new(a: &Mat<f64>) -> Result<Self> {
        sequential();
        if a.nrows() != a.ncols() {
            return Err(Error::validation("Cholesky needs a square matrix"));
        }
        match a.llt(Side::Lower) {
            Ok(f) => Ok(Self { l: f.L().to_owned(), jitter: 0.0 }),
            Err(_) => Err(diagnostics(a, "matrix is not numerically positive definite".into())),
        }
    }

    /// Factor, adding 1e-12·tr(A)/n to the diagonal on failure and escalating
    /// by factors of ten up to 1e-6·tr(A)/n.
    pub fn with_jitter(a: &Mat<f64>) -> Result<Self> {
        if let Ok(f) = Self::new(a) {
            return Ok(f);
        }
        let n = a.nrows();
        let scale = (0..n).map(|i| a[(i, i)]).sum::<f64>() / n as f64;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(diagnostics(a, "non-positive or non-finite mean diagonal".into()));
        }
        let mut rel = 1e-12;
        while rel <= 1e-6 * (1.0 + 1e-9) {
            let jitter = rel * scale;
            let mut b = a.clone();
            for i in 0..n {
                b[(i, i)] += jitter;
            }
            if let Ok(f) = b.llt(Side::Lower) {
                log::debug!("Cholesky succeeded with jitter {jitter:e}");
                return Ok(Self { l: f.L().to_owned(), jitter });
            }
            rel *= 10.0;
        }
        Err(diagnostics(a, "Cholesky failed after jitter escalation to 1e-6·tr/n".into()))
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> MatRef<'_, f64> {
        self.l.as_ref()
    }

    /// Diagonal jitter that was added before the factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// `B ← L⁻¹ B`.
    pub fn whiten_in_place(&self, b: &mut Mat<f64>) {
        self.l.as_ref().solve_lower_triangular_in_place(b.as_mut());
    }

    pub fn whiten(&self, b: &[f64]) -> Vec<f64> {
        let mut m = column(b);
        self.whiten_in_place(&mut m);
        to_vec(&m)
    }

    /// `A⁻¹ B`.
    pub fn solve(&self, b: &Mat<f64>) -> Mat<f64> {
        let mut x = b.clone();
        self.whiten_in_place(&mut x);
        self.l.as_ref().transpose().solve_upper_triangular_in_place(x.as_mut());
        x
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        to_vec(&self.solve(&column(b)))
    }

    /// `L v`, used to color white noise.
    pub fn color(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.l[(i, j)] * z[j];
            }
            out[i] = acc;
        }
        out
    }
}

pub fn column(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn to_vec(m: &Mat<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Eigenvalues of a symmetric matrix in nondecreasing order.
pub fn symmetric_eigenvalues(a: &Mat<f64>) -> Result<Vec<f64>> {
    sequential();
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| diagnostics(a, "symmetric eigenvalue iteration did not converge".into()))
}
