//! Stratified sampling designs on `[0,1]^d`, regression features, and the
//! index sets used by the quadratic variations.
//!
//! Multi-indices are 1-based, `i = (i₁,…,i_d)` with `1 ≤ i_k ≤ m`. Points are
//! stored in flat order `Σ (i_k − 1) m^{k−1}`, so `i₁` varies fastest.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    d: usize,
    m: usize,
    /// Row-major `n × d` coordinates.
    points: Vec<f64>,
    /// Row-major `n × d` within-cell offsets in `[0, 1)`.
    delta: Vec<f64>,
}

impl Design {
    /// Builds `s_k(i) = (i_k − 1 + δ_{i;k}) / m` from the offsets.
    pub fn from_offsets(m: usize, d: usize, delta: Vec<f64>) -> Result<Self> {
        if m < 1 {
            return Err(Error::validation("design needs m >= 1"));
        }
        if d < 1 {
            return Err(Error::validation("design dimension must be at least 1"));
        }
        let n = m
            .checked_pow(d as u32)
            .ok_or_else(|| Error::validation(format!("m^d overflows for m = {m}, d = {d}")))?;
        if delta.len() != n * d {
            return Err(Error::validation(format!(
                "expected {} offsets for m = {m}, d = {d}, got {}",
                n * d,
                delta.len()
            )));
        }
        if let Some(bad) = delta.iter().find(|v| !(0.0..1.0).contains(*v)) {
            return Err(Error::validation(format!("offset {bad} outside [0, 1)")));
        }
        let mf = m as f64;
        let mut points = vec![0.0; n * d];
        let mut idx = vec![1usize; d];
        for flat in 0..n {
            for k in 0..d {
                let s = (idx[k] as f64 - 1.0 + delta[flat * d + k]) / mf;
                // guard against rounding up onto the next cell boundary
                points[flat * d + k] = s.min(prev_float(idx[k] as f64 / mf));
            }
            advance(&mut idx, m);
        }
        Ok(Self { d, m, points, delta })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn point(&self, flat: usize) -> &[f64] {
        &self.points[flat * self.d..(flat + 1) * self.d]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    /// True when every offset is identical, i.e. the design is a shifted grid.
    pub fn is_equispaced(&self) -> bool {
        self.delta.iter().all(|&v| v == self.delta[0])
    }

    /// Flat position of the 1-based multi-index `i`.
    pub fn flat_index(&self, i: &[usize]) -> usize {
        debug_assert_eq!(i.len(), self.d);
        let mut flat = 0;
        let mut stride = 1;
        for &ik in i {
            debug_assert!(ik >= 1 && ik <= self.m);
            flat += (ik - 1) * stride;
            stride *= self.m;
        }
        flat
    }

    /// 1-based multi-index of a flat position.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.d);
        for _ in 0..self.d {
            out.push(flat % self.m + 1);
            flat /= self.m;
        }
        out
    }

    /// Rejects designs with two identical points.
    pub fn check_distinct(&self) -> Result<()> {
        let mut rows: Vec<&[f64]> = self.points.chunks(self.d).collect();
        rows.sort_by(|a, b| {
            a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        });
        for w in rows.windows(2) {
            if w[0] == w[1] {
                return Err(Error::validation(format!("duplicate design point {:?}", w[0])));
            }
        }
        Ok(())
    }

    /// Writes `i₁,…,i_d,s₁,…,s_d` rows.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.d).map(|k| format!("i{k}")).collect();
        header.extend((1..=self.d).map(|k| format!("s{k}")));
        out.write_record(&header)?;
        for flat in 0..self.n() {
            let mut rec: Vec<String> = self.multi_index(flat).iter().map(|v| v.to_string()).collect();
            rec.extend(self.point(flat).iter().map(|v| format!("{v:?}")));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn prev_float(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

/// Odometer increment of a 1-based multi-index with `i₁` fastest.
pub(crate) fn advance(idx: &mut [usize], m: usize) {
    for v in idx.iter_mut() {
        if *v < m {
            *v += 1;
            return;
        }
        *v = 1;
    }
}

/// Regular grid with a common offset in every cell; `offset = 1/2` gives the
/// midpoint grid `(2i − 1)/(2m)`.
pub fn grid_design(m: usize, d: usize, offset: f64) -> Result<Design> {
    if !(0.0..1.0).contains(&offset) {
        return Err(Error::validation(format!("grid offset {offset} outside [0, 1)")));
    }
    let n = m.checked_pow(d as u32).unwrap_or(usize::MAX);
    if m < 2 || d < 1 || n == usize::MAX {
        return Err(Error::validation(format!("invalid grid size m = {m}, d = {d}")));
    }
    Design::from_offsets(m, d, vec![offset; n * d])
}

/// One uniformly placed point per cell, offsets drawn from the seeded stream.
pub fn stratified_design(m: usize, d: usize, seed: u64) -> Result<Design> {
    stratified_design_replicate(m, d, seed, 0)
}

pub fn stratified_design_replicate(m: usize, d: usize, seed: u64, replicate: u64) -> Result<Design> {
    if m < 2 || d < 1 {
        return Err(Error::validation(format!("invalid design size m = {m}, d = {d}")));
    }
    let n = m
        .checked_pow(d as u32)
        .ok_or_else(|| Error::validation(format!("m^d overflows for m = {m}, d = {d}")))?;
    let mut r = rng::stream(seed, replicate, Purpose::Design);
    let delta: Vec<f64> = (0..n * d).map(|_| r.random::<f64>()).collect();
    Design::from_offsets(m, d, delta)
}

/// Regression functions `f(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSpec {
    /// All monomials of total degree at most `degree`, graded lexicographic.
    PolynomialTotalDegree { degree: u32 },
    /// Named monomials such as `"1"`, `"s1"`, `"s1^2"`, `"s1*s2"`.
    Custom { terms: Vec<String> },
}

impl FeatureSpec {
    /// Exponent vectors, one per feature.
    pub fn exponents(&self, d: usize) -> Result<Vec<Vec<u32>>> {
        match self {
            FeatureSpec::PolynomialTotalDegree { degree } => {
                let mut out = Vec::new();
                for total in 0..=*degree {
                    graded(d, total, &mut Vec::new(), &mut out);
                }
                Ok(out)
            }
            FeatureSpec::Custom { terms } => {
                if terms.is_empty() {
                    return Err(Error::validation("custom feature list is empty"));
                }
                terms.iter().map(|t| parse_monomial(t, d)).collect()
            }
        }
    }

    pub fn p(&self, d: usize) -> Result<usize> {
        Ok(self.exponents(d)?.len())
    }

    /// `f(s)` at one location.
    pub fn eval(&self, s: &[f64]) -> Result<Vec<f64>> {
        let ex = self.exponents(s.len())?;
        Ok(ex.iter().map(|e| monomial(s, e)).collect())
    }
}

fn graded(d: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() + 1 == d {
        let mut e = prefix.clone();
        e.push(remaining);
        out.push(e);
        return;
    }
    for k in (0..=remaining).rev() {
        prefix.push(k);
        graded(d, remaining - k, prefix, out);
        prefix.pop();
    }
}

fn parse_monomial(term: &str, d: usize) -> Result<Vec<u32>> {
    let mut e = vec![0u32; d];
    let t = term.trim();
    if t == "1" {
        return Ok(e);
    }
    for factor in t.split('*') {
        let factor = factor.trim();
        let (var, pow) = match factor.split_once('^') {
            Some((v, p)) => (v.trim(), p.trim().parse::<u32>().map_err(|_| bad_term(term))?),
            None => (factor, 1),
        };
        let k: usize = var.strip_prefix('s').and_then(|v| v.parse().ok()).ok_or_else(|| bad_term(term))?;
        if k < 1 || k > d {
            return Err(Error::validation(format!("feature term {term:?} refers to s{k} but d = {d}")));
        }
        e[k - 1] += pow;
    }
    Ok(e)
}

fn bad_term(term: &str) -> Error {
    Error::validation(format!("cannot parse feature term {term:?}; expected e.g. 1, s1, s1^2*s2"))
}

fn monomial(s: &[f64], e: &[u32]) -> f64 {
    s.iter().zip(e).map(|(x, &k)| x.powi(k as i32)).product()
}

/// Row-major `n × p` regression matrix.
pub fn features(spec: &FeatureSpec, design: &Design) -> Result<Vec<f64>> {
    features_at(spec, design.points(), design.d())
}

/// Regression matrix at arbitrary row-major locations.
pub fn features_at(spec: &FeatureSpec, points: &[f64], d: usize) -> Result<Vec<f64>> {
    let ex = spec.exponents(d)?;
    let mut out = Vec::with_capacity(points.len() / d * ex.len());
    for s in points.chunks(d) {
        out.extend(ex.iter().map(|e| monomial(s, e)));
    }
    Ok(out)
}

/// `Ξ_{u,m} = {i : 1 ≤ i₁ + u, i₁, …, i_d ≤ m − 2ℓω}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet {
    pub u: usize,
    pub m: usize,
    pub d: usize,
    pub ell: usize,
    pub omega: usize,
}

impl IndexSet {
    /// Largest admissible coordinate `m − 2ℓω`.
    pub fn upper(&self) -> usize {
        self.m - 2 * self.ell * self.omega
    }

    pub fn len(&self) -> usize {
        let up = self.upper();
        (up - self.u) * up.pow(self.d as u32 - 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Members as 1-based multi-indices, `i₁` fastest.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let up = self.upper();
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![1usize; self.d];
        let total = up.pow(self.d as u32);
        for _ in 0..total {
            if idx[0] + self.u <= up {
                out.push(idx.clone());
            }
            advance(&mut idx, up);
        }
        out
    }
}

/// Enumerates `Ξ_{u,m}`, failing when it is empty.
pub fn index_set(u: usize, m: usize, d: usize, ell: usize, omega: usize) -> Result<IndexSet> {
    if u > 1 {
        return Err(Error::validation(format!("lag u must be 0 or 1, got {u}")));
    }
    if ell < 1 || d < 1 {
        return Err(Error::validation("index set needs ell >= 1 and d >= 1"));
    }
    if omega < 2 || omega % 2 != 0 {
        return Err(Error::validation(format!("omega must be even and >= 2, got {omega}")));
    }
    if m <= 2 * ell * omega + u {
        return Err(Error::Infeasible(format!(
            "m = {m} must exceed 2·ell·omega + u = {} (ell = {ell}, omega = {omega}, u = {u})",
            2 * ell * omega + u
        )));
    }
    Ok(IndexSet { u, m, d, ell, omega })
}
