//! Datasets `Y(s) = f(s)ᵀβ + X(s) + ε(s)` and their simulation.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariance::{covariance_matrix_points, CovarianceModel};
use crate::design::{features, Design, FeatureSpec};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::rng::{self, Purpose};

/// Generating parameters of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub model: CovarianceModel,
    pub tau: f64,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub design: Design,
    pub features: FeatureSpec,
    /// Row-major `n × p` regression matrix.
    pub f: Vec<f64>,
    pub p: usize,
    pub y: Vec<f64>,
    pub truth: Option<Truth>,
    /// Latent process values at the design points, when simulated.
    pub x_true: Option<Vec<f64>>,
    /// Diagonal jitter used when sampling the latent process.
    pub jitter: f64,
}

/// JSON sidecar stored next to the data CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    schema: u32,
    m: usize,
    d: usize,
    features: FeatureSpec,
    #[serde(default)]
    truth: Option<Truth>,
    #[serde(default)]
    jitter: f64,
}

impl Dataset {
    /// Observed data without any generating truth.
    pub fn new(design: Design, features_spec: FeatureSpec, y: Vec<f64>) -> Result<Self> {
        if y.len() != design.n() {
            return Err(Error::validation(format!("expected {} observations, got {}", design.n(), y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("observations must be finite"));
        }
        let p = features_spec.p(design.d())?;
        let f = features(&features_spec, &design)?;
        Ok(Self { design, features: features_spec, f, p, y, truth: None, x_true: None, jitter: 0.0 })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.design.d()
    }

    /// Row `i` of the regression matrix.
    pub fn f_row(&self, i: usize) -> &[f64] {
        &self.f[i * self.p..(i + 1) * self.p]
    }

    /// Copy with a different observation vector (same design and features).
    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::validation("observation vector has the wrong length"));
        }
        Ok(Self { y, ..self.clone() })
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let d = self.d();
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join(format!("{stem}.csv")))?));
        let mut header: Vec<String> = Vec::new();
        header.extend((1..=d).map(|k| format!("i{k}")));
        header.extend((1..=d).map(|k| format!("s{k}")));
        header.extend((1..=d).map(|k| format!("delta{k}")));
        header.extend((1..=self.p).map(|k| format!("f{k}")));
        header.push("y".into());
        if self.x_true.is_some() {
            header.push("x_true".into());
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.design.multi_index(i).iter().map(|v| v.to_string()).collect();
            rec.extend(self.design.point(i).iter().map(|v| format!("{v:?}")));
            rec.extend(self.design.delta()[i * d..(i + 1) * d].iter().map(|v| format!("{v:?}")));
            rec.extend(self.f_row(i).iter().map(|v| format!("{v:?}")));
            rec.push(format!("{:?}", self.y[i]));
            if let Some(x) = &self.x_true {
                rec.push(format!("{:?}", x[i]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        let side = Sidecar {
            schema: 1,
            m: self.design.m(),
            d,
            features: self.features.clone(),
            truth: self.truth.clone(),
            jitter: self.jitter,
        };
        let mut js = BufWriter::new(File::create(dir.join(format!("{stem}.json")))?);
        serde_json::to_writer_pretty(&mut js, &side)?;
        Ok(())
    }

    /// Reads a dataset written by [`Dataset::write`].
    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let side: Sidecar = serde_json::from_reader(BufReader::new(File::open(dir.join(format!("{stem}.json")))?))?;
        if side.schema != 1 {
            return Err(Error::validation(format!("unsupported dataset schema {}", side.schema)));
        }
        let d = side.d;
        let n = side.m.checked_pow(d as u32).ok_or_else(|| Error::validation("m^d overflows"))?;
        let mut delta = vec![f64::NAN; n * d];
        let mut y = vec![f64::NAN; n];
        let mut x: Option<Vec<f64>> = None;
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(dir.join(format!("{stem}.csv")))?));
        let headers = r.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let y_col = col("y").ok_or_else(|| Error::validation("dataset CSV has no y column"))?;
        let x_col = col("x_true");
        if x_col.is_some() {
            x = Some(vec![f64::NAN; n]);
        }
        let probe = Design::from_offsets(side.m, d, vec![0.0; n * d])?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::validation(format!("bad number {s:?}")));
        for rec in r.records() {
            let rec = rec?;
            let idx: Vec<usize> = (0..d)
                .map(|k| rec[k].trim().parse::<usize>().map_err(|_| Error::validation("bad index")))
                .collect::<Result<_>>()?;
            if idx.iter().any(|&v| v < 1 || v > side.m) {
                return Err(Error::validation(format!("index {idx:?} outside 1..={}", side.m)));
            }
            let flat = probe.flat_index(&idx);
            for k in 0..d {
                delta[flat * d + k] = parse(&rec[2 * d + k])?;
            }
            y[flat] = parse(&rec[y_col])?;
            if let (Some(c), Some(xs)) = (x_col, x.as_mut()) {
                xs[flat] = parse(&rec[c])?;
            }
        }
        if y.iter().any(|v| v.is_nan()) {
            return Err(Error::validation("dataset CSV does not cover every design cell"));
        }
        let design = Design::from_offsets(side.m, d, delta)?;
        let mut ds = Dataset::new(design, side.features, y)?;
        ds.truth = side.truth;
        ds.x_true = x;
        ds.jitter = side.jitter;
        Ok(ds)
    }
}

fn standard_normals<R: rand::Rng>(r: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

/// Latent field sampled jointly at row-major `points`, returning the values and the jitter used.
pub fn sample_latent(model: &CovarianceModel, points: &[f64], d: usize, seed: u64, replicate: u64) -> Result<(Vec<f64>, f64)> {
    let n = points.len() / d;
    if model.theta == 0.0 {
        return Ok((vec![0.0; n], 0.0));
    }
    let k = covariance_matrix_points(model, points, d, 0.0)?;
    let chol = Cholesky::with_jitter(&k)?;
    let z = standard_normals(&mut rng::stream(seed, replicate, Purpose::Latent), n);
    Ok((chol.color(&z), chol.jitter()))
}

/// Simulates one replicate. The latent field is drawn at the design points
/// followed by `extra_points`; values at the extra points are returned separately.
pub fn simulate_joint(
    truth: &Truth,
    design: &Design,
    features_spec: &FeatureSpec,
    extra_points: &[f64],
    seed: u64,
    replicate: u64,
) -> Result<(Dataset, Vec<f64>)> {
    let d = design.d();
    let model = &truth.model;
    if model.theta != 0.0 {
        model.validate(d)?;
    } else {
        model.with_params(1.0, model.alpha).validate(d)?;
    }
    if !(truth.tau >= 0.0) || !truth.tau.is_finite() {
        return Err(Error::validation(format!("nugget must be finite and >= 0, got {}", truth.tau)));
    }
    let p = features_spec.p(d)?;
    if truth.beta.len() != p {
        return Err(Error::validation(format!("beta has {} entries but the features define {p}", truth.beta.len())));
    }
    if extra_points.len() % d != 0 {
        return Err(Error::validation("extra points are not a multiple of the dimension"));
    }
    design.check_distinct()?;
    let n = design.n();
    let mut all = design.points().to_vec();
    all.extend_from_slice(extra_points);
    let (latent, jitter) = sample_latent(model, &all, d, seed, replicate)?;
    let f = features(features_spec, design)?;
    let eps = standard_normals(&mut rng::stream(seed, replicate, Purpose::Noise), n);
    let sd = truth.tau.sqrt();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let mean: f64 = f[i * p..(i + 1) * p].iter().zip(&truth.beta).map(|(a, b)| a * b).sum();
            mean + latent[i] + sd * eps[i]
        })
        .collect();
    let mut ds = Dataset::new(design.clone(), features_spec.clone(), y)?;
    ds.truth = Some(truth.clone());
    ds.x_true = Some(latent[..n].to_vec());
    ds.jitter = jitter;
    Ok((ds, latent[n..].to_vec()))
}

/// Simulates `Y = Fβ + X + ε` on the design.
pub fn simulate(
    model: &CovarianceModel,
    tau: f64,
    beta: &[f64],
    design: &Design,
    features_spec: &FeatureSpec,
    seed: u64,
) -> Result<Dataset> {
    let truth = Truth { model: *model, tau, beta: beta.to_vec() };
    Ok(simulate_joint(&truth, design, features_spec, &[], seed, 0)?.0)
}

/// Same as [`simulate`] for replicate `replicate` of a seeded study.
pub fn simulate_replicate(truth: &Truth, design: &Design, features_spec: &FeatureSpec, seed: u64, replicate: u64) -> Result<Dataset> {
    Ok(simulate_joint(truth, design, features_spec, &[], seed, replicate)?.0)
}
