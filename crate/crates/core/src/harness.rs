//! Experiment orchestration behind the `infillgp` binary.
//!
//! Every command reads one JSON configuration and writes CSV/JSON files into
//! an output directory. Dataset files are named `data_m<m>_r<replicate>`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{rate_regression, theoretical_rates, w2_barycenter, RateFit};
use crate::covariance::CovarianceModel;
use crate::design::{grid_design, stratified_design_replicate, Design, FeatureSpec};
use crate::error::{Error, Result};
use crate::gp_sim::{simulate_joint, Dataset, Truth};
use crate::inference::{run_mcmc, McmcConfig, PosteriorChain, PriorSpec};
use crate::prediction::{evenly_spaced, mse_ratio_experiment};
use crate::quadvar::{estimate, QvConfig};
use crate::rng::{self, Purpose};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    #[default]
    Stratified,
    /// Cell midpoints.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionConfig {
    /// Uniform test locations drawn per dataset at simulation time.
    pub test_points: usize,
    /// Posterior draws (evenly spaced along the chain) used for `M_post`.
    pub draws: usize,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self { test_points: 200, draws: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RatesConfig {
    /// Long-format CSV `parameter,n,error`; defaults to the MCMC summary.
    pub input: Option<PathBuf>,
    pub quantiles: usize,
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self { input: None, quantiles: crate::analysis::DEFAULT_QUANTILES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub path: PathBuf,
    pub lat: String,
    pub lon: String,
    pub value: String,
    #[serde(default = "one")]
    pub stride: usize,
    /// Number of random equispaced sub-grids to write instead of the full grid.
    #[serde(default)]
    pub subsets: usize,
    /// Side length of each sub-grid.
    #[serde(default)]
    pub subset_m: Option<usize>,
}

fn one() -> usize {
    1
}

fn default_features() -> FeatureSpec {
    FeatureSpec::PolynomialTotalDegree { degree: 1 }
}

fn default_d() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default = "default_d")]
    pub d: usize,
    /// Values of `m` (`n = m^d`).
    #[serde(default)]
    pub schedule: Vec<usize>,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub design: DesignKind,
    #[serde(default)]
    pub truth: Option<Truth>,
    /// Kernel family and shape used for inference; `theta` and `alpha` are ignored.
    #[serde(default)]
    pub model: Option<CovarianceModel>,
    #[serde(default = "default_features")]
    pub features: FeatureSpec,
    #[serde(default)]
    pub qv: QvConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub priors: PriorSpec,
    #[serde(default)]
    pub prediction: PredictionConfig,
    #[serde(default)]
    pub rates: RatesConfig,
    #[serde(default)]
    pub ingest: Option<IngestConfig>,
    /// Where input datasets and chains are read from; defaults to the output directory.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::validation(format!("unsupported config schema {} (expected {SCHEMA})", self.schema)));
        }
        if self.d < 1 {
            return Err(Error::validation("d must be at least 1"));
        }
        if self.replicates < 1 {
            return Err(Error::validation("replicates must be at least 1"));
        }
        if self.schedule.iter().any(|&m| m < 1) {
            return Err(Error::validation("schedule entries must be at least 1"));
        }
        self.mcmc.validate()?;
        self.priors.validate()?;
        if let Some(t) = &self.truth {
            if t.model.theta != 0.0 {
                t.model.validate(self.d)?;
            }
        }
        Ok(())
    }

    /// Covariance family used for estimation.
    pub fn template(&self) -> CovarianceModel {
        self.model
            .or_else(|| self.truth.as_ref().map(|t| t.model))
            .unwrap_or_else(|| CovarianceModel::matern(1.0, 1.0, 0.5))
    }

    fn input_dir(&self, out: &Path) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| out.to_path_buf())
    }

    fn require_schedule(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::validation("schedule must be nonempty"));
        }
        Ok(())
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Validation(_) | Error::Json(_) | Error::Domain(_) | Error::Unsupported(_) => 2,
        Error::Infeasible(_) | Error::SingularDesign(_) => 3,
        Error::Numerical { .. } | Error::MixingFailure(_) | Error::Accuracy { .. } => 4,
        Error::Io(_) | Error::Csv(_) | Error::Ingestion(_) => 1,
    }
}

/// Stream identifier that separates replicates of different sizes.
fn task_id(m: usize, rep: usize) -> u64 {
    ((m as u64) << 24) | rep as u64
}

fn stem(m: usize, rep: usize) -> String {
    format!("data_m{m}_r{rep}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    Ok(())
}

/// `(m, replicate)` of every dataset in a directory, sorted.
pub fn list_datasets(dir: &Path) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        let Some(rest) = name.strip_prefix("data_m").and_then(|r| r.strip_suffix(".json")) else { continue };
        let Some((m, r)) = rest.split_once("_r") else { continue };
        if let (Ok(m), Ok(r)) = (m.parse(), r.parse()) {
            out.push((m, r));
        }
    }
    out.sort_unstable();
    if out.is_empty() {
        return Err(Error::validation(format!("no datasets found in {}", dir.display())));
    }
    Ok(out)
}

fn build_design(cfg: &ExperimentConfig, m: usize, id: u64) -> Result<Design> {
    match cfg.design {
        DesignKind::Stratified => stratified_design_replicate(m, cfg.d, cfg.seed, id),
        DesignKind::Grid => grid_design(m, cfg.d, 0.5),
    }
}

fn test_points(cfg: &ExperimentConfig, id: u64) -> Vec<f64> {
    let mut r = rng::stream(cfg.seed, id, Purpose::TestPoints);
    (0..cfg.prediction.test_points * cfg.d).map(|_| r.random::<f64>()).collect()
}

fn write_test_file(path: &Path, d: usize, points: &[f64], latent: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = (1..=d).map(|k| format!("s{k}")).collect();
    header.push("x_true".into());
    w.write_record(&header)?;
    for (j, x) in latent.iter().enumerate() {
        let mut rec: Vec<String> = points[j * d..(j + 1) * d].iter().map(|v| num(*v)).collect();
        rec.push(num(*x));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_test_file(path: &Path, d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut pts, mut xs) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let parse = |k: usize| rec[k].trim().parse::<f64>().map_err(|_| Error::validation(format!("bad number {:?}", &rec[k])));
        for k in 0..d {
            pts.push(parse(k)?);
        }
        xs.push(parse(d)?);
    }
    Ok((pts, xs))
}

/// Writes one dataset (plus test locations when configured) per schedule entry and replicate.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.require_schedule()?;
    let truth = cfg.truth.as_ref().ok_or_else(|| Error::validation("simulate needs a truth block"))?;
    fs::create_dir_all(out)?;
    let tasks: Vec<(usize, usize)> = cfg.schedule.iter().flat_map(|&m| (0..cfg.replicates).map(move |r| (m, r))).collect();
    tasks.par_iter().try_for_each(|&(m, rep)| -> Result<()> {
        let id = task_id(m, rep);
        let design = build_design(cfg, m, id)?;
        let tp = test_points(cfg, id);
        let (ds, latent) = simulate_joint(truth, &design, &cfg.features, &tp, cfg.seed, id)?;
        ds.write(out, &stem(m, rep))?;
        if !tp.is_empty() {
            write_test_file(&out.join(format!("test_m{m}_r{rep}.csv")), cfg.d, &tp, &latent)?;
        }
        Ok(())
    })?;
    write_json(&out.join("config.json"), cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EstimateRow {
    m: usize,
    replicate: usize,
    estimate: crate::quadvar::QvEstimate,
}

/// Quadratic-variation estimates for every dataset.
pub fn cmd_estimate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let dir = cfg.input_dir(out);
    let list = list_datasets(&dir)?;
    let nu = cfg.template().nu;
    let rows: Vec<EstimateRow> = list
        .par_iter()
        .map(|&(m, rep)| {
            let ds = Dataset::read(&dir, &stem(m, rep))?;
            Ok(EstimateRow { m, replicate: rep, estimate: estimate(&ds, nu, &cfg.qv)? })
        })
        .collect::<Result<_>>()?;
    fs::create_dir_all(out)?;
    let mut w = csv_writer(&out.join("estimates.csv"))?;
    w.write_record([
        "m", "replicate", "theta_hat", "tau_hat", "v0", "v1", "ell", "omega_theta", "omega_tau", "theta_negative", "tau_negative",
    ])?;
    for r in &rows {
        let e = &r.estimate;
        w.write_record([
            r.m.to_string(),
            r.replicate.to_string(),
            num(e.theta_hat),
            num(e.tau_hat),
            num(e.v0),
            num(e.v1),
            e.plan.ell.to_string(),
            e.plan.omega_theta.to_string(),
            e.plan.omega_tau.to_string(),
            e.theta_negative.to_string(),
            e.tau_negative.to_string(),
        ])?;
    }
    w.flush()?;
    write_json(&out.join("estimates.json"), &rows)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn chain_seed(seed: u64, id: u64) -> u64 {
    seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One chain per dataset plus `mcmc_summary.csv`.
pub fn cmd_mcmc(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let dir = cfg.input_dir(out);
    let list = list_datasets(&dir)?;
    let template = cfg.template();
    fs::create_dir_all(out)?;
    let rows: Vec<Vec<String>> = list
        .par_iter()
        .map(|&(m, rep)| {
            let ds = Dataset::read(&dir, &stem(m, rep))?;
            let mut mc = cfg.mcmc.clone();
            mc.seed = chain_seed(cfg.seed, task_id(m, rep));
            let chain = run_mcmc(&ds, &template, &cfg.priors, &mc)?;
            chain.write_csv(&out.join(format!("chain_m{m}_r{rep}.csv")))?;
            let (th, al, ta) = (chain.thetas(), chain.alphas(), chain.taus());
            let (te, ue) = match &ds.truth {
                Some(t) => (
                    num(mean(&th.iter().map(|v| (v / t.model.theta - 1.0).abs()).collect::<Vec<_>>())),
                    num(mean(&ta.iter().map(|v| (v / t.tau - 1.0).abs()).collect::<Vec<_>>())),
                ),
                None => (String::new(), String::new()),
            };
            Ok(vec![
                m.to_string(),
                rep.to_string(),
                ds.n().to_string(),
                num(mean(&th)),
                num(mean(&al)),
                num(mean(&ta)),
                te,
                ue,
                num(chain.acceptance_rate),
            ])
        })
        .collect::<Result<_>>()?;
    let mut w = csv_writer(&out.join("mcmc_summary.csv"))?;
    w.write_record(["m", "replicate", "n", "theta_mean", "alpha_mean", "tau_mean", "theta_abs_err", "tau_abs_err", "acceptance"])?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Prediction tables and `M_post / M_0` ratios from chains and test files.
pub fn cmd_predict(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let dir = cfg.input_dir(out);
    let list = list_datasets(&dir)?;
    let template = cfg.template();
    fs::create_dir_all(out)?;
    let rows: Vec<(usize, usize, f64, f64, f64)> = list
        .par_iter()
        .map(|&(m, rep)| {
            let ds = Dataset::read(&dir, &stem(m, rep))?;
            let d = ds.d();
            let (tp, xs) = read_test_file(&dir.join(format!("test_m{m}_r{rep}.csv")), d)?;
            let draws = PosteriorChain::read_draws(&dir.join(format!("chain_m{m}_r{rep}.csv")))?;
            let used = evenly_spaced(&draws, cfg.prediction.draws.max(1));
            let s = mse_ratio_experiment(&ds, &template, &used, cfg.priors.a0, &tp, &xs)?;
            let mut w = csv_writer(&out.join(format!("prediction_m{m}_r{rep}.csv")))?;
            let mut header: Vec<String> = (1..=d).map(|k| format!("s{k}")).collect();
            header.extend(["mean", "variance", "m_post", "m_0"].map(String::from));
            w.write_record(&header)?;
            for j in 0..xs.len() {
                let mut rec: Vec<String> = tp[j * d..(j + 1) * d].iter().map(|v| num(*v)).collect();
                rec.extend([num(s.post_mean[j]), num(s.post_variance[j]), num(s.m_post[j]), num(s.m_0[j])]);
                w.write_record(&rec)?;
            }
            w.flush()?;
            Ok((m, rep, s.mean_m_post, s.mean_m_0, s.ratio))
        })
        .collect::<Result<_>>()?;
    let mut w = csv_writer(&out.join("mse_summary.csv"))?;
    w.write_record(["m", "replicate", "m_post", "m_0", "ratio"])?;
    for r in &rows {
        w.write_record([r.0.to_string(), r.1.to_string(), num(r.2), num(r.3), num(r.4)])?;
    }
    w.flush()?;
    let mut by_m: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        by_m.entry(r.0).or_default().push(r.4);
    }
    let mut w = csv_writer(&out.join("mse_ratio.csv"))?;
    w.write_record(["m", "replicates", "mean_ratio", "se"])?;
    for (m, v) in by_m {
        let mu = mean(&v);
        let se = if v.len() > 1 {
            (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64 / v.len() as f64).sqrt()
        } else {
            0.0
        };
        w.write_record([m.to_string(), v.len().to_string(), num(mu), num(se)])?;
    }
    w.flush()?;
    Ok(())
}

/// `parameter → [(n, mean error over replicates)]` from a long-format table.
fn read_rate_input(path: &Path) -> Result<BTreeMap<String, Vec<(f64, f64)>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut acc: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let n: f64 = rec[1].trim().parse().map_err(|_| Error::validation(format!("bad n {:?}", &rec[1])))?;
        let e: f64 = rec[2].trim().parse().map_err(|_| Error::validation(format!("bad error {:?}", &rec[2])))?;
        acc.entry(rec[0].trim().to_string()).or_default().entry(n.to_bits()).or_default().push(e);
    }
    Ok(acc
        .into_iter()
        .map(|(k, v)| {
            let mut pts: Vec<(f64, f64)> = v.into_iter().map(|(n, es)| (f64::from_bits(n), mean(&es))).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (k, pts)
        })
        .collect())
}

fn summary_to_long(dir: &Path, out: &Path) -> Result<PathBuf> {
    let mut r = csv::Reader::from_path(dir.join("mcmc_summary.csv"))?;
    let path = out.join("rate_points.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["parameter", "n", "error"])?;
    for rec in r.records() {
        let rec = rec?;
        if rec[6].is_empty() {
            return Err(Error::validation("MCMC summary has no truth-based errors"));
        }
        w.write_record(["theta", &rec[2], &rec[6]])?;
        w.write_record(["tau", &rec[2], &rec[7]])?;
    }
    w.flush()?;
    Ok(path)
}

/// Rate fits (`rates.csv`) and per-size posterior barycenters (`barycenter.csv`).
pub fn cmd_rates(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let dir = cfg.input_dir(out);
    fs::create_dir_all(out)?;
    let input = match &cfg.rates.input {
        Some(p) => p.clone(),
        None => summary_to_long(&dir, out)?,
    };
    let table = read_rate_input(&input)?;
    let nu = cfg.template().nu;
    let (b1, b2) = theoretical_rates(nu, cfg.d);
    let mut w = csv_writer(&out.join("rates.csv"))?;
    w.write_record(["parameter", "slope", "intercept", "stderr_slope", "theory_slope"])?;
    let mut fits: BTreeMap<String, RateFit> = BTreeMap::new();
    for (param, pts) in &table {
        let ns: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let es: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let fit = rate_regression(&ns, &es)?;
        let theory = match param.as_str() {
            "theta" => num(-b1),
            "tau" => num(-b2),
            _ => String::new(),
        };
        w.write_record([param.clone(), num(fit.slope), num(fit.intercept), num(fit.stderr_slope), theory])?;
        fits.insert(param.clone(), fit);
    }
    w.flush()?;
    write_json(&out.join("rates.json"), &fits)?;
    if cfg.rates.input.is_none() {
        write_barycenters(cfg, &dir, out)?;
    }
    Ok(())
}

fn write_barycenters(cfg: &ExperimentConfig, dir: &Path, out: &Path) -> Result<()> {
    let list = list_datasets(dir)?;
    let mut by_m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (m, r) in list {
        if dir.join(format!("chain_m{m}_r{r}.csv")).exists() {
            by_m.entry(m).or_default().push(r);
        }
    }
    let k = cfg.rates.quantiles;
    let mut w = csv_writer(&out.join("barycenter.csv"))?;
    w.write_record(["m", "parameter", "p", "value"])?;
    for (m, reps) in by_m {
        let chains: Vec<Vec<crate::inference::Draw>> =
            reps.iter().map(|r| PosteriorChain::read_draws(&dir.join(format!("chain_m{m}_r{r}.csv")))).collect::<Result<_>>()?;
        let cols: [(&str, fn(&crate::inference::Draw) -> f64); 3] =
            [("theta", |d| d.theta), ("alpha", |d| d.alpha), ("tau", |d| d.tau)];
        for (name, get) in cols {
            let sets: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(get).collect()).collect();
            for (j, v) in w2_barycenter(&sets, k)?.iter().enumerate() {
                w.write_record([m.to_string(), name.to_string(), num((j as f64 + 0.5) / k as f64), num(*v)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Converts a gridded CSV (latitude, longitude, value) into datasets on the unit square.
pub fn cmd_ingest(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ing = cfg.ingest.as_ref().ok_or_else(|| Error::validation("ingest needs an ingest block"))?;
    if ing.stride < 1 {
        return Err(Error::validation("stride must be at least 1"));
    }
    let mut r = csv::Reader::from_path(&ing.path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Ingestion(format!("column {name:?} not found")))
    };
    let (ci, cj, cv) = (col(&ing.lat)?, col(&ing.lon)?, col(&ing.value)?);
    let mut cells: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    let key = |v: f64| if v == 0.0 { 0.0f64.to_bits() } else { v.to_bits() };
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| {
            rec[k].trim().parse::<f64>().map_err(|_| Error::Ingestion(format!("row {}: bad number {:?}", line + 2, &rec[k])))
        };
        let (la, lo, v) = (parse(ci)?, parse(cj)?, parse(cv)?);
        if !v.is_finite() {
            return Err(Error::Ingestion(format!("row {}: value is not finite", line + 2)));
        }
        if cells.insert((key(la), key(lo)), v).is_some() {
            return Err(Error::Ingestion(format!("duplicate cell at lat {la}, lon {lo}")));
        }
    }
    let mut lats: Vec<f64> = cells.keys().map(|k| f64::from_bits(k.0)).collect();
    let mut lons: Vec<f64> = cells.keys().map(|k| f64::from_bits(k.1)).collect();
    for v in [&mut lats, &mut lons] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let missing: Vec<String> = lats
        .iter()
        .flat_map(|&la| lons.iter().map(move |&lo| (la, lo)))
        .filter(|&(la, lo)| !cells.contains_key(&(key(la), key(lo))))
        .map(|(la, lo)| format!("(lat {la}, lon {lo})"))
        .collect();
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(20).map(String::as_str).collect();
        return Err(Error::Ingestion(format!("incomplete grid, {} missing cells: {}", missing.len(), shown.join(", "))));
    }
    let lats: Vec<f64> = lats.into_iter().step_by(ing.stride).collect();
    let lons: Vec<f64> = lons.into_iter().step_by(ing.stride).collect();
    if lats.len() != lons.len() {
        return Err(Error::Ingestion(format!(
            "grid is {} × {} after subsampling; a square grid is required",
            lats.len(),
            lons.len()
        )));
    }
    let m = lats.len();
    // s1 follows longitude, s2 latitude
    let value = |a: usize, b: usize| cells[&(key(lats[b]), key(lons[a]))];
    fs::create_dir_all(out)?;
    let write = |mm: usize, rep: usize, a0: usize, b0: usize, step: usize| -> Result<()> {
        let design = grid_design(mm, 2, 0.5)?;
        let y: Vec<f64> = (0..design.n())
            .map(|flat| {
                let idx = design.multi_index(flat);
                value(a0 + (idx[0] - 1) * step, b0 + (idx[1] - 1) * step)
            })
            .collect();
        Dataset::new(design, cfg.features.clone(), y)?.write(out, &stem(mm, rep))
    };
    if ing.subsets == 0 {
        write(m, 0, 0, 0, 1)?;
    } else {
        let ms = ing.subset_m.ok_or_else(|| Error::validation("subsets need subset_m"))?;
        if ms < 2 || ms > m {
            return Err(Error::validation(format!("subset_m must lie in [2, {m}]")));
        }
        let step = (m - 1) / (ms - 1);
        let span = step * (ms - 1);
        let mut rng = rng::stream(cfg.seed, 0, Purpose::Subgrid);
        for rep in 0..ing.subsets {
            let a0 = rng.random_range(0..=m - 1 - span);
            let b0 = rng.random_range(0..=m - 1 - span);
            write(ms, rep, a0, b0, step)?;
        }
    }
    Ok(())
}

/// Dispatches a subcommand by name.
pub fn run_command(name: &str, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    match name {
        "simulate" => cmd_simulate(cfg, out),
        "estimate" => cmd_estimate(cfg, out),
        "mcmc" => cmd_mcmc(cfg, out),
        "predict" => cmd_predict(cfg, out),
        "rates" => cmd_rates(cfg, out),
        "ingest" => cmd_ingest(cfg, out),
        other => Err(Error::validation(format!("unknown command {other:?}"))),
    }
}

/// Reads a config with reader semantics (used by the binary and tests).
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let file = File::open(path).map_err(|e| Error::validation(format!("cannot open config {}: {e}", path.display())))?;
    let cfg: ExperimentConfig = serde_json::from_reader(BufReader::new(file))?;
    cfg.validate()?;
    Ok(cfg)
}
