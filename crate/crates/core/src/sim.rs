//! Data generation for the simulation designs and the replication study
//! that compares estimators by bias, SD, mean SE and coverage.

use std::fmt;
use std::io::{Read, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aipcw::solve_aipcw;
use crate::data::{Dataset, Observation, Target};
use crate::error::{Error, Result};
use crate::ipcw::solve_ipcw;
use crate::nuisance::{cross_fit, fit_conditional_seeded, ForestParams, NuisanceSpec, DEFAULT_TRIM_FLOOR, Z2_SD};
use crate::rng;
use crate::survival::{cox_mple, Design};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Exponential censoring driven by `Z2`.
    One,
    /// Log-normal mixture censoring split on the sign of `Z1`.
    Two,
    /// Failure time independent of `Z` given `A`, with the censoring of
    /// scenario one.
    CustomIndependent,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::One => "one",
            Scenario::Two => "two",
            Scenario::CustomIndependent => "custom-independent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub tau: f64,
    pub beta_true: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, n: usize, seed: u64) -> Self {
        Self {
            scenario,
            n,
            tau: 1.0,
            beta_true: -1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 20 {
            return Err(Error::Config(format!("n must be at least 20, got {}", self.n)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !self.beta_true.is_finite() {
            return Err(Error::Config("beta_true must be finite".into()));
        }
        Ok(())
    }
}

/// Observed data with the matching fully observed failure times. The
/// shadow has no censoring of any kind; its `tau` is the larger of the
/// design `tau` and the largest failure time.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub observed: Dataset,
    pub shadow: Dataset,
}

/// One subject's latent variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latent {
    pub u1: f64,
    pub group: bool,
    pub z1: f64,
    pub z2: f64,
    pub failure: f64,
    pub censoring: f64,
}

/// `T = -log(0.5 u1 + 0.5) exp(-beta a)`.
pub fn failure_time(u1: f64, a: bool, beta: f64) -> f64 {
    let af = if a { 1.0 } else { 0.0 };
    -(0.5 * u1 + 0.5).ln() * (-beta * af).exp()
}

fn draw_latent<R: Rng>(r: &mut R, spec: &ScenarioSpec) -> Latent {
    let u1: f64 = r.random_range(-1.0..1.0);
    let group = r.random_bool(0.5);
    let z1 = 0.5 * u1 + r.sample::<f64, _>(StandardNormal);
    let z2 = u1 * u1 + Z2_SD * r.sample::<f64, _>(StandardNormal);
    let af = if group { 1.0 } else { 0.0 };
    let failure = match spec.scenario {
        Scenario::One | Scenario::Two => failure_time(u1, group, spec.beta_true),
        Scenario::CustomIndependent => r.sample::<f64, _>(Exp1) * (-spec.beta_true * af).exp(),
    };
    let censoring = match spec.scenario {
        Scenario::One | Scenario::CustomIndependent => r.sample::<f64, _>(Exp1) / (-1.0 + 2.0 * z2).exp(),
        Scenario::Two => {
            let u2 = r.sample::<f64, _>(StandardNormal).exp();
            let log_c = if z1 > 0.0 {
                -0.2 * af - 2.0 * z2.abs().sqrt() + 0.3 * u2
            } else {
                2.4 - 0.3 * af + 0.5 * z1.abs().sqrt() + 0.5 * z2.abs().sqrt() - u2
            };
            log_c.exp()
        }
    };
    Latent {
        u1,
        group,
        z1,
        z2,
        failure,
        censoring,
    }
}

/// Latent draws for `spec`, reproducible from `spec.seed`.
pub fn generate_latent(spec: &ScenarioSpec) -> Result<Vec<Latent>> {
    spec.validate()?;
    let mut r = ChaCha8Rng::seed_from_u64(rng::derive_seed(spec.seed, &[rng::DATA]));
    Ok((0..spec.n).map(|_| draw_latent(&mut r, spec)).collect())
}

pub fn generate(spec: &ScenarioSpec) -> Result<GeneratedData> {
    let latent = generate_latent(spec)?;
    let tau = spec.tau;
    let observed = latent
        .iter()
        .map(|l| {
            let x = l.failure.min(l.censoring).min(tau);
            Observation::new(x, l.failure <= l.censoring.min(tau), l.group, vec![l.z1, l.z2])
        })
        .collect();
    let shadow = latent
        .iter()
        .map(|l| Observation::new(l.failure, true, l.group, vec![l.z1, l.z2]))
        .collect();
    let horizon = latent.iter().map(|l| l.failure).fold(tau, f64::max);
    Ok(GeneratedData {
        observed: Dataset::new(observed, tau)?,
        shadow: Dataset::new(shadow, horizon)?,
    })
}

/// How a study estimates `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EstimatorSpec {
    /// Partial likelihood on the observed data, group only.
    Mple {
        #[serde(default)]
        name: Option<String>,
    },
    /// Partial likelihood on the uncensored shadow data.
    FullData {
        #[serde(default)]
        name: Option<String>,
    },
    Ipcw {
        #[serde(default)]
        name: Option<String>,
        censoring: NuisanceSpec,
    },
    Aipcw {
        #[serde(default)]
        name: Option<String>,
        failure: NuisanceSpec,
        censoring: NuisanceSpec,
    },
}

impl EstimatorSpec {
    /// Parses the short labels `mple`, `full-data`, `ipcw-{1,a,cox,rsf}` and
    /// `aipcw-{cox,rsf}-{cox,rsf}` (failure model first).
    pub fn from_label(label: &str, forest: &ForestParams) -> Result<Self> {
        let model = |s: &str| -> Option<NuisanceSpec> {
            match s {
                "cox" => Some(NuisanceSpec::Cox),
                "rsf" => Some(NuisanceSpec::RandomSurvivalForest(forest.clone())),
                _ => None,
            }
        };
        match label {
            "mple" => return Ok(EstimatorSpec::Mple { name: None }),
            "full-data" => return Ok(EstimatorSpec::FullData { name: None }),
            _ => {}
        }
        if let Some(rest) = label.strip_prefix("ipcw-") {
            let censoring = match rest {
                "1" => Some(NuisanceSpec::ProductLimitPooled),
                "a" => Some(NuisanceSpec::ProductLimitByGroup),
                other => model(other),
            };
            if let Some(c) = censoring {
                return Ok(EstimatorSpec::Ipcw {
                    name: Some(label.to_string()),
                    censoring: c,
                });
            }
        }
        if let Some((f, c)) = label.strip_prefix("aipcw-").and_then(|r| r.split_once('-')) {
            if let (Some(f), Some(c)) = (model(f), model(c)) {
                return Ok(EstimatorSpec::Aipcw {
                    name: Some(label.to_string()),
                    failure: f,
                    censoring: c,
                });
            }
        }
        Err(Error::Config(format!(
            "unknown estimator `{label}`; expected mple, full-data, ipcw-{{1,a,cox,rsf}} or aipcw-{{cox,rsf}}-{{cox,rsf}}"
        )))
    }

    pub fn name(&self) -> String {
        match self {
            EstimatorSpec::Mple { name } => name.clone().unwrap_or_else(|| "mple".into()),
            EstimatorSpec::FullData { name } => name.clone().unwrap_or_else(|| "full-data".into()),
            EstimatorSpec::Ipcw { name, censoring } => name.clone().unwrap_or_else(|| format!("ipcw-{}", ipcw_suffix(censoring))),
            EstimatorSpec::Aipcw { name, failure, censoring } => {
                name.clone().unwrap_or_else(|| format!("aipcw-{}-{}", failure.label(), censoring.label()))
            }
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            EstimatorSpec::Mple { .. } | EstimatorSpec::FullData { .. } => Ok(()),
            EstimatorSpec::Ipcw { censoring, .. } => censoring.validate(dim),
            EstimatorSpec::Aipcw { failure, censoring, .. } => {
                failure.validate(dim)?;
                censoring.validate(dim)
            }
        }
    }
}

fn ipcw_suffix(spec: &NuisanceSpec) -> &'static str {
    match spec {
        NuisanceSpec::ProductLimitPooled => "1",
        NuisanceSpec::ProductLimitByGroup => "a",
        other => other.label(),
    }
}

/// Either a short label or a full table in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EstimatorEntry {
    Label(String),
    Spec(EstimatorSpec),
}

impl EstimatorEntry {
    pub fn resolve(&self, forest: &ForestParams) -> Result<EstimatorSpec> {
        match self {
            EstimatorEntry::Label(l) => EstimatorSpec::from_label(l, forest),
            EstimatorEntry::Spec(s) => Ok(s.clone()),
        }
    }
}

/// Point estimate and standard error of one estimator on one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub beta: f64,
    pub se: f64,
}

/// Fitting options shared by all estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub folds: usize,
    pub trim_floor: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            trim_floor: DEFAULT_TRIM_FLOOR,
            seed: 0,
        }
    }
}

fn mple_estimate(data: &Dataset, estimator: &str) -> Result<Estimate> {
    let fit = cox_mple(data, &Design::GroupOnly)?;
    if !fit.converged {
        return Err(Error::NonConvergence {
            estimator: estimator.to_string(),
            detail: format!("score norm {:.3e} after {} iterations", fit.score_norm, fit.iterations),
        });
    }
    Ok(Estimate {
        beta: fit.beta[0],
        se: fit.standard_errors()?[0],
    })
}

/// Runs `spec` on `data`; `shadow` is needed only by the full-data benchmark.
pub fn run_estimator(spec: &EstimatorSpec, data: &Dataset, shadow: Option<&Dataset>, opts: &FitOptions) -> Result<Estimate> {
    let name = spec.name();
    let estimate = match spec {
        EstimatorSpec::Mple { .. } => mple_estimate(data, &name)?,
        EstimatorSpec::FullData { .. } => {
            let shadow = shadow.ok_or_else(|| Error::Invalid("full-data benchmark needs the uncensored data".into()))?;
            mple_estimate(shadow, &name)?
        }
        EstimatorSpec::Ipcw { censoring, .. } => {
            let model = fit_conditional_seeded(censoring, data, Target::Censoring, opts.seed)?.with_trim_floor(opts.trim_floor)?;
            let fit = solve_ipcw(data, &model)?;
            Estimate {
                beta: fit.beta_hat,
                se: fit.se,
            }
        }
        EstimatorSpec::Aipcw { failure, censoring, .. } => {
            let bundle = cross_fit(data, opts.folds, failure, censoring, opts.seed)?.with_trim_floor(opts.trim_floor)?;
            let fit = solve_aipcw(data, &bundle)?;
            Estimate {
                beta: fit.beta_hat,
                se: fit.se,
            }
        }
    };
    if !(estimate.beta.is_finite() && estimate.se.is_finite() && estimate.se > 0.0) {
        return Err(Error::NonConvergence {
            estimator: name,
            detail: format!("non-finite estimate {} (se {})", estimate.beta, estimate.se),
        });
    }
    Ok(estimate)
}

fn default_tau() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    -1.0
}

fn default_folds() -> usize {
    5
}

fn default_trim() -> f64 {
    DEFAULT_TRIM_FLOOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub replications: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_beta")]
    pub beta_true: f64,
    #[serde(default = "default_trim")]
    pub trim: f64,
    /// Forest settings used by the `rsf` short labels.
    #[serde(default)]
    pub forest: ForestParams,
    pub estimators: Vec<EstimatorEntry>,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: StudyConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn scenario_spec(&self, replication: usize) -> ScenarioSpec {
        ScenarioSpec {
            scenario: self.scenario,
            n: self.n,
            tau: self.tau,
            beta_true: self.beta_true,
            seed: self.seed.wrapping_add(replication as u64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario_spec(0).validate()?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if !(self.trim > 0.0 && self.trim < 1.0) {
            return Err(Error::Config(format!("trim must lie in (0, 1), got {}", self.trim)));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("estimators must not be empty".into()));
        }
        self.forest.validate().map_err(|e| Error::Config(format!("forest: {e}")))?;
        let specs = self.estimator_specs()?;
        let mut names: Vec<String> = Vec::new();
        for s in &specs {
            s.validate(2).map_err(|e| Error::Config(format!("estimator {}: {e}", s.name())))?;
            let name = s.name();
            if names.contains(&name) {
                return Err(Error::Config(format!("estimator `{name}` listed twice")));
            }
            names.push(name);
        }
        Ok(())
    }

    pub fn estimator_specs(&self) -> Result<Vec<EstimatorSpec>> {
        self.estimators.iter().map(|e| e.resolve(&self.forest)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub estimator: String,
    pub bias: f64,
    /// Replication SD of the estimates; absent with fewer than two.
    pub sd: Option<f64>,
    /// Mean standard error.
    pub se: f64,
    /// Coverage of the nominal 95% Wald interval.
    pub cp: f64,
    pub n_fail: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub rows: Vec<ReportRow>,
    pub replications: usize,
    /// Successful estimates per estimator, in replication order.
    pub estimates: Vec<Vec<Estimate>>,
    pub runtime_secs: f64,
}

/// Half-width of the Monte Carlo 95% band around a true 95% coverage.
pub fn coverage_margin(replications: usize) -> f64 {
    1.96 * (0.95 * 0.05 / replications as f64).sqrt()
}

fn summarize(estimator: String, beta_true: f64, estimates: &[Estimate], failures: usize) -> ReportRow {
    let m = estimates.len() as f64;
    let mean = estimates.iter().map(|e| e.beta).sum::<f64>() / m;
    let sd = (estimates.len() >= 2)
        .then(|| (estimates.iter().map(|e| (e.beta - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt());
    let covered = estimates
        .iter()
        .filter(|e| (e.beta - beta_true).abs() <= 1.96 * e.se)
        .count();
    ReportRow {
        estimator,
        bias: mean - beta_true,
        sd,
        se: estimates.iter().map(|e| e.se).sum::<f64>() / m,
        cp: covered as f64 / m,
        n_fail: failures,
    }
}

/// Runs every replication in parallel; replication `r` uses seed
/// `config.seed + r`, so results do not depend on the thread count.
pub fn run_study(config: &StudyConfig) -> Result<SimulationReport> {
    config.validate()?;
    let start = Instant::now();
    let specs = config.estimator_specs()?;
    let opts = |r: usize| FitOptions {
        folds: config.folds,
        trim_floor: config.trim,
        seed: rng::derive_seed(config.seed.wrapping_add(r as u64), &[rng::FOLDS]),
    };
    let per_replication: Vec<Vec<Option<Estimate>>> = (0..config.replications)
        .into_par_iter()
        .map(|r| match generate(&config.scenario_spec(r)) {
            Ok(g) => specs
                .iter()
                .map(|s| run_estimator(s, &g.observed, Some(&g.shadow), &opts(r)).ok())
                .collect(),
            Err(_) => vec![None; specs.len()],
        })
        .collect();

    let mut rows = Vec::with_capacity(specs.len());
    let mut estimates = Vec::with_capacity(specs.len());
    for (j, spec) in specs.iter().enumerate() {
        let ok: Vec<Estimate> = per_replication.iter().filter_map(|row| row[j]).collect();
        if ok.is_empty() {
            return Err(Error::AllReplicationsFailed {
                estimator: spec.name(),
                replications: config.replications,
            });
        }
        let failures = config.replications - ok.len();
        rows.push(summarize(spec.name(), config.beta_true, &ok, failures));
        estimates.push(ok);
    }
    Ok(SimulationReport {
        rows,
        replications: config.replications,
        estimates,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

impl SimulationReport {
    pub fn coverage_margin(&self) -> f64 {
        coverage_margin(self.replications)
    }

    pub fn row(&self, estimator: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }

    /// CSV with columns `estimator,bias,sd,se,cp,n_fail`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn rows_from_csv<R: Read>(reader: R) -> Result<Vec<ReportRow>> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        for col in ["estimator", "bias", "sd", "se", "cp", "n_fail"] {
            if !headers.iter().any(|h| h == col) {
                return Err(Error::MissingColumn(col.into()));
            }
        }
        r.deserialize()
            .enumerate()
            .map(|(i, row)| {
                row.map_err(|e| Error::CsvRow {
                    row: i + 2,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.estimator.len()).max().unwrap_or(0).max(9);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>7}  {:>7}  {:>6}  {:>6}\n",
            "estimator", "bias", "sd", "se", "cp", "n_fail"
        );
        for r in &self.rows {
            let sd = r.sd.map_or_else(|| "-".to_string(), |s| format!("{s:.3}"));
            out.push_str(&format!(
                "{:<width$}  {:>8.3}  {:>7}  {:>7.3}  {:>6.3}  {:>6}\n",
                r.estimator, r.bias, sd, r.se, r.cp, r.n_fail
            ));
        }
        out.push_str(&format!(
            "replications: {}  coverage MC margin: ±{:.4}\n",
            self.replications,
            self.coverage_margin()
        ));
        out
    }
}
