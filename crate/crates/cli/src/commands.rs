use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use aipcw_core::nuisance::{fit_conditional_seeded, ForestParams};
use aipcw_core::sim::FitOptions;
use aipcw_core::{
    cox_mple, cross_fit, generate as simulate_data, run_study, solve_aipcw, solve_ipcw, Dataset, Design,
    EstimatorSpec, Scenario, ScenarioSpec, StudyConfig, Target,
};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::{FitArgs, GenerateArgs, SimulateArgs};

#[derive(Debug)]
pub enum CliError {
    /// Bad input, arguments or configuration.
    Validation(String),
    /// An estimator failed to produce an estimate.
    Estimation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Estimation(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Estimation(m) => f.write_str(m),
        }
    }
}

impl From<aipcw_core::Error> for CliError {
    fn from(e: aipcw_core::Error) -> Self {
        if e.is_estimation_failure() {
            CliError::Estimation(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn check_options(folds: usize, trim: f64) -> Result<(), CliError> {
    if folds < 2 {
        return Err(CliError::Validation(format!("--folds must be at least 2, got {folds}")));
    }
    if !(trim > 0.0 && trim < 1.0) {
        return Err(CliError::Validation(format!("--trim must lie in (0, 1), got {trim}")));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct FitRow {
    estimator: String,
    beta: f64,
    se: f64,
    ci_lower: f64,
    ci_upper: f64,
    hazard_ratio: f64,
    diagnostics: Value,
}

fn fit_one(spec: &EstimatorSpec, data: &Dataset, opts: &FitOptions) -> Result<FitRow, CliError> {
    let name = spec.name();
    let (beta, se, diagnostics) = match spec {
        EstimatorSpec::Mple { .. } => {
            let fit = cox_mple(data, &Design::GroupOnly)?;
            if !fit.converged {
                return Err(CliError::Estimation(format!(
                    "{name} did not converge (score norm {:.3e})",
                    fit.score_norm
                )));
            }
            let se = fit.standard_errors()?[0];
            (fit.beta[0], se, json!({ "iterations": fit.iterations, "log_likelihood": fit.log_likelihood }))
        }
        EstimatorSpec::FullData { .. } => {
            return Err(CliError::Validation(
                "full-data needs the uncensored failure times and is only available in simulate".into(),
            ))
        }
        EstimatorSpec::Ipcw { censoring, .. } => {
            let model =
                fit_conditional_seeded(censoring, data, Target::Censoring, opts.seed)?.with_trim_floor(opts.trim_floor)?;
            let fit = solve_ipcw(data, &model)?;
            (
                fit.beta_hat,
                fit.se,
                json!({
                    "iterations": fit.iterations,
                    "min_censoring_survival_at_events": fit.weights_summary.min,
                    "max_censoring_survival_at_events": fit.weights_summary.max,
                }),
            )
        }
        EstimatorSpec::Aipcw { failure, censoring, .. } => {
            let bundle = cross_fit(data, opts.folds, failure, censoring, opts.seed)?.with_trim_floor(opts.trim_floor)?;
            let fit = solve_aipcw(data, &bundle)?;
            let mut d = serde_json::to_value(&fit.diagnostics).expect("diagnostics serialize");
            d["iterations"] = json!(fit.iterations);
            (fit.beta_hat, fit.se, d)
        }
    };
    if !(beta.is_finite() && se.is_finite() && se > 0.0) {
        return Err(CliError::Estimation(format!("{name} gave a non-finite estimate {beta} (se {se})")));
    }
    Ok(FitRow {
        estimator: name,
        beta,
        se,
        ci_lower: beta - 1.96 * se,
        ci_upper: beta + 1.96 * se,
        hazard_ratio: beta.exp(),
        diagnostics,
    })
}

fn diagnostics_text(d: &Value) -> String {
    match d {
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| match v.as_f64() {
                Some(x) if !v.is_u64() => format!("{k}={x:.4}"),
                _ => format!("{k}={v}"),
            })
            .collect::<Vec<_>>()
            .join(" "),
        other => other.to_string(),
    }
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    check_options(args.folds, args.trim)?;
    let data = Dataset::from_csv_path(&args.input, args.tau)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.input.display())))?;
    let forest = ForestParams::default();
    let specs = args
        .estimators
        .iter()
        .map(|l| {
            let spec = EstimatorSpec::from_label(l.trim(), &forest)?;
            spec.validate(data.dim())?;
            Ok(spec)
        })
        .collect::<Result<Vec<_>, aipcw_core::Error>>()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let opts = FitOptions {
        folds: args.folds,
        trim_floor: args.trim,
        seed: args.seed,
    };

    let mut rows = Vec::new();
    let mut first_error = None;
    for spec in &specs {
        match fit_one(spec, &data, &opts) {
            Ok(row) => rows.push(row),
            Err(e) => {
                eprintln!("{}: {e}", spec.name());
                first_error.get_or_insert(e);
            }
        }
    }

    let mut out = open_output(args.output.as_deref())?;
    if args.json {
        let doc = json!({
            "n": data.len(),
            "events": data.count_events(Target::Failure),
            "tau": data.tau(),
            "folds": args.folds,
            "seed": args.seed,
            "trim": args.trim,
            "estimates": rows,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("json"))?;
    } else {
        writeln!(
            out,
            "n = {}  events = {}  tau = {}  folds = {}  seed = {}  trim = {}",
            data.len(),
            data.count_events(Target::Failure),
            data.tau(),
            args.folds,
            args.seed,
            args.trim
        )?;
        let width = rows.iter().map(|r| r.estimator.len()).max().unwrap_or(0).max(9);
        writeln!(
            out,
            "{:<width$}  {:>8}  {:>7}  {:>19}  {:>7}",
            "estimator", "beta", "se", "95% CI", "HR"
        )?;
        for r in &rows {
            writeln!(
                out,
                "{:<width$}  {:>8.4}  {:>7.4}  [{:>7.4}, {:>7.4}]  {:>7.4}",
                r.estimator, r.beta, r.se, r.ci_lower, r.ci_upper, r.hazard_ratio
            )?;
        }
        for r in &rows {
            writeln!(out, "{}: {}", r.estimator, diagnostics_text(&r.diagnostics))?;
        }
    }
    out.flush()?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// SHA-256 of the effective (post-override) configuration.
pub fn config_hash(config: &StudyConfig) -> Result<String, CliError> {
    let text = config.to_toml().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

fn load_config(args: &SimulateArgs) -> Result<StudyConfig, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.config.display())))?;
    let mut config = StudyConfig::from_toml(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.config.display())))?;
    if let Some(folds) = args.folds {
        config.folds = folds;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trim) = args.trim {
        config.trim = trim;
    }
    if let Some(r) = args.replications {
        config.replications = r;
    }
    if let Some(labels) = &args.estimators {
        config.estimators = labels
            .iter()
            .map(|l| aipcw_core::sim::EstimatorEntry::Label(l.trim().to_string()))
            .collect();
    }
    config
        .validate()
        .map_err(|e| CliError::Validation(format!("after overrides: {e}")))?;
    Ok(config)
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let config = load_config(args)?;
    let hash = config_hash(&config)?;
    let report = run_study(&config)?;
    if let Some(path) = &args.output {
        let file = File::create(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        report.write_csv(BufWriter::new(file))?;
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if args.json {
        let doc = json!({
            "config_sha256": hash,
            "seed": config.seed,
            "replications": report.replications,
            "coverage_margin": report.coverage_margin(),
            "rows": report.rows,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("json"))?;
    } else {
        writeln!(out, "config sha256: {hash}")?;
        writeln!(
            out,
            "scenario {}  n = {}  seed = {}  folds = {}  trim = {}",
            config.scenario, config.n, config.seed, config.folds, config.trim
        )?;
        write!(out, "{}", report.to_table())?;
        writeln!(out, "runtime: {:.2}s", report.runtime_secs)?;
    }
    Ok(())
}

fn parse_scenario(s: &str) -> Result<Scenario, CliError> {
    match s {
        "one" | "1" => Ok(Scenario::One),
        "two" | "2" => Ok(Scenario::Two),
        "custom-independent" => Ok(Scenario::CustomIndependent),
        other => Err(CliError::Validation(format!(
            "unknown scenario `{other}`; expected one, two or custom-independent"
        ))),
    }
}

pub fn generate(args: &GenerateArgs) -> Result<(), CliError> {
    let spec = ScenarioSpec {
        scenario: parse_scenario(&args.scenario)?,
        n: args.n,
        tau: args.tau,
        beta_true: args.beta_true,
        seed: args.seed,
    };
    let data = simulate_data(&spec)?;
    let mut out = open_output(args.output.as_deref())?;
    data.observed.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let conv: CliError = aipcw_core::Error::NonConvergence {
            estimator: "x".into(),
            detail: "y".into(),
        }
        .into();
        assert_eq!(conv.exit_code(), 3);
        let schema: CliError = aipcw_core::Error::MissingColumn("delta".into()).into();
        assert_eq!(schema.exit_code(), 2);
        assert!(schema.to_string().contains("delta"));
    }

    #[test]
    fn hash_changes_with_config() {
        let base = StudyConfig::from_toml("scenario = \"one\"\nn = 50\nreplications = 2\nestimators = [\"mple\"]").unwrap();
        let mut other = base.clone();
        other.seed = 1;
        let h = config_hash(&base).unwrap();
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash(&base.clone()).unwrap());
        assert_ne!(h, config_hash(&other).unwrap());
    }

    #[test]
    fn option_checks() {
        assert!(check_options(1, 0.01).is_err());
        assert!(check_options(5, 0.0).is_err());
        assert!(check_options(5, 0.01).is_ok());
        assert!(parse_scenario("three").is_err());
    }
}
