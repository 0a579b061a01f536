//! Acceptance checks, one PASS/FAIL line per criterion. Exits nonzero if
//! any criterion fails. All seeds are fixed.

use std::process::ExitCode;
use std::time::Instant;

use aipcw_core::aipcw::{aipcw_score, aipcw_score_derivative, build_processes, trace_subject};
use aipcw_core::nuisance::NuisanceSpec;
use aipcw_core::sim::generate_latent;
use aipcw_core::{
    cox_mple, cross_fit, fit_conditional, generate, run_study, solve_aipcw, solve_ipcw, ConditionalSurvivalModel,
    CrossFitBundle, Design, Observation, OracleForm, Scenario, ScenarioSpec, SimulationReport,
    StudyConfig, Target, TimeGrid,
};

const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn study(toml: &str) -> SimulationReport {
    let config = StudyConfig::from_toml(toml).expect("valid study config");
    run_study(&config).expect("study runs")
}

fn row<'a>(report: &'a SimulationReport, name: &str) -> &'a aipcw_core::sim::ReportRow {
    report.row(name).unwrap_or_else(|| panic!("missing row {name}"))
}

fn in_range(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

fn criterion_1() -> Outcome {
    let r = study(&format!(
        "scenario = \"one\"\nn = 500\nreplications = 500\nfolds = 5\nseed = {SEED}\n\
         estimators = [\"mple\", \"ipcw-a\", \"aipcw-cox-cox\", \"ipcw-cox\", \"full-data\"]"
    ));
    let (mple, ipcw_a, dr, ipcw_cox, full) = (
        row(&r, "mple"),
        row(&r, "ipcw-a"),
        row(&r, "aipcw-cox-cox"),
        row(&r, "ipcw-cox"),
        row(&r, "full-data"),
    );
    let full_sd = full.sd.unwrap_or(f64::NAN);
    let pass = in_range(mple.bias, -0.25, -0.16)
        && mple.cp <= 0.85
        && in_range(ipcw_a.bias, -0.27, -0.17)
        && dr.bias.abs() <= 0.03
        && in_range(dr.cp, 0.91, 0.97)
        && ipcw_cox.bias.abs() <= 0.03
        && in_range(ipcw_cox.cp, 0.91, 0.97)
        && full.bias.abs() <= 0.02
        && in_range(full_sd, 0.09, 0.12);
    outcome(
        pass,
        format!(
            "mple bias {:.3} cp {:.3}; ipcw-a bias {:.3}; aipcw-cox-cox bias {:.3} cp {:.3}; ipcw-cox bias {:.3} cp {:.3}; full-data bias {:.3} sd {:.3}",
            mple.bias, mple.cp, ipcw_a.bias, dr.bias, dr.cp, ipcw_cox.bias, ipcw_cox.cp, full.bias, full_sd
        ),
    )
}

fn criterion_2() -> Outcome {
    let r = study(&format!(
        "scenario = \"two\"\nn = 1000\nreplications = 300\nfolds = 5\nseed = {SEED}\n\
         estimators = [\"aipcw-cox-cox\", \"aipcw-rsf-cox\", \"ipcw-cox\"]"
    ));
    let (cc, rc, ipcw) = (row(&r, "aipcw-cox-cox"), row(&r, "aipcw-rsf-cox"), row(&r, "ipcw-cox"));
    let ipcw_sd = ipcw.sd.unwrap_or(f64::NAN);
    let shortfall = 1.0 - ipcw.se / ipcw_sd;
    let pass = in_range(cc.bias, -0.20, -0.06) && rc.bias.abs() < cc.bias.abs() && shortfall >= 0.20;
    outcome(
        pass,
        format!(
            "aipcw-cox-cox bias {:.3}; aipcw-rsf-cox bias {:.3}; ipcw-cox se {:.3} vs sd {:.3} (shortfall {:.1}%)",
            cc.bias,
            rc.bias,
            ipcw.se,
            ipcw_sd,
            100.0 * shortfall
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut worst_dr: f64 = 0.0;
    let mut worst_ipcw: f64 = 0.0;
    for seed in 0..5 {
        let g = generate(&ScenarioSpec::new(Scenario::One, 400, SEED + seed)).unwrap();
        // uncensored shadow with S_c identically one
        let shadow = &g.shadow;
        let failure = fit_conditional(&NuisanceSpec::Cox, shadow, Target::Failure).unwrap();
        let bundle = CrossFitBundle::from_models(shadow.len(), failure, ConditionalSurvivalModel::unit(2));
        let dr = solve_aipcw(shadow, &bundle).unwrap().beta_hat;
        let mple = cox_mple(shadow, &Design::GroupOnly).unwrap().beta[0];
        worst_dr = worst_dr.max((dr - mple).abs());
        // observed censored data with unit weights
        let ipcw = solve_ipcw(&g.observed, &ConditionalSurvivalModel::unit(2)).unwrap().beta_hat;
        let mple = cox_mple(&g.observed, &Design::GroupOnly).unwrap().beta[0];
        worst_ipcw = worst_ipcw.max((ipcw - mple).abs());
    }
    outcome(
        worst_dr <= 1e-8 && worst_ipcw <= 1e-10,
        format!("max |aipcw - mple| {worst_dr:.2e} (tol 1e-8); max |ipcw - mple| {worst_ipcw:.2e} (tol 1e-10)"),
    )
}

fn criterion_4() -> Outcome {
    let data = generate(&ScenarioSpec::new(Scenario::One, 1000, SEED)).unwrap().observed;
    let sc = fit_conditional(&NuisanceSpec::ProductLimitPooled, &data, Target::Censoring).unwrap();
    let grid = TimeGrid::new(&data, &sc.jump_times());
    let subjects: Vec<&Observation> = data.iter().collect();
    let rows = sc.survival_on_grid(&subjects, grid.times()).unwrap();
    let ones = vec![1.0; grid.len()];
    let mut worst: f64 = 0.0;
    for (o, c) in subjects.iter().zip(&rows) {
        let k = grid.index_of(o.time).unwrap();
        let trace = trace_subject(o.event, k, &ones, c);
        let c_exit = if k == 0 { 1.0 } else { c[k - 1] };
        let mut sum = 0.0;
        for g in 0..grid.len() {
            sum += trace.d_mc[g] / c[g];
            let y_after = if g < k { 1.0 } else { 0.0 };
            let n_t = if g >= k && o.event { 1.0 } else { 0.0 };
            worst = worst.max((sum - (1.0 - y_after / c[g] - n_t / c_exit)).abs());
        }
    }
    outcome(
        worst <= 1e-10,
        format!("max deviation {worst:.2e} over {} subjects x {} grid points", data.len(), grid.len()),
    )
}

fn criterion_5() -> Outcome {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for instance in 0..50u64 {
        let seed = SEED.wrapping_mul(1000).wrapping_add(instance);
        let data = generate(&ScenarioSpec::new(Scenario::One, 200, seed)).unwrap().observed;
        let bundle = cross_fit(&data, 5, &NuisanceSpec::Cox, &NuisanceSpec::Cox, seed).unwrap();
        let grid = TimeGrid::for_bundle(&data, &bundle);
        let p = build_processes(&data, &bundle, &grid).unwrap();
        for j in 0..20 {
            let beta = -2.0 + 4.0 * (j as f64 + 0.5) / 20.0;
            let d = aipcw_score_derivative(beta, &p, &grid).unwrap();
            let fd = (aipcw_score(beta + h, &p, &grid).unwrap() - aipcw_score(beta - h, &p, &grid).unwrap()) / (2.0 * h);
            worst = worst.max((d - fd).abs() / d.abs().max(1e-12));
            checked += 1;
        }
    }
    outcome(worst <= 1e-6, format!("max relative error {worst:.2e} over {checked} (instance, beta) pairs"))
}

fn criterion_6() -> Outcome {
    let r = study(&format!(
        r#"scenario = "custom-independent"
n = 1000
replications = 500
seed = {SEED}
estimators = [
  {{ method = "aipcw", name = "true-sc-wrong-s", failure = {{ kind = "oracle", form = "exponential", log_rate = 0.5, group_effect = 0.0 }}, censoring = {{ kind = "oracle", form = "scenario1-censoring" }} }},
  {{ method = "aipcw", name = "true-s-wrong-sc", failure = {{ kind = "oracle", form = "exponential", log_rate = 0.0, group_effect = -1.0 }}, censoring = {{ kind = "oracle", form = "exponential", log_rate = 0.5, group_effect = 0.0 }} }},
]"#
    ));
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["true-sc-wrong-s", "true-s-wrong-sc"] {
        let row = row(&r, name);
        let mc_se = row.sd.unwrap_or(f64::NAN) / ((r.replications - row.n_fail) as f64).sqrt();
        pass &= row.bias.abs() <= 2.0 * mc_se;
        parts.push(format!("{name} bias {:.4} (2 MC-SE {:.4}, fails {})", row.bias, 2.0 * mc_se, row.n_fail));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_7() -> Outcome {
    let spec_s = NuisanceSpec::Oracle(OracleForm::ScenarioFailure { beta: -1.0 });
    let spec_c = NuisanceSpec::Oracle(OracleForm::Scenario1Censoring);
    let reps = 100;
    let mut total = 0.0;
    for r in 0..reps {
        let data = generate(&ScenarioSpec::new(Scenario::One, 2000, SEED + r)).unwrap().observed;
        let bundle = CrossFitBundle::from_models(
            data.len(),
            fit_conditional(&spec_s, &data, Target::Failure).unwrap(),
            fit_conditional(&spec_c, &data, Target::Censoring).unwrap(),
        );
        total += solve_aipcw(&data, &bundle).unwrap().baseline.evaluate_right(0.5);
    }
    let mean = total / reps as f64;
    outcome(in_range(mean, 0.45, 0.55), format!("mean baseline at t=0.5 {mean:.4} over {reps} replications (truth 0.5)"))
}

fn criterion_8() -> Outcome {
    let r = study(&format!(
        "scenario = \"one\"\nn = 1000\nreplications = 500\nseed = {SEED}\nestimators = [\"aipcw-cox-cox\"]"
    ));
    let row = row(&r, "aipcw-cox-cox");
    let sd = row.sd.unwrap_or(f64::NAN);
    let ratio = row.se / sd;
    outcome((ratio - 1.0).abs() <= 0.10, format!("mean se {:.4} vs sd {:.4} (ratio {ratio:.3})", row.se, sd))
}

fn criterion_9() -> Outcome {
    let config = StudyConfig::from_toml(&format!(
        "scenario = \"two\"\nn = 200\nreplications = 8\nseed = {SEED}\n\
         estimators = [\"mple\", \"ipcw-cox\", \"aipcw-cox-cox\", \"aipcw-rsf-cox\"]\n\
         [forest]\nn_trees = 20"
    ))
    .unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_study(&config).unwrap().to_csv_string().unwrap())
    };
    let runs = [run(1), run(1), run(2), run(4)];
    let identical = runs.iter().all(|c| c == &runs[0]);
    outcome(identical, format!("{} runs at 1, 1, 2, 4 threads; byte-identical: {identical}", runs.len()))
}

fn criterion_10() -> Outcome {
    let spec = ScenarioSpec::new(Scenario::One, 100_000, SEED);
    let latent = generate_latent(&spec).unwrap();
    let n = latent.len() as f64;
    let admin = latent.iter().filter(|l| l.failure.min(l.censoring) > spec.tau).count() as f64;
    let censored = latent
        .iter()
        .filter(|l| l.censoring < l.failure && l.censoring <= spec.tau)
        .count() as f64;
    let admin_share = admin / n;
    let among_rest = censored / (n - admin);
    outcome(
        in_range(admin_share, 0.20, 0.30) && in_range(among_rest, 0.35, 0.45),
        format!(
            "administrative share {:.1}%; in-follow-up censoring among the rest {:.1}% (share of all subjects {:.1}%)",
            100.0 * admin_share,
            100.0 * among_rest,
            100.0 * censored / n
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {id}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
