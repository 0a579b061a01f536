//! Conditional survival models for the failure time and the censoring time,
//! prediction trimming, and k-fold cross-fitting.

mod forest;
mod oracle;

pub use forest::{logrank_split, ForestParams, SurvivalForest};
pub use oracle::OracleForm;
pub(crate) use oracle::Z2_SD;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::curve::StepCurve;
use crate::data::{Dataset, Observation, Target};
use crate::error::{Error, Result};
use crate::rng;
use crate::survival::{self, CoxFit, Design};

pub const DEFAULT_TRIM_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NuisanceSpec {
    /// Cox model on `(A, Z)` with a Breslow baseline.
    Cox,
    ProductLimitPooled,
    ProductLimitByGroup,
    RandomSurvivalForest(ForestParams),
    Oracle(OracleForm),
}

impl NuisanceSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            NuisanceSpec::RandomSurvivalForest(p) => {
                p.validate()?;
                p.mtry_for(dim + 1).map(|_| ())
            }
            NuisanceSpec::Oracle(form) if form.required_dim() > dim => Err(Error::DimensionMismatch {
                expected: form.required_dim(),
                found: dim,
            }),
            _ => Ok(()),
        }
    }

    fn needs_events(&self) -> bool {
        !matches!(self, NuisanceSpec::Oracle(_))
    }

    /// Short label used in estimator names.
    pub fn label(&self) -> &'static str {
        match self {
            NuisanceSpec::Cox => "cox",
            NuisanceSpec::ProductLimitPooled => "km",
            NuisanceSpec::ProductLimitByGroup => "km-a",
            NuisanceSpec::RandomSurvivalForest(_) => "rsf",
            NuisanceSpec::Oracle(_) => "oracle",
        }
    }
}

#[derive(Debug, Clone)]
enum Fitted {
    Cox(CoxFit),
    Pooled(StepCurve),
    ByGroup { control: StepCurve, treated: StepCurve },
    Forest(SurvivalForest),
    Oracle(OracleForm),
    /// No target events anywhere: the survival function is identically 1.
    Unit,
}

/// A fitted `S(t | a, z)`. Predictions are trimmed below at `trim_floor`
/// and nonincreasing in `t`.
#[derive(Debug, Clone)]
pub struct ConditionalSurvivalModel {
    fitted: Fitted,
    dim: usize,
    trim_floor: f64,
}

impl ConditionalSurvivalModel {
    /// The model `S ≡ 1`.
    pub fn unit(dim: usize) -> Self {
        Self {
            fitted: Fitted::Unit,
            dim,
            trim_floor: DEFAULT_TRIM_FLOOR,
        }
    }

    pub fn with_trim_floor(mut self, floor: f64) -> Result<Self> {
        check_floor(floor)?;
        self.trim_floor = floor;
        Ok(self)
    }

    pub fn trim_floor(&self) -> f64 {
        self.trim_floor
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &'static str {
        match self.fitted {
            Fitted::Cox(_) => "cox",
            Fitted::Pooled(_) => "product-limit-pooled",
            Fitted::ByGroup { .. } => "product-limit-by-group",
            Fitted::Forest(_) => "random-survival-forest",
            Fitted::Oracle(_) => "oracle",
            Fitted::Unit => "unit",
        }
    }

    pub fn cox(&self) -> Option<&CoxFit> {
        match &self.fitted {
            Fitted::Cox(fit) => Some(fit),
            _ => None,
        }
    }

    fn check(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: z.len(),
            });
        }
        Ok(())
    }

    fn trim(&self, s: f64) -> f64 {
        s.clamp(self.trim_floor, 1.0)
    }

    /// Untrimmed `P(T >= t | a, z)`.
    pub fn raw_survival(&self, t: f64, a: bool, z: &[f64]) -> Result<f64> {
        self.check(z)?;
        if t <= 0.0 {
            return Ok(1.0);
        }
        Ok(match &self.fitted {
            Fitted::Cox(fit) => {
                let risk = fit.linear_predictor(a, z)?.exp();
                (-fit.baseline.evaluate_left(t) * risk).exp()
            }
            Fitted::Pooled(curve) => curve.evaluate_left(t),
            Fitted::ByGroup { control, treated } => {
                if a {
                    treated.evaluate_left(t)
                } else {
                    control.evaluate_left(t)
                }
            }
            Fitted::Forest(forest) => forest.survival_left(t, &features(a, z))?,
            Fitted::Oracle(form) => form.survival(t, a, z)?,
            Fitted::Unit => 1.0,
        })
    }

    /// Trimmed left-limit prediction.
    pub fn predict_survival(&self, t: f64, a: bool, z: &[f64]) -> Result<f64> {
        Ok(self.trim(self.raw_survival(t, a, z)?))
    }

    /// Trimmed right-continuous values `S(t_g+)` on an increasing grid, one
    /// row per subject, with a running minimum enforcing monotonicity.
    /// Closed-form models are continuous, so their value at `t_g` is used.
    pub fn survival_on_grid(&self, subjects: &[&Observation], grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        for o in subjects {
            self.check(&o.covariates)?;
        }
        let raw: Vec<Vec<f64>> = match &self.fitted {
            Fitted::Cox(fit) => {
                let base = fit.baseline.right_values_on(grid);
                subjects
                    .iter()
                    .map(|o| {
                        let risk = fit.linear_predictor(o.group, &o.covariates)?.exp();
                        Ok(base.iter().map(|h| (-h * risk).exp()).collect())
                    })
                    .collect::<Result<_>>()?
            }
            Fitted::Pooled(curve) => {
                let row = curve.right_values_on(grid);
                vec![row; subjects.len()]
            }
            Fitted::ByGroup { control, treated } => {
                let rows = [control.right_values_on(grid), treated.right_values_on(grid)];
                subjects.iter().map(|o| rows[o.group as usize].clone()).collect()
            }
            Fitted::Forest(forest) => {
                let rows: Vec<Vec<f64>> = subjects.iter().map(|o| o.features()).collect();
                forest.survival_on_grid(&rows, grid)?
            }
            Fitted::Oracle(form) => subjects
                .iter()
                .map(|o| form.survival_many(grid, o.group, &o.covariates))
                .collect(),
            Fitted::Unit => vec![vec![1.0; grid.len()]; subjects.len()],
        };
        Ok(raw
            .into_iter()
            .map(|row| {
                let mut running = 1.0f64;
                row.into_iter()
                    .map(|s| {
                        running = running.min(self.trim(s));
                        running
                    })
                    .collect()
            })
            .collect())
    }

    /// Times at which the fitted curves can jump; empty for closed forms.
    pub fn jump_times(&self) -> Vec<f64> {
        match &self.fitted {
            Fitted::Cox(fit) => fit.baseline.jump_times().to_vec(),
            Fitted::Pooled(c) => c.jump_times().to_vec(),
            Fitted::ByGroup { control, treated } => {
                let mut t: Vec<f64> = control.jump_times().iter().chain(treated.jump_times()).copied().collect();
                t.sort_by(f64::total_cmp);
                t.dedup();
                t
            }
            Fitted::Forest(f) => f.jump_times(),
            Fitted::Oracle(_) | Fitted::Unit => Vec::new(),
        }
    }
}

fn features(a: bool, z: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(z.len() + 1);
    x.push(if a { 1.0 } else { 0.0 });
    x.extend_from_slice(z);
    x
}

fn check_floor(floor: f64) -> Result<()> {
    if !(floor > 0.0 && floor < 1.0) {
        return Err(Error::Invalid(format!("trim floor must lie in (0, 1), got {floor}")));
    }
    Ok(())
}

/// Copy of `data` whose event indicator is the target event.
fn retarget(data: &Dataset, target: Target) -> Result<Dataset> {
    match target {
        Target::Failure => Ok(data.clone()),
        Target::Censoring => {
            let obs = (0..data.len())
                .map(|i| {
                    let mut o = data.get(i).clone();
                    o.event = data.is_target_event(i, target);
                    o
                })
                .collect();
            Dataset::new(obs, data.tau())
        }
    }
}

pub fn fit_conditional(spec: &NuisanceSpec, data: &Dataset, target: Target) -> Result<ConditionalSurvivalModel> {
    fit_conditional_seeded(spec, data, target, 0)
}

/// As [`fit_conditional`]; `seed` drives the forest's bootstrap and
/// feature sampling.
pub fn fit_conditional_seeded(
    spec: &NuisanceSpec,
    data: &Dataset,
    target: Target,
    seed: u64,
) -> Result<ConditionalSurvivalModel> {
    spec.validate(data.dim())?;
    if spec.needs_events() && data.count_events(target) == 0 {
        return Err(Error::NoEvents { target, fold: None });
    }
    let fitted = match spec {
        NuisanceSpec::Cox => {
            let fit = survival::cox_mple(&retarget(data, target)?, &Design::GroupAndCovariates)?;
            if fit.beta.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonConvergence {
                    estimator: format!("cox nuisance ({target})"),
                    detail: "non-finite coefficients".into(),
                });
            }
            Fitted::Cox(fit)
        }
        NuisanceSpec::ProductLimitPooled => Fitted::Pooled(survival::product_limit(data, target)?),
        NuisanceSpec::ProductLimitByGroup => {
            let arm = |g: bool| -> Result<StepCurve> {
                let idx: Vec<usize> = (0..data.len()).filter(|&i| data.get(i).group == g).collect();
                if idx.is_empty() {
                    return Ok(StepCurve::constant(1.0));
                }
                survival::product_limit(&data.subset(&idx)?, target)
            };
            Fitted::ByGroup {
                control: arm(false)?,
                treated: arm(true)?,
            }
        }
        NuisanceSpec::RandomSurvivalForest(params) => {
            Fitted::Forest(SurvivalForest::fit(data, target, params, seed)?)
        }
        NuisanceSpec::Oracle(form) => Fitted::Oracle(form.clone()),
    };
    Ok(ConditionalSurvivalModel {
        fitted,
        dim: data.dim(),
        trim_floor: DEFAULT_TRIM_FLOOR,
    })
}

/// Failure and censoring models fitted on the same training sample.
#[derive(Debug, Clone)]
pub struct NuisancePair {
    pub failure: ConditionalSurvivalModel,
    pub censoring: ConditionalSurvivalModel,
}

/// Out-of-fold nuisance models: subject `i` is evaluated with
/// `models[fold_of[i]]`, which never saw subject `i` when `k >= 2`.
#[derive(Debug, Clone)]
pub struct CrossFitBundle {
    k: usize,
    fold_of: Vec<usize>,
    models: Vec<NuisancePair>,
}

impl CrossFitBundle {
    /// `k = 1` bundle whose models are fitted on all subjects.
    pub fn in_sample(data: &Dataset, spec_s: &NuisanceSpec, spec_c: &NuisanceSpec, seed: u64) -> Result<Self> {
        let all: Vec<usize> = (0..data.len()).collect();
        let pair = fit_pair(data, &all, spec_s, spec_c, seed, None)?;
        Ok(Self {
            k: 1,
            fold_of: vec![0; data.len()],
            models: vec![pair],
        })
    }

    /// Bundle from already fitted models, used by every subject.
    pub fn from_models(n: usize, failure: ConditionalSurvivalModel, censoring: ConditionalSurvivalModel) -> Self {
        Self {
            k: 1,
            fold_of: vec![0; n],
            models: vec![NuisancePair { failure, censoring }],
        }
    }

    pub fn with_trim_floor(mut self, floor: f64) -> Result<Self> {
        check_floor(floor)?;
        for pair in &mut self.models {
            pair.failure.trim_floor = floor;
            pair.censoring.trim_floor = floor;
        }
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    pub fn models(&self) -> &[NuisancePair] {
        &self.models
    }

    pub fn pair_for(&self, subject: usize) -> &NuisancePair {
        &self.models[self.fold_of[subject]]
    }

    /// Subjects the models of fold `m` were trained on.
    pub fn training_indices(&self, m: usize) -> Vec<usize> {
        if self.k == 1 {
            return (0..self.fold_of.len()).collect();
        }
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != m).collect()
    }

    /// Members of fold `m`.
    pub fn fold_members(&self, m: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == m).collect()
    }

    /// Union of jump times of all models.
    pub fn jump_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self
            .models
            .iter()
            .flat_map(|p| p.failure.jump_times().into_iter().chain(p.censoring.jump_times()))
            .collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }
}

/// Stratified fold assignment: subjects are grouped by `(A, delta)`, each
/// stratum is shuffled, and the concatenation is dealt round-robin.
pub fn assign_folds(data: &Dataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = data.len();
    if k < 2 {
        return Err(Error::InfeasibleFolds {
            n,
            k,
            reason: "at least two folds are required".into(),
        });
    }
    if k > n {
        return Err(Error::InfeasibleFolds {
            n,
            k,
            reason: "more folds than subjects".into(),
        });
    }
    let mut r = rng::stream(seed, &[rng::FOLDS]);
    let mut order = Vec::with_capacity(n);
    for (a, d) in [(false, false), (false, true), (true, false), (true, true)] {
        let mut stratum: Vec<usize> = (0..n)
            .filter(|&i| data.get(i).group == a && data.get(i).event == d)
            .collect();
        stratum.shuffle(&mut r);
        order.extend(stratum);
    }
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(fold_of)
}

fn fit_pair(
    data: &Dataset,
    training: &[usize],
    spec_s: &NuisanceSpec,
    spec_c: &NuisanceSpec,
    seed: u64,
    fold: Option<usize>,
) -> Result<NuisancePair> {
    let train = data.subset(training)?;
    let label = fold.map_or(u64::MAX, |m| m as u64);
    let fit = |spec: &NuisanceSpec, target: Target, tag: u64| -> Result<ConditionalSurvivalModel> {
        // a target that never occurs in the full data has S ≡ 1
        if spec.needs_events() && data.count_events(target) == 0 {
            spec.validate(data.dim())?;
            return Ok(ConditionalSurvivalModel::unit(data.dim()));
        }
        fit_conditional_seeded(spec, &train, target, rng::derive_seed(seed, &[label, tag])).map_err(|e| match (e, fold) {
            (Error::NoEvents { target, .. }, Some(_)) => Error::NoEvents { target, fold },
            (e, Some(m)) => Error::Fold {
                fold: m,
                reason: e.to_string(),
            },
            (e, None) => e,
        })
    };
    Ok(NuisancePair {
        failure: fit(spec_s, Target::Failure, 0)?,
        censoring: fit(spec_c, Target::Censoring, 1)?,
    })
}

/// k-fold cross-fitting: fold `m`'s models are fitted on the other folds.
pub fn cross_fit(
    data: &Dataset,
    k: usize,
    spec_s: &NuisanceSpec,
    spec_c: &NuisanceSpec,
    seed: u64,
) -> Result<CrossFitBundle> {
    spec_s.validate(data.dim())?;
    spec_c.validate(data.dim())?;
    let fold_of = assign_folds(data, k, seed)?;
    for m in 0..k {
        let complement: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] != m).collect();
        let has_group = |g: bool| complement.iter().any(|&i| data.get(i).group == g);
        if !has_group(false) || !has_group(true) {
            return Err(Error::InfeasibleFolds {
                n: data.len(),
                k,
                reason: format!("the training sample of fold {m} lacks one of the groups"),
            });
        }
    }
    let models = (0..k)
        .map(|m| {
            let training: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] != m).collect();
            fit_pair(data, &training, spec_s, spec_c, seed, Some(m))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossFitBundle { k, fold_of, models })
}
