//! Cox hazard-ratio estimation under dependent censoring: classical
//! partial likelihood, inverse probability of censoring weighting, and the
//! cross-fitted augmented (doubly robust) estimator, plus the simulation
//! study used to compare them.

pub mod aipcw;
pub mod curve;
pub mod data;
pub mod error;
pub mod ipcw;
pub mod nuisance;
pub mod rng;
pub mod sim;
pub mod solver;
pub mod survival;

pub use aipcw::{solve_aipcw, AipcwFit, TimeGrid};
pub use curve::StepCurve;
pub use data::{Dataset, Observation, Target};
pub use error::{Error, Result};
pub use ipcw::{solve_ipcw, IpcwFit};
pub use nuisance::{
    cross_fit, fit_conditional, ConditionalSurvivalModel, CrossFitBundle, ForestParams, NuisanceSpec, OracleForm,
};
pub use sim::{generate, run_study, EstimatorSpec, Scenario, ScenarioSpec, SimulationReport, StudyConfig};
pub use survival::{cox_mple, CoxFit, Design};
