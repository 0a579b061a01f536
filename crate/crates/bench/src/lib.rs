//! Shared inputs for the benchmarks.

use aipcw_core::{generate, Dataset, Scenario, ScenarioSpec};

/// Observed data of the first simulation scenario.
pub fn scenario_one(n: usize, seed: u64) -> Dataset {
    generate(&ScenarioSpec::new(Scenario::One, n, seed))
        .expect("valid scenario")
        .observed
}
