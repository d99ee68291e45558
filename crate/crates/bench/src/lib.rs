//! Fixtures shared by the criterion benchmarks.

use melsched_core::experiment::ExperimentConfig;
use melsched_core::learner::{Dataset, SyntheticTask, TaskSpec};
use melsched_core::schedule::FleetCosts;
use melsched_core::ConvergenceParams;

/// Cost coefficients of the default fleet with `k` learners and budget `budget_s`.
pub fn default_costs(k: usize, budget_s: f64) -> FleetCosts {
    let mut cfg = ExperimentConfig::default();
    cfg.fleet.k = k;
    let fleet = cfg.build_fleet(0).expect("default fleet");
    FleetCosts::new(fleet.coefficients(), cfg.task.total_samples, budget_s).expect("default costs")
}

pub fn default_params(delta: f64) -> ConvergenceParams {
    ConvergenceParams::new(0.01, 0.4, delta, 0.0075).expect("valid params")
}

/// One learner's share of the default logistic task.
pub fn shard(samples: u64, dim: usize) -> Dataset {
    let spec = TaskSpec {
        dim,
        total_samples: samples,
        holdout_samples: 0,
        ..TaskSpec::default()
    };
    SyntheticTask::generate(spec, 1)
        .expect("task")
        .shards
        .remove(0)
}
