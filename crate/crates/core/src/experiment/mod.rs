//! Configured experiments: single training runs and policy/budget/seed sweeps.

pub mod config;
pub mod report;

use rayon::prelude::*;

pub use config::{load_config, ExperimentConfig, SCHEMA};
pub use report::{emit_report, read_report, CellResult, ExperimentReport};

use crate::bounds::ConvergenceParams;
use crate::error::Result;
use crate::orchestrator::{run_training, TrainingConfig, TrainingOutcome};
use crate::schedule::Policy;

/// One training run of the configured fleet and task.
pub fn run_single(
    cfg: &ExperimentConfig,
    policy: Policy,
    budget_s: f64,
    seed: u64,
) -> Result<TrainingOutcome> {
    let fleet = cfg.build_fleet(seed)?;
    let mut backend = cfg.build_backend(seed)?;
    run_training(
        &fleet,
        &mut backend,
        &cfg.training_config(policy, budget_s, seed),
    )
}

pub fn run_cell(cfg: &ExperimentConfig, policy: Policy, budget_s: f64, seed: u64) -> CellResult {
    match run_single(cfg, policy, budget_s, seed) {
        Ok(out) => CellResult {
            policy,
            budget_s,
            seed,
            final_loss: out.final_loss,
            rounds: out.rounds,
            total_time: out.total_time,
            accuracy: out.accuracy,
            status: out.stop.to_string(),
            logs: out.logs,
        },
        Err(e) => CellResult {
            policy,
            budget_s,
            seed,
            final_loss: f64::NAN,
            rounds: 0,
            total_time: 0.0,
            accuracy: None,
            status: format!("error: {e}"),
            logs: Vec::new(),
        },
    }
}

/// Every `(policy, T, seed)` cell, run in parallel; cells are reported in
/// policy, budget, seed order regardless of scheduling.
pub fn run_sweep(cfg: &ExperimentConfig) -> ExperimentReport {
    let cells: Vec<(Policy, f64, u64)> = cfg
        .sweep
        .policies
        .iter()
        .flat_map(|&p| {
            cfg.sweep
                .budgets
                .iter()
                .flat_map(move |&t| cfg.sweep.seeds.iter().map(move |&s| (p, t, s)))
        })
        .collect();
    ExperimentReport {
        cells: cells
            .par_iter()
            .map(|&(p, t, s)| run_cell(cfg, p, t, s))
            .collect(),
    }
}

/// Convergence parameters for planning outside a training run: overrides
/// when configured, otherwise the estimates after one bootstrap cycle at
/// `tau = 1` with an equal split.
pub fn bootstrap_params(
    cfg: &ExperimentConfig,
    budget_s: f64,
    seed: u64,
) -> Result<ConvergenceParams> {
    let (beta, delta) = match (cfg.bounds.beta_override, cfg.bounds.delta_override) {
        (Some(b), Some(d)) => (b, d),
        (b, d) => {
            let fleet = cfg.build_fleet(seed)?;
            let mut backend = cfg.build_backend(seed)?;
            // a budget large enough for the bootstrap cycle alone
            let probe = TrainingConfig {
                budget_s: budget_s.max(
                    fleet.round_time(
                        &crate::schedule::equal_split(cfg.task.total_samples, fleet.len()),
                        1,
                    ) * (1.0 + 1e-9),
                ),
                ..cfg.training_config(Policy::HU, budget_s, seed)
            };
            let first = run_training(&fleet, &mut backend, &probe)?
                .logs
                .into_iter()
                .next();
            match first {
                Some(log) => (b.unwrap_or(log.beta), d.unwrap_or(log.delta)),
                None => (b.unwrap_or(cfg.bounds.initial_beta), d.unwrap_or(0.0)),
            }
        }
    };
    let beta = beta.min(1.0 / cfg.bounds.eta);
    ConvergenceParams::new(cfg.bounds.eta, beta, delta, cfg.bounds.b0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig::from_str_flat(
            "fleet.K = 4\ntask.total_samples = 800\ntask.dim = 4\ntask.holdout_samples = 100\n\
             sweep.budgets = [20, 40]\nsweep.seeds = [0, 1, 2]\n",
        )
        .unwrap()
    }

    #[test]
    fn sweep_has_one_row_per_cell() {
        let report = run_sweep(&small());
        assert_eq!(report.cells.len(), 12);
        assert!(report
            .cells
            .iter()
            .all(|c| c.rounds > 0 && c.final_loss.is_finite()));
        assert_eq!(report.cells[0].policy, Policy::HA);
        assert_eq!(report.cells[11].policy, Policy::HU);
    }

    #[test]
    fn emitted_report_round_trips() {
        let report = run_sweep(&small());
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report, dir.path()).unwrap();
        assert_eq!(read_report(dir.path()).unwrap(), report);
        let text = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(text.starts_with("policy,T,seed,final_loss,rounds,total_time\n"));
    }

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&ExperimentReport::default(), dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(text, "policy,T,seed,final_loss,rounds,total_time\n");
    }

    #[test]
    fn sweep_is_byte_reproducible() {
        let cfg = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        emit_report(&run_sweep(&cfg), a.path()).unwrap();
        emit_report(&run_sweep(&cfg), b.path()).unwrap();
        for f in ["summary.csv", "cells.csv", "loss_vs_T.txt"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn infeasible_cell_does_not_abort_sweep() {
        let mut cfg = small();
        cfg.sweep.budgets = vec![1e-3, 20.0];
        let report = run_sweep(&cfg);
        assert_eq!(report.cells.len(), 12);
        let tiny = report.cell(Policy::HA, 1e-3, 0).unwrap();
        assert_eq!(tiny.rounds, 0);
        assert!(tiny.status.contains("first cycle"));
        assert!(report.cell(Policy::HA, 20.0, 0).unwrap().rounds > 0);
    }

    #[test]
    fn bootstrap_uses_overrides() {
        let mut cfg = small();
        cfg.bounds.beta_override = Some(2.0);
        cfg.bounds.delta_override = Some(0.25);
        let p = bootstrap_params(&cfg, 30.0, 0).unwrap();
        assert_eq!((p.beta(), p.delta()), (2.0, 0.25));
        cfg.bounds.delta_override = None;
        let p = bootstrap_params(&cfg, 30.0, 0).unwrap();
        assert_eq!(p.beta(), 2.0);
        assert!(p.delta() > 0.0);
    }
}
