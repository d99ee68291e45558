use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use melsched_core::experiment::report::{round_log_to_string, write_round_log};
use melsched_core::experiment::{
    bootstrap_params, emit_report, load_config, run_single, run_sweep, ExperimentConfig,
};
use melsched_core::orchestrator::StopReason;
use melsched_core::schedule::{
    convexity_certificate, find_tau_star, hu_objective, plan, FleetCosts,
};
use melsched_core::{MelError, Policy};

#[derive(Parser)]
#[command(
    name = "melsched",
    version,
    about = "Schedule and simulate learning over heterogeneous wireless edge learners"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` or JSON config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the fleet layout and synthetic data; defaults to `task.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config key, e.g. `--set fleet.K=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, u64)> {
        let mut cfg = match &self.config {
            Some(path) => {
                load_config(path).with_context(|| format!("loading {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got {kv:?}");
            };
            cfg.set(k.trim(), v)?;
        }
        let seed = self.seed.unwrap_or(cfg.task.seed);
        Ok((cfg, seed))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Per-learner link rates and cost coefficients.
    Rate {
        #[command(flatten)]
        common: Common,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan tau, L and batch sizes for one budget.
    Schedule {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: Option<Policy>,
        /// Budget in seconds; defaults to `train.budget_s`.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the orchestrated training loop and emit one row per global cycle.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: Option<Policy>,
        #[arg(long)]
        budget: Option<f64>,
        /// Round log CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured policy, budget and seed and write the report.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Restrict the sweep to one policy.
        #[arg(long)]
        policy: Option<Policy>,
        /// Report directory; defaults to `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check convexity of the scheduling objective on a tau grid.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        budget: Option<f64>,
        /// Largest tau on the grid.
        #[arg(long, default_value_t = 200)]
        tau_max: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn rate(common: &Common, out: Option<&Path>) -> Result<()> {
    let (cfg, seed) = common.load()?;
    let fleet = cfg.build_fleet(seed)?;
    let mut text = String::from("k,cpu_hz,distance_m,gain,snr,rate_bps,c2,c1,c0\n");
    for (p, c) in fleet.learners.iter().zip(fleet.coefficients()) {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.id,
            p.cpu_hz,
            p.channel.distance_m,
            p.channel.gain(),
            p.channel.snr(),
            p.rate(),
            c.c2,
            c.c1,
            c.c0
        ));
    }
    emit(out, &text)
}

fn schedule(
    common: &Common,
    policy: Option<Policy>,
    budget: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    let (cfg, seed) = common.load()?;
    let policy = policy.unwrap_or(cfg.opt.policy);
    let budget = budget.unwrap_or(cfg.train.budget_s);
    let fleet = cfg.build_fleet(seed)?;
    let costs = FleetCosts::new(fleet.coefficients(), cfg.task.total_samples, budget)?;
    let tau_max = cfg
        .opt
        .tau_max
        .unwrap_or_else(|| melsched_core::orchestrator::auto_tau_max(&costs, cfg.opt.tau_hard_cap));
    let params = bootstrap_params(&cfg, budget, seed)?;
    let s = plan(policy, &costs, &params, tau_max)?;
    let objective = match policy {
        Policy::HA => find_tau_star(&costs, &params, tau_max)?.objective,
        Policy::HU => hu_objective(&costs, &params, s.tau as f64)?,
    };
    let batches: Vec<String> = s.batches.iter().map(u64::to_string).collect();
    let text = format!(
        "policy,{policy}\nT,{budget}\ntau_max,{tau_max}\nbeta,{}\ndelta,{}\ntau,{}\nL,{}\nglobal_cycles,{}\nobjective,{objective}\n\
         max_time_s,{}\nresidual,{}\nbatches,{}\n",
        params.beta(),
        params.delta(),
        s.tau,
        s.total_updates,
        s.global_cycles,
        s.max_time(&costs),
        s.residual,
        batches.join(";")
    );
    emit(out, &text)
}

fn train(
    common: &Common,
    policy: Option<Policy>,
    budget: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    let (cfg, seed) = common.load()?;
    let policy = policy.unwrap_or(cfg.opt.policy);
    let budget = budget.unwrap_or(cfg.train.budget_s);
    let outcome = run_single(&cfg, policy, budget, seed)?;
    match out {
        Some(path) => write_round_log(path, &outcome.logs)?,
        None => emit(None, &round_log_to_string(&outcome.logs)?)?,
    }
    eprintln!(
        "{policy} T={budget}s seed={seed}: {} cycles, {:.3}s used, loss {:.6} -> {:.6}{}",
        outcome.rounds,
        outcome.total_time,
        outcome.initial_loss,
        outcome.final_loss,
        outcome
            .accuracy
            .map(|a| format!(", accuracy {a:.4}"))
            .unwrap_or_default()
    );
    if outcome.stop == StopReason::FirstRoundInfeasible {
        return Err(MelError::infeasible(format!(
            "a single tau = 1 cycle does not fit T = {budget}s"
        ))
        .into());
    }
    Ok(())
}

fn sweep(common: &Common, policy: Option<Policy>, out: Option<&Path>) -> Result<()> {
    let (mut cfg, _) = common.load()?;
    if let Some(p) = policy {
        cfg.sweep.policies = vec![p];
    }
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.dir.clone());
    let report = run_sweep(&cfg);
    let files = emit_report(&report, &dir)?;
    print!("{}", melsched_core::experiment::report::loss_table(&report));
    eprintln!(
        "wrote {} cells to {}",
        report.cells.len(),
        files.summary.display()
    );
    let failed: Vec<_> = report
        .cells
        .iter()
        .filter(|c| c.status.starts_with("error"))
        .collect();
    if !failed.is_empty() {
        bail!("{} cells failed, first: {}", failed.len(), failed[0].status);
    }
    Ok(())
}

fn certify(common: &Common, budget: Option<f64>, tau_max: u32, out: Option<&Path>) -> Result<()> {
    let (cfg, seed) = common.load()?;
    let budget = budget.unwrap_or(cfg.train.budget_s);
    let fleet = cfg.build_fleet(seed)?;
    let costs = FleetCosts::new(fleet.coefficients(), cfg.task.total_samples, budget)?;
    let params = bootstrap_params(&cfg, budget, seed)?;
    let grid: Vec<f64> = (1..=tau_max).map(f64::from).collect();
    let r = convexity_certificate(&costs, &params, &grid);
    let min_second = r
        .second_differences
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let text = format!(
        "C,{}\nthreshold,{}\nthreshold_ok,{}\ngrid_points,{}\ndropped_points,{}\nmin_second_difference,{min_second}\n\
         convex,{}\nm_decreasing,{}\nn_decreasing,{}\nm_convex,{}\nn_convex,{}\npassed,{}\n",
        params.c(),
        r.threshold,
        r.threshold_ok,
        r.grid.len(),
        r.dropped_points,
        r.convex,
        r.m_decreasing,
        r.n_decreasing,
        r.m_convex,
        r.n_convex,
        r.passed()
    );
    emit(out, &text)?;
    if !r.passed() {
        bail!("convexity certificate failed");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Rate { common, out } => rate(common, out.as_deref()),
        Command::Schedule {
            common,
            policy,
            budget,
            out,
        } => schedule(common, *policy, *budget, out.as_deref()),
        Command::Train {
            common,
            policy,
            budget,
            out,
        } => train(common, *policy, *budget, out.as_deref()),
        Command::Sweep {
            common,
            policy,
            out,
        } => sweep(common, *policy, out.as_deref()),
        Command::Certify {
            common,
            budget,
            tau_max,
            out,
        } => certify(common, *budget, *tau_max, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let infeasible = e
                .downcast_ref::<MelError>()
                .is_some_and(MelError::is_infeasible);
            ExitCode::from(if infeasible { 2 } else { 1 })
        }
    }
}
