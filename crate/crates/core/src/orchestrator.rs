//! The global training loop: dispatch, local training, aggregation,
//! parameter estimation and per-cycle re-planning under a time budget.
//!
//! Time is simulated. A cycle lasts as long as its slowest dispatched
//! learner according to the cost model.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::ConvergenceParams;
use crate::cost::Fleet;
use crate::error::{MelError, Result};
use crate::learner::{distance, norm};
use crate::schedule::{
    argmin_unimodal, find_tau_star, hu_objective, hu_schedule_at, objective_for, plan_at, tau_cap,
    total_updates_for, FleetCosts, Policy, Schedule,
};

/// Whatever executes local training on behalf of the learners.
///
/// Methods taking `&self` may be called concurrently for different learners.
pub trait LearnerBackend: Sync {
    fn dim(&self) -> usize;
    fn initial_model(&self) -> Vec<f64>;
    /// Hand each learner its batch for cycle `round`.
    fn dispatch(&mut self, round: usize, batches: &[u64]);
    fn local_train(
        &self,
        k: usize,
        w: &[f64],
        tau: u32,
        eta: f64,
        round: usize,
    ) -> Result<Vec<f64>>;
    fn local_gradient(&self, k: usize, w: &[f64]) -> Vec<f64>;
    fn local_loss(&self, k: usize, w: &[f64]) -> f64;
    fn global_loss(&self, w: &[f64]) -> f64;
    fn accuracy(&self, _w: &[f64]) -> Option<f64> {
        None
    }
}

/// Models closer than this are treated as identical when estimating beta.
pub const BETA_MIN_GAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaEstimate {
    pub value: f64,
    /// No learner moved away from the aggregate; `value` is the warm value.
    pub fallback: bool,
}

/// `sum_k d_k beta_k / sum_k d_k` with
/// `beta_k = ||grad F_k(w_k) - grad F_k(w)|| / ||w_k - w||`, over learners
/// whose model differs from `w`.
pub fn estimate_beta(
    grad_at_local: &[Vec<f64>],
    grad_at_global: &[Vec<f64>],
    locals: &[Vec<f64>],
    w: &[f64],
    weights: &[f64],
    warm: f64,
) -> BetaEstimate {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..locals.len() {
        let gap = distance(&locals[k], w);
        if gap < BETA_MIN_GAP || weights[k] <= 0.0 {
            continue;
        }
        num += weights[k] * distance(&grad_at_local[k], &grad_at_global[k]) / gap;
        den += weights[k];
    }
    if den > 0.0 && num > 0.0 && num.is_finite() {
        BetaEstimate {
            value: num / den,
            fallback: false,
        }
    } else {
        BetaEstimate {
            value: warm,
            fallback: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeltaEstimator {
    /// `||grad F_k(w) - grad F(w)||`.
    Gradient,
    /// `|F_k(w) - F(w)|`.
    Loss,
}

impl fmt::Display for DeltaEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeltaEstimator::Gradient => f.write_str("gradient"),
            DeltaEstimator::Loss => f.write_str("loss"),
        }
    }
}

impl FromStr for DeltaEstimator {
    type Err = MelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gradient" => Ok(DeltaEstimator::Gradient),
            "loss" => Ok(DeltaEstimator::Loss),
            other => Err(MelError::Config(format!(
                "unknown delta estimator {other:?}, expected \"gradient\" or \"loss\""
            ))),
        }
    }
}

/// Weighted divergence of local gradients (or losses) from the global one at `w`.
pub fn estimate_delta(
    grads: &[Vec<f64>],
    losses: &[f64],
    weights: &[f64],
    estimator: DeltaEstimator,
) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    match estimator {
        DeltaEstimator::Gradient => {
            let dim = grads.first().map_or(0, Vec::len);
            let mut global = vec![0.0; dim];
            for (g, &p) in grads.iter().zip(weights) {
                for (a, v) in global.iter_mut().zip(g) {
                    *a += p / total * v;
                }
            }
            grads
                .iter()
                .zip(weights)
                .map(|(g, &p)| p / total * distance(g, &global))
                .sum()
        }
        DeltaEstimator::Loss => {
            let global: f64 = losses.iter().zip(weights).map(|(l, p)| p / total * l).sum();
            losses
                .iter()
                .zip(weights)
                .map(|(l, &p)| p / total * (l - global).abs())
                .sum()
        }
    }
}

/// `sum_k d_k w_k / sum_k d_k`.
pub fn aggregate(locals: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || locals.is_empty() {
        return Err(MelError::InvalidParams(
            "aggregation weights sum to zero".into(),
        ));
    }
    let dim = locals[0].len();
    let mut w = vec![0.0; dim];
    for (wk, &p) in locals.iter().zip(weights) {
        let share = p / total;
        for (a, v) in w.iter_mut().zip(wk) {
            *a += share * v;
        }
    }
    Ok(w)
}

/// Largest `tau` such that three cycles at the equal split fit the budget,
/// clamped to `1..=hard_cap`.
pub fn auto_tau_max(costs: &FleetCosts, hard_cap: u32) -> u32 {
    let d_k = costs.total_samples() as f64 / costs.len() as f64;
    let compute = costs
        .coeffs()
        .iter()
        .map(|c| c.c2 * d_k)
        .fold(0.0, f64::max);
    let comms = costs
        .coeffs()
        .iter()
        .map(|c| c.c1 * d_k + c.c0)
        .fold(0.0, f64::max);
    let fits = |tau: f64| 3.0 * (tau * compute + comms) <= costs.budget_s();
    let cap = hard_cap.max(1);
    let guess = ((costs.budget_s() / 3.0 - comms) / compute).floor();
    let mut tau = if guess.is_finite() {
        guess.clamp(1.0, cap as f64) as u32
    } else {
        cap
    };
    while tau > 1 && !fits(tau as f64) {
        tau -= 1;
    }
    while tau < cap && fits(tau as f64 + 1.0) {
        tau += 1;
    }
    tau
}

/// Per-cycle jitter of learner distances around their base values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelResample {
    /// Relative half-width of the uniform jitter.
    pub jitter: f64,
    pub seed: u64,
}

pub fn resample_channels(base: &Fleet, jitter: f64, rng: &mut impl Rng) -> Fleet {
    let mut fleet = base.clone();
    for p in &mut fleet.learners {
        let u: f64 = rng.random_range(-1.0..=1.0);
        p.channel.distance_m *= 1.0 + jitter * u;
    }
    fleet
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub policy: Policy,
    pub eta: f64,
    pub b0: f64,
    pub budget_s: f64,
    pub total_samples: u64,
    /// `None` derives the range from the budget with [`auto_tau_max`].
    pub tau_max: Option<u32>,
    pub tau_hard_cap: u32,
    pub beta_override: Option<f64>,
    pub delta_override: Option<f64>,
    pub delta_estimator: DeltaEstimator,
    /// Used until the first successful beta estimate.
    pub initial_beta: f64,
    pub resample: Option<ChannelResample>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            policy: Policy::HA,
            eta: 0.01,
            b0: 0.0075,
            budget_s: 300.0,
            total_samples: 54_000,
            tau_max: None,
            tau_hard_cap: 10_000,
            beta_override: None,
            delta_override: None,
            delta_estimator: DeltaEstimator::Gradient,
            initial_beta: 1.0,
            resample: None,
        }
    }
}

/// Telemetry for one global cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub g: usize,
    pub tau: u32,
    /// Bound-minimizing `tau` before any reduction to fit the budget.
    pub tau_star: u32,
    /// Planned total updates `L` for the remaining budget.
    pub total_updates: f64,
    pub batches: Vec<u64>,
    pub max_time_s: f64,
    /// Estimates collected at the end of the cycle.
    pub beta: f64,
    pub delta: f64,
    pub global_loss: f64,
    /// `O(tau)` of the plan; absent for the bootstrap cycle.
    pub bound: Option<f64>,
    pub beta_fallback: bool,
    pub beta_clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// Not even a single `tau = 1` cycle fits the initial budget.
    FirstRoundInfeasible,
    /// The remaining budget cannot fit another cycle.
    BudgetExhausted,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::FirstRoundInfeasible => f.write_str("first cycle exceeds the budget"),
            StopReason::BudgetExhausted => f.write_str("budget exhausted"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub w: Vec<f64>,
    pub elapsed: f64,
    pub remaining_budget: f64,
    pub round_index: usize,
    pub params: Option<ConvergenceParams>,
    pub schedule: Option<Schedule>,
    pub logs: Vec<RoundLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub w: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub accuracy: Option<f64>,
    pub rounds: usize,
    pub total_time: f64,
    pub tau_max: u32,
    pub stop: StopReason,
    pub logs: Vec<RoundLog>,
}

fn validate(cfg: &TrainingConfig, fleet: &Fleet) -> Result<()> {
    if !(cfg.budget_s > 0.0 && cfg.budget_s.is_finite()) {
        return Err(MelError::InvalidParams(format!(
            "budget must be positive, got {}",
            cfg.budget_s
        )));
    }
    if cfg.total_samples < fleet.len() as u64 {
        return Err(MelError::InvalidParams(format!(
            "{} samples cannot cover {} learners",
            cfg.total_samples,
            fleet.len()
        )));
    }
    if let Some(b) = cfg.beta_override {
        if !(b > 0.0) {
            return Err(MelError::InvalidParams(format!(
                "beta override must be positive, got {b}"
            )));
        }
    }
    if let Some(d) = cfg.delta_override {
        if !(d >= 0.0) {
            return Err(MelError::InvalidParams(format!(
                "delta override must be non-negative, got {d}"
            )));
        }
    }
    ConvergenceParams::new(cfg.eta, cfg.initial_beta.min(1.0 / cfg.eta), 0.0, cfg.b0)?;
    Ok(())
}

/// The `tau` to run next and its schedule, or `None` when no cycle fits.
struct NextPlan {
    tau_star: u32,
    schedule: Schedule,
    bound: f64,
}

fn next_plan(
    policy: Policy,
    costs: &FleetCosts,
    params: &ConvergenceParams,
    fleet: &Fleet,
    tau_max: u32,
    slack: f64,
) -> Result<Option<NextPlan>> {
    let cap = tau_cap(params, tau_max)?;
    let tau_star = match policy {
        Policy::HA => find_tau_star(costs, params, cap)?.tau,
        Policy::HU => argmin_unimodal(cap, |t| hu_objective(costs, params, t as f64))?.tau,
    };
    // The number of cycles L/tau that fit shrinks as tau grows; find the
    // largest tau <= tau_star that still leaves room for one.
    let cycles = |t: u32| total_updates_for(policy, costs, t as f64) / t as f64;
    let mut tau = if cycles(tau_star) >= 1.0 {
        tau_star
    } else if cycles(1) < 1.0 {
        return Ok(None);
    } else {
        let (mut lo, mut hi) = (1u32, tau_star);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if cycles(mid) >= 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    while tau >= 1 {
        if let Ok(schedule) = plan_at(policy, costs, tau) {
            if schedule.allocated() > 0 && fleet.round_time(&schedule.batches, tau) <= slack {
                let bound = objective_for(policy, costs, params, tau as f64)?;
                return Ok(Some(NextPlan {
                    tau_star,
                    schedule,
                    bound,
                }));
            }
        }
        tau -= 1;
    }
    Ok(None)
}

/// Run the orchestrated training loop until the budget is spent.
pub fn run_training<B: LearnerBackend>(
    fleet: &Fleet,
    backend: &mut B,
    cfg: &TrainingConfig,
) -> Result<TrainingOutcome> {
    validate(cfg, fleet)?;
    let budget = cfg.budget_s;
    let k_count = fleet.len();
    let initial_costs = FleetCosts::new(fleet.coefficients(), cfg.total_samples, budget)?;
    let tau_max = cfg
        .tau_max
        .unwrap_or_else(|| auto_tau_max(&initial_costs, cfg.tau_hard_cap))
        .max(1);
    let mut resample_rng = cfg.resample.map(|r| ChaCha8Rng::seed_from_u64(r.seed));

    let w0 = backend.initial_model();
    let initial_loss = backend.global_loss(&w0);
    let mut state = TrainingState {
        w: w0,
        elapsed: 0.0,
        remaining_budget: budget,
        round_index: 0,
        params: None,
        schedule: Some(hu_schedule_at(&initial_costs, 1)),
        logs: Vec::new(),
    };
    let mut current_fleet = fleet.clone();
    let mut bound: Option<f64> = None;
    let mut tau_star = 1;
    let mut beta_warm = cfg.beta_override.unwrap_or(cfg.initial_beta);
    let mut stop = StopReason::BudgetExhausted;

    while let Some(schedule) = state.schedule.take() {
        let g = state.round_index;
        let tau = schedule.tau;
        let round_time = current_fleet.round_time(&schedule.batches, tau);
        if state.elapsed + round_time > budget {
            if g == 0 {
                stop = StopReason::FirstRoundInfeasible;
            }
            break;
        }

        backend.dispatch(g, &schedule.batches);
        let active: Vec<usize> = (0..k_count).filter(|&k| schedule.batches[k] > 0).collect();
        let weights: Vec<f64> = active.iter().map(|&k| schedule.batches[k] as f64).collect();
        let locals: Vec<Vec<f64>> = {
            let shared: &B = backend;
            let w = &state.w;
            active
                .par_iter()
                .map(|&k| shared.local_train(k, w, tau, cfg.eta, g))
                .collect::<Result<_>>()?
        };
        let w = aggregate(&locals, &weights)?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(MelError::NonFinite {
                context: "aggregated model".into(),
                detail: format!("cycle {g}, norm {}", norm(&w)),
            });
        }

        let shared: &B = backend;
        let (grad_local, grad_global): (Vec<Vec<f64>>, Vec<Vec<f64>>) = active
            .par_iter()
            .zip(&locals)
            .map(|(&k, wk)| (shared.local_gradient(k, wk), shared.local_gradient(k, &w)))
            .unzip();
        let losses: Vec<f64> = active.iter().map(|&k| shared.local_loss(k, &w)).collect();

        let estimate = estimate_beta(&grad_local, &grad_global, &locals, &w, &weights, beta_warm);
        let mut beta = cfg.beta_override.unwrap_or(estimate.value);
        let beta_fallback = cfg.beta_override.is_none() && estimate.fallback;
        let beta_clamped = beta * cfg.eta > 1.0;
        if beta_clamped {
            beta = 1.0 / cfg.eta;
        }
        beta_warm = beta;
        let delta = cfg.delta_override.unwrap_or_else(|| {
            estimate_delta(&grad_global, &losses, &weights, cfg.delta_estimator)
        });
        let params = ConvergenceParams::new(cfg.eta, beta, delta, cfg.b0)?;

        state.elapsed += round_time;
        state.remaining_budget = budget - state.elapsed;
        state.w = w;
        state.params = Some(params);
        state.logs.push(RoundLog {
            g,
            tau,
            tau_star,
            total_updates: schedule.total_updates,
            batches: schedule.batches.clone(),
            max_time_s: round_time,
            beta,
            delta,
            global_loss: backend.global_loss(&state.w),
            bound,
            beta_fallback,
            beta_clamped,
        });
        state.round_index += 1;

        if let (Some(r), Some(rng)) = (cfg.resample, resample_rng.as_mut()) {
            current_fleet = resample_channels(fleet, r.jitter, rng);
        }
        if state.remaining_budget <= 0.0 {
            break;
        }
        let costs = FleetCosts::new(
            current_fleet.coefficients(),
            cfg.total_samples,
            state.remaining_budget,
        )?;
        let slack = budget - state.elapsed;
        match next_plan(cfg.policy, &costs, &params, &current_fleet, tau_max, slack)? {
            Some(next) => {
                tau_star = next.tau_star;
                bound = Some(next.bound);
                state.schedule = Some(next.schedule);
            }
            None => break,
        }
    }

    let accuracy = backend.accuracy(&state.w);
    Ok(TrainingOutcome {
        final_loss: state.logs.last().map_or(initial_loss, |l| l.global_loss),
        initial_loss,
        accuracy,
        rounds: state.logs.len(),
        total_time: state.elapsed,
        tau_max,
        stop,
        logs: state.logs,
        w: state.w,
    })
}
