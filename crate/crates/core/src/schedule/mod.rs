//! Joint choice of local-update count, total updates and per-learner batch
//! sizes.
//!
//! For a fixed `tau`, learner `k` finishes `L` updates on `d_k` samples in
//! exactly `T` seconds when `d_k = (T tau / L - C0) / (C2 tau + C1)`. Summing
//! over learners and enforcing `sum d_k = d` pins down `L(tau)`; the loss
//! bound then becomes the one-dimensional objective `O(tau) = P(tau) / L(tau)`.

mod certificate;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bounds::ConvergenceParams;
use crate::cost::CostCoefficients;
use crate::error::{MelError, Result};

pub use certificate::{convexity_certificate, inverse_l_terms, CertificateReport, InverseLTerms};

/// Relative slack allowed on the per-learner time budget after flooring.
const TIME_SLACK: f64 = 1e-12;

/// Scheduling policy: heterogeneity-aware or heterogeneity-unaware.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Policy {
    HA,
    HU,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::HA => f.write_str("HA"),
            Policy::HU => f.write_str("HU"),
        }
    }
}

impl FromStr for Policy {
    type Err = MelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HA" => Ok(Policy::HA),
            "HU" => Ok(Policy::HU),
            other => Err(MelError::Config(format!(
                "unknown policy {other:?}, expected \"HA\" or \"HU\""
            ))),
        }
    }
}

/// Cost coefficients of the whole fleet together with the data and time
/// budget they must share.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetCosts {
    coeffs: Vec<CostCoefficients>,
    total_samples: u64,
    budget_s: f64,
}

impl FleetCosts {
    pub fn new(coeffs: Vec<CostCoefficients>, total_samples: u64, budget_s: f64) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(MelError::InvalidParams(
                "fleet needs at least one learner".into(),
            ));
        }
        if total_samples < coeffs.len() as u64 {
            return Err(MelError::InvalidParams(format!(
                "need at least one sample per learner: d={total_samples}, K={}",
                coeffs.len()
            )));
        }
        if !(budget_s > 0.0 && budget_s.is_finite()) {
            return Err(MelError::InvalidParams(format!(
                "time budget must be positive, got {budget_s}"
            )));
        }
        for c in &coeffs {
            CostCoefficients::new(c.c2, c.c1, c.c0)?;
        }
        Ok(FleetCosts {
            coeffs,
            total_samples,
            budget_s,
        })
    }

    pub fn coeffs(&self) -> &[CostCoefficients] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn total_samples(&self) -> u64 {
        self.total_samples
    }

    pub fn budget_s(&self) -> f64 {
        self.budget_s
    }

    pub fn with_budget(&self, budget_s: f64) -> Result<Self> {
        FleetCosts::new(self.coeffs.clone(), self.total_samples, budget_s)
    }

    fn fits(&self, k: usize, d_k: f64, tau: f64, total_updates: f64) -> bool {
        self.coeffs[k].time(d_k, tau, total_updates) <= self.budget_s * (1.0 + TIME_SLACK)
    }
}

/// One joint scheduling decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub tau: u32,
    /// Total local updates `L`, real-valued.
    pub total_updates: f64,
    /// `L / tau`.
    pub global_cycles: f64,
    /// `floor(L / tau)`.
    pub completed_cycles: u64,
    pub batches: Vec<u64>,
    /// Samples left unallocated after flooring.
    pub residual: u64,
    /// Learners whose relaxed batch was negative and that sit this plan out.
    pub excluded: Vec<usize>,
}

impl Schedule {
    pub fn allocated(&self) -> u64 {
        self.batches.iter().sum()
    }

    /// Largest per-learner total time under this schedule.
    pub fn max_time(&self, fleet: &FleetCosts) -> f64 {
        fleet
            .coeffs
            .iter()
            .zip(&self.batches)
            .filter(|(_, &d)| d > 0)
            .map(|(c, &d)| c.time(d as f64, self.tau as f64, self.total_updates))
            .fold(0.0, f64::max)
    }
}

/// `L` that makes learner `k` use exactly `budget_s` with batch `d_k`.
pub fn l_given_dk_tau(c: &CostCoefficients, d_k: f64, tau: f64, budget_s: f64) -> f64 {
    budget_s * tau / (c.c2 * tau * d_k + c.c1 * d_k + c.c0)
}

/// Real-valued batches `(T tau / L - C0) / (C2 tau + C1)`, unclamped.
pub fn real_batches(fleet: &FleetCosts, tau: f64, total_updates: f64) -> Vec<f64> {
    let per_update = fleet.budget_s * tau / total_updates;
    fleet
        .coeffs
        .iter()
        .map(|c| (per_update - c.c0) / (c.c2 * tau + c.c1))
        .collect()
}

/// Relaxed (real-valued) optimum for a given `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedPlan {
    pub total_updates: f64,
    pub batches: Vec<f64>,
    pub active: Vec<bool>,
}

/// Solve `sum_k max(0, d_k(tau, L)) = d` for `L`, with every participating
/// learner finishing exactly at `T`.
///
/// Learner `k` gets a positive batch iff `T tau / L > C0_k`, so the
/// participants are always the learners with the smallest `C0`. Those whose
/// model exchange alone would overrun the budget sit the plan out.
pub fn relaxed_plan(fleet: &FleetCosts, tau: f64) -> RelaxedPlan {
    let mut order: Vec<usize> = (0..fleet.len()).collect();
    order.sort_by(|&i, &j| fleet.coeffs[i].c0.total_cmp(&fleet.coeffs[j].c0));

    let d = fleet.total_samples as f64;
    let mut inv_sum = 0.0;
    let mut offset_sum = 0.0;
    let mut total_updates = 0.0;
    let mut participants = 0;
    for (m, &k) in order.iter().enumerate() {
        let c = &fleet.coeffs[k];
        let denom = c.c2 * tau + c.c1;
        inv_sum += 1.0 / denom;
        offset_sum += c.c0 / denom;
        total_updates = fleet.budget_s * tau * inv_sum / (d + offset_sum);
        participants = m + 1;
        let per_update = fleet.budget_s * tau / total_updates;
        match order.get(m + 1) {
            Some(&next) if per_update > fleet.coeffs[next].c0 => continue,
            _ => break,
        }
    }

    let mut active = vec![false; fleet.len()];
    for &k in &order[..participants] {
        active[k] = true;
    }
    let batches = real_batches(fleet, tau, total_updates)
        .into_iter()
        .zip(&active)
        .map(|(x, &a)| if a { x.max(0.0) } else { 0.0 })
        .collect();
    RelaxedPlan {
        total_updates,
        batches,
        active,
    }
}

/// `L(tau)` for the heterogeneity-aware allocation.
pub fn l_of_tau(fleet: &FleetCosts, tau: f64) -> f64 {
    relaxed_plan(fleet, tau).total_updates
}

fn snap_floor(x: f64) -> u64 {
    if x <= 0.0 {
        return 0;
    }
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest as u64
    } else {
        x.floor() as u64
    }
}

/// Integer batches for `(tau, L)`: relaxed values floored, then residual
/// samples handed out one at a time to the learners with the smallest
/// marginal time per extra sample, as long as they stay within budget.
pub fn batch_allocation(fleet: &FleetCosts, tau: u32, total_updates: f64) -> Result<Schedule> {
    if tau == 0 {
        return Err(MelError::Domain("tau must be at least 1".into()));
    }
    if !(total_updates > 0.0 && total_updates.is_finite()) {
        return Err(MelError::Domain(format!(
            "total updates must be positive, got {total_updates}"
        )));
    }
    let t = tau as f64;
    let d = fleet.total_samples;
    let real = real_batches(fleet, t, total_updates);
    let excluded: Vec<usize> = (0..real.len()).filter(|&k| real[k] < 0.0).collect();
    let clamped: Vec<f64> = real.iter().map(|&x| x.max(0.0)).collect();

    let real_sum: f64 = clamped.iter().sum();
    let scale = if real_sum > d as f64 {
        d as f64 / real_sum
    } else {
        1.0
    };
    let mut batches: Vec<u64> = clamped.iter().map(|&x| snap_floor(x * scale)).collect();
    for (k, b) in batches.iter_mut().enumerate() {
        while *b > 0 && !fleet.fits(k, *b as f64, t, total_updates) {
            *b -= 1;
        }
    }
    while batches.iter().sum::<u64>() > d {
        // snapping can overshoot by at most a few samples
        let k = (0..batches.len()).max_by_key(|&k| batches[k]).unwrap();
        batches[k] -= 1;
    }

    let mut residual = d - batches.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..batches.len())
        .filter(|k| !excluded.contains(k))
        .collect();
    let marginal = |k: usize| {
        let c = &fleet.coeffs[k];
        c.c2 + c.c1 / t
    };
    order.sort_by(|&i, &j| marginal(i).total_cmp(&marginal(j)));
    while residual > 0 {
        let mut placed = false;
        for &k in &order {
            if residual == 0 {
                break;
            }
            if fleet.fits(k, (batches[k] + 1) as f64, t, total_updates) {
                batches[k] += 1;
                residual -= 1;
                placed = true;
            }
        }
        if !placed {
            break;
        }
    }
    if residual >= fleet.len() as u64 {
        return Err(MelError::Infeasible {
            reason: format!(
                "{residual} samples cannot be placed within T={} at tau={tau}, L={total_updates}",
                fleet.budget_s
            ),
            shortfall: Some(residual),
        });
    }

    let global_cycles = total_updates / t;
    Ok(Schedule {
        tau,
        total_updates,
        global_cycles,
        completed_cycles: global_cycles.floor() as u64,
        batches,
        residual,
        excluded,
    })
}

/// `O(tau) = P(tau) / L(tau)`: the bound on the final loss gap.
pub fn objective(fleet: &FleetCosts, params: &ConvergenceParams, tau: f64) -> Result<f64> {
    Ok(params.p_tau(tau)? / l_of_tau(fleet, tau))
}

/// Outcome of a discrete minimization over `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauSearch {
    pub tau: u32,
    pub objective: f64,
    /// Distinct objective evaluations spent.
    pub probes: usize,
}

/// Minimize a discrete unimodal sequence over `1..=hi` by bisecting on the
/// sign of the forward difference. Ties go to the smaller argument.
pub fn argmin_unimodal<F>(hi: u32, mut f: F) -> Result<TauSearch>
where
    F: FnMut(u32) -> Result<f64>,
{
    if hi < 1 {
        return Err(MelError::infeasible("empty tau domain"));
    }
    let mut cache: HashMap<u32, f64> = HashMap::new();
    let mut eval = |t: u32| -> Result<f64> {
        if let Some(&v) = cache.get(&t) {
            return Ok(v);
        }
        let v = f(t)?;
        cache.insert(t, v);
        Ok(v)
    };
    let (mut lo, mut hi) = (1u32, hi);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if eval(mid + 1)? >= eval(mid)? {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let objective = eval(lo)?;
    Ok(TauSearch {
        tau: lo,
        objective,
        probes: cache.len(),
    })
}

/// Upper end of the admissible `tau` range: `tau_max` capped where the
/// learning-rate bound stops holding.
pub fn tau_cap(params: &ConvergenceParams, tau_max: u32) -> Result<u32> {
    let cap = match params.feasible_tau_upper()? {
        Some(u) => tau_max.min(u.min(u32::MAX as u64) as u32),
        None => tau_max,
    };
    if cap < 1 {
        return Err(MelError::infeasible("no admissible tau"));
    }
    Ok(cap)
}

/// Minimize `O(tau)` over `1..=min(tau_max, feasible upper)`.
///
/// `O` is strictly convex while the set of participating learners stays
/// fixed, which allows the logarithmic search. Participation can only grow
/// with `tau`, so comparing both ends of the range detects the case where
/// learners join mid-range; the objective may then have several local minima
/// and the range is scanned instead.
pub fn find_tau_star(
    fleet: &FleetCosts,
    params: &ConvergenceParams,
    tau_max: u32,
) -> Result<TauSearch> {
    let cap = tau_cap(params, tau_max)?;
    let f = |t: u32| objective(fleet, params, t as f64);
    if relaxed_plan(fleet, 1.0).active == relaxed_plan(fleet, cap as f64).active {
        argmin_unimodal(cap, f)
    } else {
        argmin_scan(cap, f)
    }
}

/// Exhaustive minimization over `1..=hi`, ties to the smaller argument.
pub fn argmin_scan<F>(hi: u32, mut f: F) -> Result<TauSearch>
where
    F: FnMut(u32) -> Result<f64>,
{
    if hi < 1 {
        return Err(MelError::infeasible("empty tau domain"));
    }
    let mut best = TauSearch {
        tau: 1,
        objective: f(1)?,
        probes: 1,
    };
    for t in 2..=hi {
        let v = f(t)?;
        best.probes += 1;
        if v < best.objective {
            best.tau = t;
            best.objective = v;
        }
    }
    Ok(best)
}

/// `d / K` per learner with the remainder going to the lowest indices.
pub fn equal_split(total_samples: u64, learners: usize) -> Vec<u64> {
    let k = learners as u64;
    let base = total_samples / k;
    let extra = total_samples % k;
    (0..k).map(|i| base + u64::from(i < extra)).collect()
}

/// `L` under the equal split: the slowest learner sets the pace.
pub fn hu_total_updates(fleet: &FleetCosts, tau: f64) -> f64 {
    equal_split(fleet.total_samples, fleet.len())
        .iter()
        .zip(&fleet.coeffs)
        .map(|(&d, c)| l_given_dk_tau(c, d as f64, tau, fleet.budget_s))
        .fold(f64::INFINITY, f64::min)
}

pub fn hu_objective(fleet: &FleetCosts, params: &ConvergenceParams, tau: f64) -> Result<f64> {
    Ok(params.p_tau(tau)? / hu_total_updates(fleet, tau))
}

/// Heterogeneity-unaware baseline: equal batches, `tau` chosen by the same
/// bound-minimizing search against the bottlenecked `L`.
pub fn hu_schedule(
    fleet: &FleetCosts,
    params: &ConvergenceParams,
    tau_max: u32,
) -> Result<Schedule> {
    let cap = tau_cap(params, tau_max)?;
    let found = argmin_unimodal(cap, |t| hu_objective(fleet, params, t as f64))?;
    Ok(hu_schedule_at(fleet, found.tau))
}

pub fn hu_schedule_at(fleet: &FleetCosts, tau: u32) -> Schedule {
    let total_updates = hu_total_updates(fleet, tau as f64);
    let global_cycles = total_updates / tau as f64;
    Schedule {
        tau,
        total_updates,
        global_cycles,
        completed_cycles: global_cycles.floor() as u64,
        batches: equal_split(fleet.total_samples, fleet.len()),
        residual: 0,
        excluded: Vec::new(),
    }
}

pub fn ha_schedule(
    fleet: &FleetCosts,
    params: &ConvergenceParams,
    tau_max: u32,
) -> Result<Schedule> {
    let found = find_tau_star(fleet, params, tau_max)?;
    ha_schedule_at(fleet, found.tau)
}

pub fn ha_schedule_at(fleet: &FleetCosts, tau: u32) -> Result<Schedule> {
    batch_allocation(fleet, tau, l_of_tau(fleet, tau as f64))
}

pub fn plan(
    policy: Policy,
    fleet: &FleetCosts,
    params: &ConvergenceParams,
    tau_max: u32,
) -> Result<Schedule> {
    match policy {
        Policy::HA => ha_schedule(fleet, params, tau_max),
        Policy::HU => hu_schedule(fleet, params, tau_max),
    }
}

pub fn plan_at(policy: Policy, fleet: &FleetCosts, tau: u32) -> Result<Schedule> {
    match policy {
        Policy::HA => ha_schedule_at(fleet, tau),
        Policy::HU => Ok(hu_schedule_at(fleet, tau)),
    }
}

pub fn total_updates_for(policy: Policy, fleet: &FleetCosts, tau: f64) -> f64 {
    match policy {
        Policy::HA => l_of_tau(fleet, tau),
        Policy::HU => hu_total_updates(fleet, tau),
    }
}

pub fn objective_for(
    policy: Policy,
    fleet: &FleetCosts,
    params: &ConvergenceParams,
    tau: f64,
) -> Result<f64> {
    match policy {
        Policy::HA => objective(fleet, params, tau),
        Policy::HU => hu_objective(fleet, params, tau),
    }
}
