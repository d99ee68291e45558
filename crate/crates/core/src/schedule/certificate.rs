//! Numerical convexity certificate for `O(tau)`.
//!
//! `1 / L(tau)` splits into a data term `M = d / (T D)` and an offset term
//! `N = E / (T D)` with
//!
//! ```text
//! D(tau) = sum_k w_k tau / (tau + a_k),   w_k = 1 / C2_k
//! E(tau) = sum_k b_k / (tau + a_k)
//! ```
//!
//! over the learners active at `tau`. Both are decreasing and convex; the
//! report checks those signs from closed-form derivatives, evaluates second
//! divided differences of `O` on a grid, and records the threshold on `tau`
//! beyond which the loss factor behaves.

use serde::{Deserialize, Serialize};

use super::{objective, relaxed_plan, FleetCosts};
use crate::bounds::{convexity_threshold, ConvergenceParams};

/// `M`, `N` and their first two derivatives at one `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseLTerms {
    pub m: f64,
    pub m1: f64,
    pub m2: f64,
    pub n: f64,
    pub n1: f64,
    pub n2: f64,
}

pub fn inverse_l_terms(fleet: &FleetCosts, tau: f64) -> InverseLTerms {
    let active = relaxed_plan(fleet, tau).active;
    let (mut d0, mut d1, mut d2) = (0.0, 0.0, 0.0);
    let (mut e0, mut e1, mut e2) = (0.0, 0.0, 0.0);
    for (c, _) in fleet.coeffs().iter().zip(&active).filter(|(_, &a)| a) {
        let (w, a, b) = (1.0 / c.c2, c.a(), c.b());
        let s = tau + a;
        d0 += w * tau / s;
        d1 += w * a / (s * s);
        d2 -= 2.0 * w * a / (s * s * s);
        e0 += b / s;
        e1 -= b / (s * s);
        e2 += 2.0 * b / (s * s * s);
    }
    let t = fleet.budget_s();
    let d = fleet.total_samples() as f64;
    InverseLTerms {
        m: d / (t * d0),
        m1: -d * d1 / (t * d0 * d0),
        m2: d * (2.0 * d1 * d1 - d0 * d2) / (t * d0 * d0 * d0),
        n: e0 / (t * d0),
        n1: (e1 * d0 - e0 * d1) / (t * d0 * d0),
        n2: (e2 / d0 - 2.0 * e1 * d1 / (d0 * d0) - e0 * d2 / (d0 * d0)
            + 2.0 * e0 * d1 * d1 / (d0 * d0 * d0))
            / t,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    /// Grid points inside the admissible domain (`nu > 0`).
    pub grid: Vec<f64>,
    /// Second divided differences of `O` at interior grid points.
    pub second_differences: Vec<f64>,
    pub convex: bool,
    /// `(C ln C + 1 - C) / ln C`.
    pub threshold: f64,
    pub threshold_ok: bool,
    pub m_decreasing: bool,
    pub n_decreasing: bool,
    pub m_convex: bool,
    pub n_convex: bool,
    /// Requested grid points dropped because the bound is not admissible there.
    pub dropped_points: usize,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.convex
            && self.threshold_ok
            && self.m_decreasing
            && self.n_decreasing
            && self.m_convex
            && self.n_convex
    }
}

pub fn convexity_certificate(
    fleet: &FleetCosts,
    params: &ConvergenceParams,
    tau_grid: &[f64],
) -> CertificateReport {
    let mut grid = Vec::with_capacity(tau_grid.len());
    let mut values = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        if let Ok(o) = objective(fleet, params, tau) {
            grid.push(tau);
            values.push(o);
        }
    }
    let dropped_points = tau_grid.len() - grid.len();

    let second_differences: Vec<f64> = (1..grid.len().saturating_sub(1))
        .map(|i| {
            let (x0, x1, x2) = (grid[i - 1], grid[i], grid[i + 1]);
            let left = (values[i] - values[i - 1]) / (x1 - x0);
            let right = (values[i + 1] - values[i]) / (x2 - x1);
            2.0 * (right - left) / (x2 - x0)
        })
        .collect();
    let convex = second_differences.iter().all(|&s| s > 0.0);

    let threshold = convexity_threshold(params.c());
    let threshold_ok = grid.iter().cloned().fold(f64::INFINITY, f64::min) > threshold;

    let terms: Vec<InverseLTerms> = grid.iter().map(|&t| inverse_l_terms(fleet, t)).collect();
    CertificateReport {
        convex,
        threshold,
        threshold_ok,
        m_decreasing: terms.iter().all(|t| t.m1 < 0.0),
        n_decreasing: terms.iter().all(|t| t.n1 < 0.0),
        m_convex: terms.iter().all(|t| t.m2 > 0.0),
        n_convex: terms.iter().all(|t| t.n2 > 0.0),
        grid,
        second_differences,
        dropped_points,
    }
}
