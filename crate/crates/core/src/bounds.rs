//! Convergence-bound machinery for distributed gradient descent with periodic
//! aggregation.
//!
//! With `C = 1 + eta*beta`, the divergence between the distributed trajectory
//! and a centralized one after `tau` local steps is bounded by
//! `h(tau) = (delta/beta) (C^tau - 1) - eta*delta*tau`, and the loss gap after
//! `L` steps by `1 / (L nu(tau))` with
//! `nu(tau) = A - B (C^tau - 1 - (C - 1) tau) / tau`.

use serde::{Deserialize, Serialize};

use crate::error::{MelError, Result};

/// Learning rate, smoothness and divergence estimates plus the control
/// parameter `B0` that folds the loss-Lipschitz and gap constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceParams {
    eta: f64,
    beta: f64,
    delta: f64,
    b0: f64,
}

impl ConvergenceParams {
    pub fn new(eta: f64, beta: f64, delta: f64, b0: f64) -> Result<Self> {
        let finite = eta.is_finite() && beta.is_finite() && delta.is_finite() && b0.is_finite();
        if !finite || eta <= 0.0 || beta <= 0.0 || delta < 0.0 || b0 <= 0.0 {
            return Err(MelError::InvalidParams(format!(
                "need eta > 0, beta > 0, delta >= 0, b0 > 0; got eta={eta}, beta={beta}, delta={delta}, b0={b0}"
            )));
        }
        if eta * beta > 1.0 {
            return Err(MelError::InvalidParams(format!(
                "learning rate too large: eta*beta = {} exceeds 1",
                eta * beta
            )));
        }
        Ok(ConvergenceParams {
            eta,
            beta,
            delta,
            b0,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn b0(&self) -> f64 {
        self.b0
    }

    /// `eta (1 - beta eta / 2)`
    pub fn a(&self) -> f64 {
        self.eta * (1.0 - self.beta * self.eta / 2.0)
    }

    /// `(delta / beta) B0`
    pub fn b(&self) -> f64 {
        self.delta / self.beta * self.b0
    }

    /// `eta beta + 1`, in (1, 2].
    pub fn c(&self) -> f64 {
        self.eta * self.beta + 1.0
    }

    /// `C^tau - 1 - (C - 1) tau` evaluated without catastrophic cancellation.
    fn excess_growth(&self, tau: f64) -> f64 {
        if tau == 1.0 {
            return 0.0;
        }
        let x = self.eta * self.beta;
        let log_c = x.ln_1p();
        // (e^u - 1 - u) - tau (x - ln(1 + x)) with u = tau ln C
        let g = expm1_minus_arg(tau * log_c) - tau * x_minus_ln1p(x);
        g.max(0.0)
    }

    pub fn h_tau(&self, tau: f64) -> Result<f64> {
        check_tau(tau)?;
        Ok(self.delta / self.beta * self.excess_growth(tau))
    }

    pub fn nu_tau(&self, tau: f64) -> Result<f64> {
        check_tau(tau)?;
        Ok(self.a() - self.b() * self.excess_growth(tau) / tau)
    }

    /// `1 / nu(tau)`, the loss-gap factor of the objective.
    pub fn p_tau(&self, tau: f64) -> Result<f64> {
        let nu = self.nu_tau(tau)?;
        if nu <= 0.0 {
            return Err(MelError::infeasible(format!(
                "learning-rate bound violated at tau={tau}: nu={nu}"
            )));
        }
        Ok(1.0 / nu)
    }

    /// Largest integer `tau` with `nu(tau) > 0`, or `None` when every `tau` is
    /// admissible (zero divergence).
    pub fn feasible_tau_upper(&self) -> Result<Option<u64>> {
        let positive = |tau: u64| self.nu_tau(tau as f64).map(|nu| nu > 0.0).unwrap_or(false);
        if !positive(1) {
            return Err(MelError::infeasible("nu(1) <= 0: no admissible tau"));
        }
        if self.b() == 0.0 {
            return Ok(None);
        }
        let mut lo = 1u64;
        let mut hi = 2u64;
        while positive(hi) {
            lo = hi;
            match hi.checked_mul(2) {
                Some(next) => hi = next,
                None => return Ok(None),
            }
        }
        // positive(lo) && !positive(hi); nu is nonincreasing so bisect.
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if positive(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Some(lo))
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau >= 1.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(MelError::Domain(format!(
            "tau must be at least 1, got {tau}"
        )))
    }
}

/// `e^u - 1 - u`
fn expm1_minus_arg(u: f64) -> f64 {
    if u.abs() < 0.5 {
        let mut term = u * u / 2.0;
        let mut sum = term;
        let mut j = 2.0;
        while term.abs() > sum.abs() * 1e-17 {
            j += 1.0;
            term *= u / j;
            sum += term;
        }
        sum
    } else {
        u.exp_m1() - u
    }
}

/// `x - ln(1 + x)` for `x > 0`.
fn x_minus_ln1p(x: f64) -> f64 {
    if x < 0.25 {
        // x^2/2 - x^3/3 + x^4/4 - ...
        let mut power = x;
        let mut sum = 0.0;
        for j in 2..200 {
            power *= -x;
            let term = -power / j as f64;
            sum += term;
            if term.abs() < sum * 1e-17 {
                break;
            }
        }
        sum
    } else {
        x - x.ln_1p()
    }
}

/// Threshold `(C ln C + 1 - C) / ln C` above which the sign conditions of the
/// loss-factor derivatives are guaranteed.
pub fn convexity_threshold(c: f64) -> f64 {
    let ln_c = c.ln();
    if ln_c == 0.0 {
        return 0.0;
    }
    (c * ln_c + 1.0 - c) / ln_c
}
