//! Per-learner send/compute/receive times and the linear cost coefficients
//! derived from them.
//!
//! With `rate` the learner's link rate, one global cycle with `d_k` samples
//! and `tau` local iterations costs
//!
//! ```text
//! t_k = L * (C2 d_k + (C1 d_k + C0) / tau)
//! ```
//!
//! where `C2 = C_m / f_k`, `C1 = (F P_d + 2 P_m S_d) / rate` (the data term is
//! absent in federated mode) and `C0 = 2 P_m S_m / rate`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MelError, Result};
use crate::wireless::{link_rate, ChannelSpec};

/// Whether the orchestrator ships training samples with the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OffloadMode {
    /// Offloaded learning: batches travel with the model.
    OL,
    /// Federated learning: learners hold their data; only the model moves.
    FL,
}

impl fmt::Display for OffloadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OffloadMode::OL => f.write_str("OL"),
            OffloadMode::FL => f.write_str("FL"),
        }
    }
}

impl FromStr for OffloadMode {
    type Err = MelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "OL" => Ok(OffloadMode::OL),
            "FL" => Ok(OffloadMode::FL),
            other => Err(MelError::Config(format!(
                "unknown mode {other:?}, expected \"OL\" or \"FL\""
            ))),
        }
    }
}

/// Sizes and complexity of the learning model being trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Feature count per sample.
    pub features: f64,
    pub data_precision_bits: f64,
    pub model_precision_bits: f64,
    /// Parameter count independent of the batch size.
    pub size_fixed: f64,
    /// Parameters per allocated sample. May be zero.
    pub size_per_sample: f64,
    /// Processor cycles per sample per local iteration.
    pub complexity_cycles: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("features", self.features),
            ("data_precision_bits", self.data_precision_bits),
            ("model_precision_bits", self.model_precision_bits),
            ("size_fixed", self.size_fixed),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MelError::InvalidParams(format!(
                    "model.{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.size_per_sample >= 0.0 && self.size_per_sample.is_finite()) {
            return Err(MelError::InvalidParams(format!(
                "model.size_per_sample must be non-negative, got {}",
                self.size_per_sample
            )));
        }
        if !(self.complexity_cycles >= 1.0 && self.complexity_cycles.is_finite()) {
            return Err(MelError::InvalidParams(format!(
                "model.complexity_cycles must be at least 1, got {}",
                self.complexity_cycles
            )));
        }
        Ok(())
    }

    /// Bits of one model transfer carrying `d_k` samples' worth of parameters.
    pub fn model_bits(&self, d_k: f64) -> f64 {
        self.model_precision_bits * (d_k * self.size_per_sample + self.size_fixed)
    }

    pub fn data_bits(&self, d_k: f64) -> f64 {
        d_k * self.features * self.data_precision_bits
    }
}

/// Compute and channel description of a single learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerProfile {
    pub id: usize,
    pub cpu_hz: f64,
    pub channel: ChannelSpec,
}

impl LearnerProfile {
    pub fn new(id: usize, cpu_hz: f64, channel: ChannelSpec) -> Result<Self> {
        if !(cpu_hz > 0.0 && cpu_hz.is_finite()) {
            return Err(MelError::InvalidParams(format!(
                "learner {id}: cpu_hz must be positive, got {cpu_hz}"
            )));
        }
        channel.validate()?;
        Ok(LearnerProfile {
            id,
            cpu_hz,
            channel,
        })
    }

    pub fn rate(&self) -> f64 {
        link_rate(&self.channel)
    }
}

/// Linearized per-learner cost constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCoefficients {
    /// Seconds per sample per local iteration.
    pub c2: f64,
    /// Seconds per sample per global cycle (communication).
    pub c1: f64,
    /// Seconds per global cycle independent of the batch.
    pub c0: f64,
}

impl CostCoefficients {
    pub fn new(c2: f64, c1: f64, c0: f64) -> Result<Self> {
        if !(c2 > 0.0 && c0 > 0.0 && c1 >= 0.0)
            || !(c2.is_finite() && c1.is_finite() && c0.is_finite())
        {
            return Err(MelError::InvalidParams(format!(
                "cost coefficients need c2 > 0, c1 >= 0, c0 > 0; got ({c2}, {c1}, {c0})"
            )));
        }
        Ok(CostCoefficients { c2, c1, c0 })
    }

    pub fn a(&self) -> f64 {
        self.c1 / self.c2
    }

    pub fn b(&self) -> f64 {
        self.c0 / self.c2
    }

    /// `L (C2 d_k + (C1 d_k + C0) / tau)`.
    pub fn time(&self, d_k: f64, tau: f64, total_updates: f64) -> f64 {
        total_updates * (self.c2 * d_k + (self.c1 * d_k + self.c0) / tau)
    }

    /// Wall time of one global cycle: `tau` local steps plus one exchange.
    pub fn round_time(&self, d_k: f64, tau: f64) -> f64 {
        tau * self.c2 * d_k + self.c1 * d_k + self.c0
    }
}

pub fn time_send(profile: &LearnerProfile, model: &ModelSpec, d_k: f64, mode: OffloadMode) -> f64 {
    let bits = match mode {
        OffloadMode::OL => model.data_bits(d_k) + model.model_bits(d_k),
        OffloadMode::FL => model.model_bits(d_k),
    };
    bits / profile.rate()
}

pub fn time_compute(profile: &LearnerProfile, model: &ModelSpec, d_k: f64) -> f64 {
    d_k * model.complexity_cycles / profile.cpu_hz
}

pub fn time_receive(profile: &LearnerProfile, model: &ModelSpec, d_k: f64) -> f64 {
    model.model_bits(d_k) / profile.rate()
}

/// Total time learner `k` spends on `total_updates` local steps aggregated
/// every `tau` steps.
pub fn total_time(
    profile: &LearnerProfile,
    model: &ModelSpec,
    d_k: f64,
    tau: f64,
    total_updates: f64,
    mode: OffloadMode,
) -> Result<f64> {
    if !(tau >= 1.0) {
        return Err(MelError::Domain(format!(
            "tau must be at least 1, got {tau}"
        )));
    }
    let compute = time_compute(profile, model, d_k);
    let comm = time_send(profile, model, d_k, mode) + time_receive(profile, model, d_k);
    Ok(total_updates * (compute + comm / tau))
}

pub fn cost_coefficients(
    profile: &LearnerProfile,
    model: &ModelSpec,
    mode: OffloadMode,
) -> CostCoefficients {
    let rate = profile.rate();
    let per_sample_bits = match mode {
        OffloadMode::OL => {
            model.features * model.data_precision_bits
                + 2.0 * model.model_precision_bits * model.size_per_sample
        }
        OffloadMode::FL => 2.0 * model.model_precision_bits * model.size_per_sample,
    };
    CostCoefficients {
        c2: model.complexity_cycles / profile.cpu_hz,
        c1: per_sample_bits / rate,
        c0: 2.0 * model.model_precision_bits * model.size_fixed / rate,
    }
}

/// The set of learners taking part in training, with the shared model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    pub learners: Vec<LearnerProfile>,
    pub model: ModelSpec,
    pub mode: OffloadMode,
}

impl Fleet {
    pub fn new(learners: Vec<LearnerProfile>, model: ModelSpec, mode: OffloadMode) -> Result<Self> {
        if learners.is_empty() {
            return Err(MelError::InvalidParams(
                "fleet needs at least one learner".into(),
            ));
        }
        model.validate()?;
        Ok(Fleet {
            learners,
            model,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.learners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.learners.is_empty()
    }

    pub fn coefficients(&self) -> Vec<CostCoefficients> {
        self.learners
            .iter()
            .map(|p| cost_coefficients(p, &self.model, self.mode))
            .collect()
    }

    /// Duration of one global cycle: the slowest participating learner.
    /// Learners with an empty batch are not dispatched and cost nothing.
    pub fn round_time(&self, batches: &[u64], tau: u32) -> f64 {
        self.coefficients()
            .iter()
            .zip(batches)
            .filter(|(_, &d)| d > 0)
            .map(|(c, &d)| c.round_time(d as f64, tau as f64))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn mnist_like() -> ModelSpec {
        ModelSpec {
            features: 784.0,
            data_precision_bits: 8.0,
            model_precision_bits: 32.0,
            size_fixed: 280_934.0,
            size_per_sample: 1.0,
            complexity_cycles: 1e4,
        }
    }

    fn profile(cpu: f64) -> LearnerProfile {
        LearnerProfile::new(0, cpu, ChannelSpec::new(5e6, 23.0, -174.0, 500.0).unwrap()).unwrap()
    }

    #[test]
    fn send_time_without_data_is_model_only() {
        let p = profile(2.4e9);
        let m = mnist_like();
        let t = time_send(&p, &m, 0.0, OffloadMode::OL);
        assert!((t - 32.0 * 280_934.0 / p.rate()).abs() < 1e-15);
    }

    #[test]
    fn ol_fl_send_difference_is_data_term() {
        let p = profile(2.4e9);
        let m = mnist_like();
        for d in [0.0, 1.0, 17.0, 2700.0] {
            let diff =
                time_send(&p, &m, d, OffloadMode::OL) - time_send(&p, &m, d, OffloadMode::FL);
            let expect = d * 784.0 * 8.0 / p.rate();
            assert!((diff - expect).abs() <= 1e-12 * expect.max(1e-12));
        }
        // 2700 samples of 784 8-bit features at 2.22e7 bit/s
        assert!((2700.0_f64 * 784.0 * 8.0 / 2.22e7 - 0.763).abs() < 1e-3);
    }

    #[test]
    fn compute_time() {
        let m = mnist_like();
        assert_eq!(time_compute(&profile(2.4e9), &m, 0.0), 0.0);
        assert!((time_compute(&profile(2.4e9), &m, 2700.0) - 0.01125).abs() < 1e-15);
        let fast = time_compute(&profile(2.4e9), &m, 100.0);
        let slow = time_compute(&profile(1.2e9), &m, 100.0);
        assert!((slow - 2.0 * fast).abs() < 1e-15);
    }

    #[test]
    fn receive_time() {
        let p = profile(2.4e9);
        let mut m = mnist_like();
        assert!((time_receive(&p, &m, 0.0) - 32.0 * 280_934.0 / p.rate()).abs() < 1e-15);
        assert_eq!(
            time_send(&p, &m, 42.0, OffloadMode::FL),
            time_receive(&p, &m, 42.0)
        );
        m.size_per_sample = 0.0;
        assert_eq!(time_receive(&p, &m, 0.0), time_receive(&p, &m, 5000.0));
    }

    #[test]
    fn total_time_limits() {
        let p = profile(1.2e9);
        let m = mnist_like();
        let d = 2700.0;
        let comp = time_compute(&p, &m, d);
        let comm = time_send(&p, &m, d, OffloadMode::OL) + time_receive(&p, &m, d);
        let one_cycle = total_time(&p, &m, d, 7.0, 7.0, OffloadMode::OL).unwrap();
        assert!((one_cycle - (7.0 * comp + comm)).abs() < 1e-12);
        let huge = total_time(&p, &m, d, 1e15, 10.0, OffloadMode::OL).unwrap();
        assert!((huge - 10.0 * comp).abs() < 1e-9);
        assert!(total_time(&p, &m, d, 0.0, 1.0, OffloadMode::OL).is_err());
    }

    #[test]
    fn coefficient_relations() {
        let m = mnist_like();
        let slow = profile(1.2e9);
        let ol = cost_coefficients(&slow, &m, OffloadMode::OL);
        let fl = cost_coefficients(&slow, &m, OffloadMode::FL);
        assert!(fl.c1 < ol.c1);
        assert_eq!(fl.c0, ol.c0);
        assert_eq!(fl.c2, ol.c2);

        let fast = cost_coefficients(&profile(2.4e9), &m, OffloadMode::OL);
        assert!((ol.c2 - 2.0 * fast.c2).abs() < 1e-18);
        assert_eq!(ol.c1, fast.c1);
        assert_eq!(ol.c0, fast.c0);
        assert!((ol.a() - ol.c1 / ol.c2).abs() < 1e-15);
    }

    #[test]
    fn round_time_skips_idle_learners() {
        let m = mnist_like();
        let fleet = Fleet::new(vec![profile(2.4e9), profile(1.2e9)], m, OffloadMode::OL).unwrap();
        let c = fleet.coefficients();
        let only_fast = fleet.round_time(&[100, 0], 3);
        assert!((only_fast - c[0].round_time(100.0, 3.0)).abs() < 1e-15);
        assert_eq!(fleet.round_time(&[0, 0], 3), 0.0);
    }

    #[test]
    fn invalid_inputs() {
        let mut m = mnist_like();
        m.complexity_cycles = 0.5;
        assert!(m.validate().is_err());
        let mut m = mnist_like();
        m.size_per_sample = 0.0;
        assert!(m.validate().is_ok());
        assert!(LearnerProfile::new(0, 0.0, profile(1.0).channel).is_err());
        assert!(CostCoefficients::new(1.0, 0.0, 0.0).is_err());
        assert!("ol".parse::<OffloadMode>().unwrap() == OffloadMode::OL);
        assert!("XL".parse::<OffloadMode>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            // Expand the three transfer/compute times independently and compare
            // with the coefficient form used by the optimizer.
            #[test]
            fn coefficient_form_matches_expanded_times(
                cpu in 1e8f64..5e9, dist in 20.0f64..2000.0, bw in 1e5f64..2e7,
                d in 0.0f64..1e5, tau in 1.0f64..1e3, l in 0.1f64..1e4,
                spd in 0.0f64..20.0, fl in any::<bool>(),
            ) {
                let mut m = mnist_like();
                m.size_per_sample = spd;
                let p = LearnerProfile::new(3, cpu, ChannelSpec::new(bw, 23.0, -174.0, dist).unwrap()).unwrap();
                let mode = if fl { OffloadMode::FL } else { OffloadMode::OL };
                let direct = total_time(&p, &m, d, tau, l, mode).unwrap();
                let c = cost_coefficients(&p, &m, mode);
                let viacoef = c.time(d, tau, l);
                prop_assert!((direct - viacoef).abs() <= 1e-12 * direct.abs());
            }

            #[test]
            fn times_monotone_in_batch_and_updates(
                d in 0.0f64..1e5, dd in 0.0f64..1e3, l in 0.1f64..1e3, dl in 0.0f64..1e3, tau in 1.0f64..100.0,
            ) {
                let p = profile(2.4e9);
                let m = mnist_like();
                let base = total_time(&p, &m, d, tau, l, OffloadMode::OL).unwrap();
                prop_assert!(base >= 0.0);
                prop_assert!(total_time(&p, &m, d + dd, tau, l, OffloadMode::OL).unwrap() >= base);
                prop_assert!(total_time(&p, &m, d, tau, l + dl, OffloadMode::OL).unwrap() >= base);
            }
        }
    }
}
