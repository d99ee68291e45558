//! Path-loss and Shannon-rate model for the learner/orchestrator links.
//!
//! Every learner owns an orthogonal channel, so link rates are independent of
//! each other. Distances are in meters at the API boundary; the attenuation
//! model takes kilometers internally.

use serde::{Deserialize, Serialize};

use crate::error::{MelError, Result};

/// Static description of one learner's wireless link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub distance_m: f64,
    /// Linear power gain. When present it replaces the distance-derived gain.
    pub pathloss_gain: Option<f64>,
}

impl ChannelSpec {
    pub fn new(
        bandwidth_hz: f64,
        tx_power_dbm: f64,
        noise_psd_dbm_hz: f64,
        distance_m: f64,
    ) -> Result<Self> {
        let spec = ChannelSpec {
            bandwidth_hz,
            tx_power_dbm,
            noise_psd_dbm_hz,
            distance_m,
            pathloss_gain: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_gain(mut self, gain: f64) -> Result<Self> {
        self.pathloss_gain = Some(gain);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(MelError::InvalidParams(format!(
                "bandwidth_hz must be positive, got {}",
                self.bandwidth_hz
            )));
        }
        if !(self.distance_m > 0.0 && self.distance_m.is_finite()) {
            return Err(MelError::InvalidParams(format!(
                "distance_m must be positive, got {}",
                self.distance_m
            )));
        }
        if !self.tx_power_dbm.is_finite() || !self.noise_psd_dbm_hz.is_finite() {
            return Err(MelError::InvalidParams(
                "tx power and noise density must be finite".into(),
            ));
        }
        if let Some(g) = self.pathloss_gain {
            if !(g > 0.0 && g <= 1.0) {
                return Err(MelError::InvalidParams(format!(
                    "pathloss_gain must lie in (0, 1], got {g}"
                )));
            }
        }
        Ok(())
    }

    pub fn tx_power_watts(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    /// Total noise power over the band, N0 * W, in watts.
    pub fn noise_power_watts(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_hz) * self.bandwidth_hz
    }

    pub fn gain(&self) -> f64 {
        match self.pathloss_gain {
            Some(g) => g,
            None => pathloss_gain(self.distance_m).expect("distance validated at construction"),
        }
    }

    /// Linear signal-to-noise ratio.
    pub fn snr(&self) -> f64 {
        self.tx_power_watts() * self.gain() / self.noise_power_watts()
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Attenuation in dB for the `128 + 37.1 log10(R_km)` cell model.
pub fn pathloss_db(distance_m: f64) -> Result<f64> {
    if !(distance_m > 0.0 && distance_m.is_finite()) {
        return Err(MelError::Domain(format!(
            "distance must be positive, got {distance_m}"
        )));
    }
    Ok(128.0 + 37.1 * (distance_m / 1000.0).log10())
}

/// Linear channel power gain at `distance_m`.
pub fn pathloss_gain(distance_m: f64) -> Result<f64> {
    Ok(10f64.powf(-pathloss_db(distance_m)? / 10.0))
}

/// Achievable rate in bit/s: `W log2(1 + P h / (N0 W))`.
pub fn link_rate(spec: &ChannelSpec) -> f64 {
    spec.bandwidth_hz * spec.snr().ln_1p() / std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1() -> ChannelSpec {
        ChannelSpec::new(5e6, 23.0, -174.0, 500.0).unwrap()
    }

    #[test]
    fn pathloss_reference_points() {
        assert!((pathloss_db(1000.0).unwrap() - 128.0).abs() < 1e-12);
        let g = pathloss_gain(1000.0).unwrap();
        assert!((g / 10f64.powf(-12.8) - 1.0).abs() < 1e-12);

        // 128 + 37.1 log10(0.5)
        let pl = pathloss_db(500.0).unwrap();
        assert!((pl - 116.831_787).abs() < 1e-5, "{pl}");
        let g = pathloss_gain(500.0).unwrap();
        assert!((g - 2.074_06e-12).abs() < 1e-16, "{g}");

        assert!((pathloss_db(100.0).unwrap() - 90.9).abs() < 1e-9);
    }

    #[test]
    fn pathloss_rejects_non_positive_distance() {
        assert!(matches!(pathloss_db(0.0), Err(MelError::Domain(_))));
        assert!(pathloss_gain(-3.0).is_err());
    }

    #[test]
    fn table1_rate() {
        let spec = table1();
        // independent arithmetic: P = 10^-0.7 W, h = 10^-11.6832, N0 W = 10^-20.4 * 5e6
        let p = 10f64.powf(-0.7);
        let h = 10f64.powf(-(128.0 + 37.1 * 0.5f64.log10()) / 10.0);
        let n = 10f64.powf(-20.4) * 5e6;
        let snr = p * h / n;
        assert!((spec.snr() - snr).abs() / snr < 1e-12);
        assert!((spec.snr() - 20.78).abs() < 0.01, "{}", spec.snr());
        let rate = link_rate(&spec);
        assert!((rate - 2.22e7).abs() / 2.22e7 < 2e-3, "{rate}");
    }

    #[test]
    fn unit_snr_gives_bandwidth() {
        let mut spec = table1();
        // P h = N0 W  =>  h = N0 W / P
        let h = spec.noise_power_watts() / spec.tx_power_watts();
        spec.pathloss_gain = Some(h);
        assert!((link_rate(&spec) - spec.bandwidth_hz).abs() < 1e-6);
    }

    #[test]
    fn wider_band_raises_rate() {
        let narrow = table1();
        let mut wide = table1();
        wide.bandwidth_hz *= 2.0;
        assert!(link_rate(&wide) > link_rate(&narrow));
    }

    #[test]
    fn gain_override_validation() {
        assert!(table1().with_gain(0.0).is_err());
        assert!(table1().with_gain(1.5).is_err());
        assert!(table1().with_gain(1.0).is_ok());
        assert!(ChannelSpec::new(0.0, 23.0, -174.0, 500.0).is_err());
        assert!(ChannelSpec::new(5e6, 23.0, -174.0, 0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rate_increases_with_power_and_gain(
                p in -10.0f64..40.0, dp in 0.1f64..10.0,
                dist in 10.0f64..3000.0, scale in 1.01f64..100.0,
            ) {
                let base = ChannelSpec::new(5e6, p, -174.0, dist).unwrap();
                let mut louder = base.clone();
                louder.tx_power_dbm += dp;
                prop_assert!(link_rate(&louder) > link_rate(&base));

                let g = base.gain();
                let better = base.clone().with_gain((g * scale).min(1.0)).unwrap();
                prop_assert!(link_rate(&better) > link_rate(&base));
            }

            #[test]
            fn gain_decreases_with_distance(d in 1.0f64..1e5, step in 1e-3f64..1e3) {
                prop_assert!(pathloss_gain(d + step).unwrap() < pathloss_gain(d).unwrap());
            }

            #[test]
            fn dbm_round_trip(dbm in -200.0f64..60.0) {
                let back = watts_to_dbm(dbm_to_watts(dbm));
                prop_assert!((back - dbm).abs() <= 1e-12 * dbm.abs().max(1.0));
                let w = dbm_to_watts(dbm);
                prop_assert!(w > 0.0);
                prop_assert!((dbm_to_watts(watts_to_dbm(w)) / w - 1.0).abs() < 1e-12);
            }
        }
    }
}
