//! Unit conventions.
//!
//! Flows enter configuration files in mL/min and are converted once, at load
//! time, to L/s. The linear models, PI gains and MPC weights are all expressed
//! per L/s of feed; with that choice the one-state linear model at the nominal
//! operating point has an input gain of about -57.5 K·L per (L/s).

use serde::{Deserialize, Serialize};

pub const ML_PER_MIN_IN_L_PER_S: f64 = 1.0 / 60_000.0;
pub const KELVIN_OFFSET: f64 = 273.15;

pub fn ml_per_min_to_l_per_s(q: f64) -> f64 {
    q / 60_000.0
}

pub fn l_per_s_to_ml_per_min(q: f64) -> f64 {
    q * 60_000.0
}

pub fn celsius_to_kelvin(t: f64) -> f64 {
    t + KELVIN_OFFSET
}

pub fn kelvin_to_celsius(t: f64) -> f64 {
    t - KELVIN_OFFSET
}

/// Volumetric feed flow.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct Flow(f64);

impl Flow {
    pub fn from_ml_per_min(q: f64) -> Self {
        Flow(ml_per_min_to_l_per_s(q))
    }

    pub fn from_l_per_s(q: f64) -> Self {
        Flow(q)
    }

    pub fn l_per_s(self) -> f64 {
        self.0
    }

    pub fn ml_per_min(self) -> f64 {
        l_per_s_to_ml_per_min(self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_conversions() {
        let f = Flow::from_ml_per_min(630.0);
        assert!((f.l_per_s() - 0.0105).abs() < 1e-15);
        assert!((f.ml_per_min() - 630.0).abs() < 1e-10);
        assert!((celsius_to_kelvin(59.30) - 332.45).abs() < 1e-12);
    }
}
