use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the reactor.
///
/// Stored as a flat `key = value` TOML file. `f_min` / `f_max` are in mL/min;
/// everything else is in the internal units (K, L, s, mol/L).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactorParameters {
    /// Pre-exponential factor, L/(mol·s).
    pub k0: f64,
    /// Activation temperature `Ea/R`, K.
    pub ea_over_r: f64,
    /// Adiabatic temperature rise per unit conversion, `-dHr / (rho cP)`, K·L/mol.
    pub beta: f64,
    /// Reactor volume, L.
    pub volume: f64,
    /// Inlet concentration of A, mol/L.
    pub cain: f64,
    /// Inlet concentration of B, mol/L.
    pub cbin: f64,
    /// Inlet temperature, K.
    pub ctin: f64,
    /// Inlet temperature diffusion intensity, K.
    pub sigma_t: f64,
    /// Measurement noise variance, K².
    pub rv: f64,
    /// mL/min
    pub f_min: f64,
    /// mL/min
    pub f_max: f64,
    /// Sample time, s.
    pub ts: f64,
}

impl Default for ReactorParameters {
    /// The calibrated parameter set (see [`super::calibrate`]): upper-branch
    /// steady state 59.30 °C at 630 mL/min, and a one-second discrete pole of
    /// 0.9572 there.
    fn default() -> Self {
        ReactorParameters { k0: CALIBRATED_K0, beta: CALIBRATED_BETA, ..Self::calibration_start() }
    }
}

const CALIBRATED_K0: f64 = 4.828_738_692_548_946e10;
const CALIBRATED_BETA: f64 = 133.766_627_587_463_72;

impl ReactorParameters {
    /// Starting point for calibration: the usual laboratory set for this
    /// reactor (0.105 L, Ea/R = 8500 K, ln k0 = 24.6, dHr = -560 kJ/mol,
    /// rho cP = 4.186 kJ/(L·K)).
    pub fn calibration_start() -> Self {
        ReactorParameters {
            k0: 24.6_f64.exp(),
            ea_over_r: 8500.0,
            beta: 560.0 / 4.186,
            volume: 0.105,
            cain: 1.6 / 2.0,
            cbin: 2.4 / 2.0,
            ctin: 273.65,
            sigma_t: 5.0,
            rv: 0.1,
            f_min: 0.0,
            f_max: 1000.0,
            ts: 1.0,
        }
    }

    /// `S = [-1, -2, beta]`.
    pub fn stoich_row(&self) -> [f64; 3] {
        [-1.0, -2.0, self.beta]
    }

    pub fn inlet(&self) -> [f64; 3] {
        [self.cain, self.cbin, self.ctin]
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("k0", self.k0),
            ("ea_over_r", self.ea_over_r),
            ("beta", self.beta),
            ("volume", self.volume),
            ("cain", self.cain),
            ("cbin", self.cbin),
            ("ctin", self.ctin),
            ("sigma_t", self.sigma_t),
            ("rv", self.rv),
            ("f_min", self.f_min),
            ("f_max", self.f_max),
            ("ts", self.ts),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::invalid(name, format!("must be finite, got {v}")));
            }
        }
        let positive = [
            ("k0", self.k0),
            ("ea_over_r", self.ea_over_r),
            ("beta", self.beta),
            ("volume", self.volume),
            ("ctin", self.ctin),
            ("ts", self.ts),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        for (name, v) in [("sigma_t", self.sigma_t), ("rv", self.rv), ("cain", self.cain), ("cbin", self.cbin)] {
            if v < 0.0 {
                return Err(Error::invalid(name, format!("must be nonnegative, got {v}")));
            }
        }
        if self.f_min < 0.0 {
            return Err(Error::invalid("f_min", "must be nonnegative"));
        }
        if self.f_min >= self.f_max {
            return Err(Error::invalid("f_max", format!("must exceed f_min ({} >= {})", self.f_min, self.f_max)));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: ReactorParameters = toml::from_str(s).map_err(|e| Error::Parse { what: "reactor parameters", message: e.to_string() })?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat struct of floats always serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }
}
