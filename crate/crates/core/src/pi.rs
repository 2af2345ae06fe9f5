//! Discrete PI control with input clipping and back-calculation anti-windup:
//!
//! ```text
//!     e     = y_ref - y
//!     P     = kP e
//!     I     = I_hat_prev + ts kI e
//!     u_hat = u_bar + P + I
//!     u     = clip(u_hat, u_min, u_max)
//!     I_aw  = ts kaw (u - u_hat)
//!     I_hat = I + I_aw
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{ControlAction, Controller};

/// Gains and operating targets. Inputs are in L/s, outputs in K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
    pub kaw: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub u_bar: f64,
    pub y_bar: f64,
    pub ts: f64,
}

impl PiGains {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kp", self.kp),
            ("ki", self.ki),
            ("kaw", self.kaw),
            ("u_min", self.u_min),
            ("u_max", self.u_max),
            ("u_bar", self.u_bar),
            ("y_bar", self.y_bar),
            ("ts", self.ts),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(name, format!("must be finite, got {v}")));
            }
        }
        if self.u_min >= self.u_max {
            return Err(Error::invalid("u_max", format!("must exceed u_min ({} >= {})", self.u_min, self.u_max)));
        }
        if self.ts <= 0.0 {
            return Err(Error::invalid("ts", "must be positive"));
        }
        Ok(())
    }

    pub fn with_gains(self, kp: f64, ki: f64, kaw: f64) -> Self {
        PiGains { kp, ki, kaw, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PiState {
    /// Anti-windup corrected integral from the previous step.
    pub integrator: f64,
}

/// All intermediate quantities of one PI update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiStep {
    pub error: f64,
    pub proportional: f64,
    pub integral: f64,
    pub unclipped: f64,
    pub u: f64,
    pub anti_windup: f64,
    pub next: PiState,
}

pub fn pi_step(state: PiState, y: f64, gains: &PiGains) -> PiStep {
    let error = gains.y_bar - y;
    let proportional = gains.kp * error;
    let integral = state.integrator + gains.ts * gains.ki * error;
    let unclipped = gains.u_bar + proportional + integral;
    let u = unclipped.clamp(gains.u_min, gains.u_max);
    let anti_windup = gains.ts * gains.kaw * (u - unclipped);
    PiStep { error, proportional, integral, unclipped, u, anti_windup, next: PiState { integrator: integral + anti_windup } }
}

/// [`pi_step`] with its own integrator, for closed-loop simulation.
#[derive(Debug, Clone)]
pub struct PiController {
    gains: PiGains,
    state: PiState,
}

impl PiController {
    pub fn new(gains: PiGains) -> Result<Self> {
        gains.validate()?;
        Ok(PiController { gains, state: PiState::default() })
    }

    pub fn gains(&self) -> &PiGains {
        &self.gains
    }

    pub fn state(&self) -> PiState {
        self.state
    }
}

impl Controller for PiController {
    fn step(&mut self, _t: f64, y: f64) -> Result<ControlAction> {
        if !y.is_finite() {
            return Err(Error::NonFinite("PI measurement"));
        }
        let s = pi_step(self.state, y, &self.gains);
        self.state = s.next;
        Ok(ControlAction { u: s.u, integrator: s.next.integrator, slack_lo: 0.0, slack_hi: 0.0 })
    }

    fn reset(&mut self) {
        self.state = PiState::default();
    }
}
