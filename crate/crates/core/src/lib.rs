//! Monte Carlo tuning of a PI controller for a stochastic adiabatic CSTR and
//! design of an MPC stage cost that reproduces the tuned PI feedback exactly.
//!
//! The pipeline is:
//!
//! 1. [`reactor`]: nonlinear three-state and one-state reactor models, steady
//!    states, linearization and exact discretization.
//! 2. [`sim`]: Euler–Maruyama closed-loop simulation with reproducible
//!    counter-based noise and a parallel ensemble runner.
//! 3. [`pi`] and [`tuning`]: discrete PI with back-calculation anti-windup and
//!    coordinate-wise grid tuning under tracking / move-penalty objectives.
//! 4. [`matching`]: the PI law written as a linear state feedback on an
//!    integrator-augmented model, and the SDP that turns it into MPC weights.
//! 5. [`mpc`]: hard-input / soft-output linear MPC solved as a dense QP.
//! 6. [`config`] and [`compare`]: experiment files and PI against matched MPC
//!    on shared seeds.
//!
//! Units: inside the library temperatures are kelvin, time is seconds and the
//! control input (feed flow) is litres per second. Configuration files speak
//! mL/min and degrees Celsius; see [`units`].

// Range checks are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod config;
pub mod error;
pub mod io;
pub mod matching;
pub mod mpc;
pub mod numerics;
pub mod pi;
pub mod reactor;
pub mod sim;
pub mod tuning;
pub mod units;

pub use error::{Error, Result};
