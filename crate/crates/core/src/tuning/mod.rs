//! Monte Carlo grid tuning of PI gains.

mod grid;
mod objective;

pub use grid::{
    average_objective, tune_gain, tune_pi, CurvePoint, Gain, GridSpec, InitialState, TunePiResult, TuneResult, TuningSetup,
    FAILED_PATH_PENALTY,
};
pub use objective::{evaluate_objective, ObjectiveKind, TuningObjective, DEFAULT_DU_SCALE};
