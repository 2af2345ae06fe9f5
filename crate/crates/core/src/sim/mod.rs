//! Stochastic closed-loop simulation: Euler-Maruyama integration between
//! samples, noisy measurements at the sampling instants, and parallel
//! ensembles with per-path reproducible noise.

mod closed_loop;
mod ensemble;
mod noise;
mod sde;

pub use closed_loop::{simulate_closed_loop, ConstantInput, ControlAction, Controller, SimConfig, SimRecord};
pub use ensemble::{
    mean_variance, path_seed, quantile_bands, quantile_sorted, run_ensemble, Bands, Ensemble, EnsembleOptions, EnsembleSummary,
    ObjectiveStats, PathOutcome, BAND_PROBABILITIES,
};
pub use noise::{NoiseStream, MEASUREMENT_STREAM, PROCESS_STREAM};
pub use sde::{em_step, Cstr1Sde, Cstr3Sde, ScalarLinearSde, SdeModel};
