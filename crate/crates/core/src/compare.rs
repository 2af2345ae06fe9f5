//! PI against its matched MPC on identical seed sets.

use serde::{Deserialize, Serialize};

use crate::config::Experiment;
use crate::error::{Error, Result};
use crate::matching::StageCost;
use crate::pi::PiGains;
use crate::sim::{run_ensemble, Bands, Ensemble, EnsembleOptions, ObjectiveStats, PathOutcome};
use crate::units::kelvin_to_celsius;

/// Closed-loop statistics of one controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerStats {
    pub controller: String,
    pub n_failed: usize,
    pub phi1: ObjectiveStats,
    pub phi2: ObjectiveStats,
    /// Mean fraction of samples with `z` below the threshold.
    pub fraction_below: Option<f64>,
    pub bands: Option<Bands>,
    pub paths: Vec<PathOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareReport {
    pub seed_base: u64,
    pub n_paths: usize,
    pub threshold_c: Option<f64>,
    pub pi: ControllerStats,
    pub mpc: ControllerStats,
    /// Largest pointwise gap between the PI and MPC trajectories of the same
    /// seed, over all paths that both completed.
    pub max_abs_u_gap: f64,
    pub max_abs_z_gap: f64,
}

impl CompareReport {
    /// `mpc / pi` of the mean time-below fraction.
    pub fn violation_ratio(&self) -> Option<f64> {
        match (self.pi.fraction_below, self.mpc.fraction_below) {
            (Some(p), Some(m)) if p > 0.0 => Some(m / p),
            _ => None,
        }
    }

    /// `(mpc - pi) / pi` of the mean objectives `(phi1, phi2)`.
    pub fn relative_objective_change(&self) -> (f64, f64) {
        ((self.mpc.phi1.mean - self.pi.phi1.mean) / self.pi.phi1.mean, (self.mpc.phi2.mean - self.pi.phi2.mean) / self.pi.phi2.mean)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse { what: "compare report", message: e.to_string() })
    }

    /// Human-readable summary in °C and percent.
    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let thr = self.threshold_c.map(|t| format!("{t:.2} C")).unwrap_or_else(|| "-".into());
        s.push_str(&format!("paths {}  seed base {}  threshold {thr}\n", self.n_paths, self.seed_base));
        s.push_str(&format!("{:<6} {:>12} {:>12} {:>12} {:>8}\n", "", "phi1", "phi2", "below [%]", "failed"));
        for c in [&self.pi, &self.mpc] {
            let below = c.fraction_below.map(|f| format!("{:.3}", 100.0 * f)).unwrap_or_else(|| "-".into());
            s.push_str(&format!("{:<6} {:>12.4e} {:>12.4e} {:>12} {:>8}\n", c.controller, c.phi1.mean, c.phi2.mean, below, c.n_failed));
        }
        s.push_str(&format!("max |u_pi - u_mpc| = {:.3e} L/s, max |z_pi - z_mpc| = {:.3e} K\n", self.max_abs_u_gap, self.max_abs_z_gap));
        s
    }
}

fn stats(name: &str, e: &Ensemble, bands: bool) -> ControllerStats {
    ControllerStats {
        controller: name.to_string(),
        n_failed: e.summary.n_failed,
        phi1: e.summary.objectives[0].clone(),
        phi2: e.summary.objectives[1].clone(),
        fraction_below: e.summary.fraction_below_mean,
        bands: if bands { e.summary.bands.clone() } else { None },
        paths: e.paths.clone(),
    }
}

/// Runs PI with `gains` and the MPC with `cost` on the experiment's seed set.
pub fn compare_controllers(exp: &Experiment, gains: &PiGains, cost: StageCost, bands: bool) -> Result<CompareReport> {
    let opts = EnsembleOptions { objectives: exp.both_objectives(), z_threshold: exp.violation_threshold, keep_records: true, bands };
    let pi = run_ensemble(&exp.model, || exp.pi_controller(gains), &exp.sim, exp.n_paths, &opts)?;
    let proto = exp.mpc_controller(gains, cost)?;
    let mpc = run_ensemble(&exp.model, || Ok(proto.clone()), &exp.sim, exp.n_paths, &opts)?;

    let (mut du, mut dz) = (0.0_f64, 0.0_f64);
    for a in &pi.records {
        if let Some(b) = mpc.records.iter().find(|r| r.seed == a.seed) {
            for (x, y) in a.u.iter().zip(&b.u) {
                du = du.max((x - y).abs());
            }
            for (x, y) in a.z.iter().zip(&b.z) {
                dz = dz.max((x - y).abs());
            }
        }
    }
    Ok(CompareReport {
        seed_base: exp.sim.seed,
        n_paths: exp.n_paths,
        threshold_c: exp.violation_threshold.map(kelvin_to_celsius),
        pi: stats("pi", &pi, bands),
        mpc: stats("mpc", &mpc, bands),
        max_abs_u_gap: du,
        max_abs_z_gap: dz,
    })
}
