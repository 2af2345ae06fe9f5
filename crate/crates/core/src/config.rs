//! Experiment configuration: one TOML file per experiment.
//!
//! Flows are given in mL/min and temperatures in °C; PI gains map a
//! temperature error in K to a flow in L/s. Everything is converted to the
//! internal units when the file is resolved into an [`Experiment`].
//!
//! ```toml
//! output_dir = "out"
//! reactor_file = "reactor.toml"      # optional, relative to this file
//!
//! [operating_point]
//! flow_ml_min = 630.0
//! branch_hint_c = 60.0
//!
//! [sim]
//! tf = 300.0
//! seed = 42
//! n_paths = 100
//!
//! [pi]
//! kp = -4.0e-4
//! ki = -4.9091e-5
//! kaw = 0.11636
//!
//! [mpc]
//! horizon = 50
//! z_min_c = 59.0
//!
//! [objective]
//! kind = "phi2"
//! q_du = 5000.0
//!
//! [[tuning.grid]]
//! gain = "kp"
//! lo = -4.0e-3
//! hi = 0.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{build_augmented, match_pi, AugmentedPlant, Matching, ModelPair, SoftWeights, StageCost};
use crate::mpc::{MpcController, MpcSettings};
use crate::numerics::LmiOptions;
use crate::pi::{PiController, PiGains};
use crate::reactor::{one_state_model, ReactorParameters, StateSpace};
use crate::sim::{Cstr3Sde, SimConfig};
use crate::tuning::{Gain, GridSpec, InitialState, ObjectiveKind, TuningObjective, TuningSetup, DEFAULT_DU_SCALE};
use crate::units::{celsius_to_kelvin, ml_per_min_to_l_per_s, Flow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Reactor parameter file; the calibrated defaults when absent.
    #[serde(default)]
    pub reactor_file: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub operating_point: OperatingPointSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub pi: PiSection,
    #[serde(default)]
    pub mpc: MpcSection,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub tuning: TuningSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            reactor_file: None,
            output_dir: default_output_dir(),
            operating_point: OperatingPointSection::default(),
            sim: SimSection::default(),
            pi: PiSection::default(),
            mpc: MpcSection::default(),
            objective: ObjectiveSection::default(),
            tuning: TuningSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatingPointSection {
    pub flow_ml_min: f64,
    /// Start of the steady-state search; selects the branch.
    pub branch_hint_c: f64,
}

impl Default for OperatingPointSection {
    fn default() -> Self {
        OperatingPointSection { flow_ml_min: 630.0, branch_hint_c: 60.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub t0: f64,
    pub tf: f64,
    pub ts: f64,
    pub substeps: usize,
    pub seed: u64,
    pub n_paths: usize,
    /// Initial temperature on the reaction manifold; the operating point
    /// when absent.
    pub initial_temperature_c: Option<f64>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection { t0: 0.0, tf: 300.0, ts: 1.0, substeps: 10, seed: 42, n_paths: 100, initial_temperature_c: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PiSection {
    /// L/s per K.
    pub kp: f64,
    /// L/s per (K s).
    pub ki: f64,
    /// 1/s.
    pub kaw: f64,
    pub u_min_ml_min: f64,
    pub u_max_ml_min: f64,
    /// A gains file (`kp`, `ki`, `kaw`) written by `tune`; overrides the
    /// three gains above.
    pub gains_file: Option<PathBuf>,
}

impl Default for PiSection {
    fn default() -> Self {
        PiSection { kp: -5.0e-4, ki: -5.0e-4, kaw: 0.1, u_min_ml_min: 0.0, u_max_ml_min: 1000.0, gains_file: None }
    }
}

/// The three tuned gains, as written by `tune`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsFile {
    pub kp: f64,
    pub ki: f64,
    pub kaw: f64,
}

impl GainsFile {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse { what: "gains file", message: e.to_string() })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("three floats serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcSection {
    pub horizon: usize,
    pub z_min_c: Option<f64>,
    pub z_max_c: Option<f64>,
    pub soft: SoftWeights,
    pub pair: ModelPair,
    /// Stage-cost file written by `match`; solved afresh when absent.
    pub cost_file: Option<PathBuf>,
    pub lmi_tol: f64,
}

impl Default for MpcSection {
    fn default() -> Self {
        MpcSection {
            horizon: 50,
            z_min_c: Some(59.0),
            z_max_c: None,
            soft: SoftWeights::default(),
            pair: ModelPair::default(),
            cost_file: None,
            lmi_tol: LmiOptions::default().tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    pub kind: ObjectiveKind,
    pub q_z: f64,
    pub q_du: f64,
    /// Multiplies input moves in L/s before weighting; 60 states `q_du`
    /// per (L/min)².
    pub du_scale: f64,
    /// Threshold of the time-below fraction; `mpc.z_min_c` when absent.
    pub violation_threshold_c: Option<f64>,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection { kind: ObjectiveKind::Phi2, q_z: 1.0, q_du: 5.0e3, du_scale: DEFAULT_DU_SCALE, violation_threshold_c: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub gain: Gain,
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_grid_count")]
    pub count: usize,
    #[serde(default = "default_grid_paths")]
    pub paths: usize,
    /// Defaults to far-from-operating-point for `kaw`, else at the
    /// operating point.
    #[serde(default)]
    pub init: Option<InitialState>,
}

fn default_grid_count() -> usize {
    100
}

fn default_grid_paths() -> usize {
    1000
}

impl GridSection {
    pub fn to_spec(&self) -> GridSpec {
        GridSpec {
            gain: self.gain,
            lo: self.lo,
            hi: self.hi,
            count: self.count,
            paths: self.paths,
            init: self.init.unwrap_or(match self.gain {
                Gain::Kaw => InitialState::FarFromOperatingPoint,
                _ => InitialState::AtOperatingPoint,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningSection {
    pub common_random_numbers: bool,
    /// Initial temperature of the far-from-operating-point runs.
    pub far_temperature_c: f64,
    pub grid: Vec<GridSection>,
}

impl Default for TuningSection {
    fn default() -> Self {
        TuningSection {
            common_random_numbers: true,
            far_temperature_c: 30.0,
            grid: vec![
                GridSection { gain: Gain::Kp, lo: -4.0e-3, hi: 0.0, count: 100, paths: 1000, init: None },
                GridSection { gain: Gain::Ki, lo: -1.0e-3, hi: 0.0, count: 100, paths: 1000, init: None },
                GridSection { gain: Gain::Kaw, lo: 0.0, hi: 1.0, count: 100, paths: 1000, init: None },
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub f_lo_ml_min: f64,
    pub f_hi_ml_min: f64,
    pub count: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { f_lo_ml_min: 10.0, f_hi_ml_min: 1000.0, count: 100 }
    }
}

impl SweepSection {
    /// Equidistant flows in mL/min; empty when `count` is 0.
    pub fn flows(&self) -> Vec<f64> {
        match self.count {
            0 => vec![],
            1 => vec![self.f_lo_ml_min],
            n => (0..n).map(|i| self.f_lo_ml_min + (self.f_hi_ml_min - self.f_lo_ml_min) * i as f64 / (n - 1) as f64).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse { what: "experiment config", message: e.to_string() })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse { what: "experiment config", message: e.to_string() })
    }
}

/// A loaded and validated experiment in internal units.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    /// The file text the experiment was read from (hashed into manifests).
    pub source: String,
    /// Directory relative paths in the config are resolved against.
    pub base_dir: PathBuf,
    pub params: ReactorParameters,
    pub model: Cstr3Sde,
    /// One-state linear model at the operating point.
    pub plant: StateSpace,
    pub gains: PiGains,
    pub sim: SimConfig,
    pub n_paths: usize,
    pub mpc: MpcSettings,
    /// Threshold of the time-below fraction, K.
    pub violation_threshold: Option<f64>,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse { what: "experiment config", message: format!("{}: {e}", path.display()) })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str_in(&text, &base)
    }

    /// Parses `text`, resolving relative file references against `base_dir`.
    pub fn from_str_in(text: &str, base_dir: &Path) -> Result<Self> {
        let config = ExperimentConfig::from_toml_str(text)?;
        Self::resolve(config, text.to_string(), base_dir)
    }

    pub fn resolve(config: ExperimentConfig, source: String, base_dir: &Path) -> Result<Self> {
        let base_dir = base_dir.to_path_buf();
        let resolve_path = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };

        let params = match &config.reactor_file {
            Some(f) => ReactorParameters::load(&resolve_path(f))?,
            None => ReactorParameters::default(),
        };
        params.validate()?;
        let s = &config.sim;
        if s.ts != params.ts {
            return Err(Error::invalid("sim.ts", format!("sample time {} s differs from the reactor file's ts = {} s", s.ts, params.ts)));
        }
        if s.n_paths == 0 {
            return Err(Error::invalid("sim.n_paths", "must be at least 1"));
        }
        let op = &config.operating_point;
        let plant = one_state_model(&params, Flow::from_ml_per_min(op.flow_ml_min), celsius_to_kelvin(op.branch_hint_c))?;
        let model = Cstr3Sde::new(params.clone())?;
        let x0 = match s.initial_temperature_c {
            Some(t) => model.state_at(celsius_to_kelvin(t)),
            None => model.state_at(plant.y_s[0]),
        };
        let sim = SimConfig { t0: s.t0, tf: s.tf, ts: s.ts, substeps: s.substeps, seed: s.seed, x0 };
        sim.validate()?;

        let pi = &config.pi;
        let (kp, ki, kaw) = match &pi.gains_file {
            Some(f) => {
                let path = resolve_path(f);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Parse { what: "gains file", message: format!("{}: {e}", path.display()) })?;
                let g = GainsFile::from_toml_str(&text)?;
                (g.kp, g.ki, g.kaw)
            }
            None => (pi.kp, pi.ki, pi.kaw),
        };
        let gains = PiGains {
            kp,
            ki,
            kaw,
            u_min: ml_per_min_to_l_per_s(pi.u_min_ml_min),
            u_max: ml_per_min_to_l_per_s(pi.u_max_ml_min),
            u_bar: plant.u_s[0],
            y_bar: plant.y_s[0],
            ts: s.ts,
        };
        gains.validate()?;
        if !(gains.u_min <= gains.u_bar && gains.u_bar <= gains.u_max) {
            return Err(Error::invalid("pi.u_min_ml_min/u_max_ml_min", "operating flow lies outside the input bounds"));
        }

        let m = &config.mpc;
        if m.horizon == 0 {
            return Err(Error::invalid("mpc.horizon", "must be at least 1"));
        }
        m.soft.validate()?;
        let mpc = MpcSettings {
            horizon: m.horizon,
            u_min: gains.u_min,
            u_max: gains.u_max,
            z_min: m.z_min_c.map(celsius_to_kelvin),
            z_max: m.z_max_c.map(celsius_to_kelvin),
        };
        if let (Some(lo), Some(hi)) = (mpc.z_min, mpc.z_max) {
            if !(lo < hi) {
                return Err(Error::invalid("mpc.z_max_c", "must exceed z_min_c"));
            }
        }
        if !(m.lmi_tol > 0.0) {
            return Err(Error::invalid("mpc.lmi_tol", "must be positive"));
        }

        let o = &config.objective;
        for (name, v) in [("objective.q_z", o.q_z), ("objective.q_du", o.q_du), ("objective.du_scale", o.du_scale)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        for g in &config.tuning.grid {
            g.to_spec().validate()?;
        }
        let sw = &config.sweep;
        if sw.count > 0 && !(sw.f_lo_ml_min > 0.0 && sw.f_lo_ml_min <= sw.f_hi_ml_min) {
            return Err(Error::invalid("sweep", "need 0 < f_lo_ml_min <= f_hi_ml_min"));
        }

        let violation_threshold = o.violation_threshold_c.or(m.z_min_c).map(celsius_to_kelvin);
        Ok(Experiment { n_paths: s.n_paths, config, source, base_dir, params, model, plant, gains, sim, mpc, violation_threshold })
    }

    /// Output directory, resolved against the config file's directory.
    pub fn output_dir(&self) -> PathBuf {
        let o = &self.config.output_dir;
        if o.is_absolute() {
            o.clone()
        } else {
            self.base_dir.join(o)
        }
    }

    pub fn objective(&self, kind: ObjectiveKind) -> TuningObjective {
        let o = &self.config.objective;
        TuningObjective {
            kind,
            q_z: o.q_z,
            q_du: match kind {
                ObjectiveKind::Phi1 => 0.0,
                ObjectiveKind::Phi2 => o.q_du,
            },
            du_scale: o.du_scale,
            z_ref: self.plant.y_s[0],
            u_ref: self.plant.u_s[0],
        }
    }

    /// Φ₁ and Φ₂, in that order.
    pub fn both_objectives(&self) -> Vec<TuningObjective> {
        vec![self.objective(ObjectiveKind::Phi1), self.objective(ObjectiveKind::Phi2)]
    }

    pub fn grids(&self) -> Vec<GridSpec> {
        self.config.tuning.grid.iter().map(GridSection::to_spec).collect()
    }

    pub fn tuning_setup(&self) -> TuningSetup<'_, Cstr3Sde> {
        TuningSetup {
            model: &self.model,
            sim: self.sim.clone(),
            x0_operating: self.model.state_at(self.plant.y_s[0]),
            x0_far: self.model.state_at(celsius_to_kelvin(self.config.tuning.far_temperature_c)),
            common_random_numbers: self.config.tuning.common_random_numbers,
        }
    }

    pub fn lmi_options(&self) -> LmiOptions {
        LmiOptions { tol: self.config.mpc.lmi_tol, ..LmiOptions::default() }
    }

    pub fn augmented(&self, gains: &PiGains) -> Result<AugmentedPlant> {
        build_augmented(&self.plant, gains)
    }

    /// Solves the matching problem for `gains` with the configured soft weights.
    pub fn matching(&self, gains: &PiGains) -> Result<Matching> {
        let aug = self.augmented(gains)?;
        let mut m = match_pi(&aug, self.config.mpc.pair, &self.lmi_options())?;
        m.cost.soft = self.config.mpc.soft;
        Ok(m)
    }

    /// The configured stage-cost file, or a fresh matching for `gains`.
    pub fn stage_cost(&self, gains: &PiGains) -> Result<StageCost> {
        match &self.config.mpc.cost_file {
            Some(f) => {
                let path = if f.is_absolute() { f.clone() } else { self.base_dir.join(f) };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Parse { what: "stage-cost file", message: format!("{}: {e}", path.display()) })?;
                let cost = StageCost::from_toml_str(&text)?;
                cost.validate()?;
                Ok(cost)
            }
            None => Ok(self.matching(gains)?.cost),
        }
    }

    pub fn pi_controller(&self, gains: &PiGains) -> Result<PiController> {
        PiController::new(*gains)
    }

    pub fn mpc_controller(&self, gains: &PiGains, cost: StageCost) -> Result<MpcController> {
        let aug = self.augmented(gains)?;
        MpcController::new(&self.plant, &aug, cost, &self.mpc)
    }

    /// Simulation settings with the seed and path count overridden.
    pub fn with_overrides(mut self, seed: Option<u64>, n_paths: Option<usize>) -> Result<Self> {
        if let Some(s) = seed {
            self.sim.seed = s;
        }
        if let Some(n) = n_paths {
            if n == 0 {
                return Err(Error::invalid("paths", "must be at least 1"));
            }
            self.n_paths = n;
        }
        Ok(self)
    }
}

/// Model pair names used on the command line and in files.
pub fn parse_pair(s: &str) -> Result<ModelPair> {
    match s {
        "anti-windup" => Ok(ModelPair::AntiWindup),
        "plain" => Ok(ModelPair::Plain),
        other => Err(Error::invalid("pair", format!("unknown model pair `{other}`"))),
    }
}
