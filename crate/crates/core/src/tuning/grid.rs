use serde::{Deserialize, Serialize};

use super::objective::TuningObjective;
use crate::error::{Error, Result};
use crate::pi::{PiController, PiGains};
use crate::sim::{run_ensemble, EnsembleOptions, SdeModel, SimConfig};

/// Objective value charged to a path that failed.
pub const FAILED_PATH_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    Kp,
    Ki,
    Kaw,
}

impl Gain {
    pub fn name(self) -> &'static str {
        match self {
            Gain::Kp => "kp",
            Gain::Ki => "ki",
            Gain::Kaw => "kaw",
        }
    }

    pub fn get(self, g: &PiGains) -> f64 {
        match self {
            Gain::Kp => g.kp,
            Gain::Ki => g.ki,
            Gain::Kaw => g.kaw,
        }
    }

    pub fn set(self, g: &PiGains, v: f64) -> PiGains {
        let mut out = *g;
        match self {
            Gain::Kp => out.kp = v,
            Gain::Ki => out.ki = v,
            Gain::Kaw => out.kaw = v,
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    AtOperatingPoint,
    FarFromOperatingPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub gain: Gain,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub paths: usize,
    pub init: InitialState,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::invalid("grid range", format!("need finite lo < hi, got [{}, {}]", self.lo, self.hi)));
        }
        if self.count < 2 {
            return Err(Error::invalid("count", "need at least 2 grid points"));
        }
        if self.paths == 0 {
            return Err(Error::invalid("paths", "need at least 1 path per grid point"));
        }
        Ok(())
    }

    /// `count` equidistant values from `lo` to `hi` inclusive.
    pub fn values(&self) -> Vec<f64> {
        let step = (self.hi - self.lo) / (self.count - 1) as f64;
        (0..self.count).map(|i| if i + 1 == self.count { self.hi } else { self.lo + i as f64 * step }).collect()
    }
}

/// The plant and simulation protocol shared by all grid evaluations.
pub struct TuningSetup<'a, M: SdeModel + ?Sized> {
    pub model: &'a M,
    /// Time grid, substeps and seed base; `x0` is replaced per grid.
    pub sim: SimConfig,
    pub x0_operating: Vec<f64>,
    pub x0_far: Vec<f64>,
    /// Reuse the same seeds at every grid point.
    pub common_random_numbers: bool,
}

impl<M: SdeModel + ?Sized> TuningSetup<'_, M> {
    fn config_for(&self, init: InitialState, seed: u64) -> SimConfig {
        SimConfig {
            seed,
            x0: match init {
                InitialState::AtOperatingPoint => self.x0_operating.clone(),
                InitialState::FarFromOperatingPoint => self.x0_far.clone(),
            },
            ..self.sim.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub value: f64,
    pub mean: f64,
    pub stderr: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub gain: Gain,
    pub curve: Vec<CurvePoint>,
    pub best_index: usize,
    pub best: f64,
}

impl TuneResult {
    pub fn best_mean(&self) -> f64 {
        self.curve[self.best_index].mean
    }

    /// True if the minimum is not at either end of the grid.
    pub fn has_interior_minimum(&self) -> bool {
        self.best_index > 0 && self.best_index + 1 < self.curve.len()
    }
}

/// Mean objective and its standard error over `paths` simulations with the
/// given gains; failed paths count as [`FAILED_PATH_PENALTY`].
pub fn average_objective<M: SdeModel + ?Sized>(
    gains: &PiGains,
    obj: &TuningObjective,
    model: &M,
    config: &SimConfig,
    paths: usize,
) -> Result<CurvePoint> {
    gains.validate()?;
    let opts = EnsembleOptions { objectives: vec![*obj], ..EnsembleOptions::default() };
    let e = run_ensemble(model, || PiController::new(*gains), config, paths, &opts)?;
    let values: Vec<f64> = e.paths.iter().map(|p| p.objectives.first().copied().unwrap_or(FAILED_PATH_PENALTY)).collect();
    let (mean, var) = crate::sim::mean_variance(&values);
    Ok(CurvePoint { value: f64::NAN, mean, stderr: (var / paths as f64).sqrt(), failures: e.summary.n_failed })
}

/// Grid search over one gain with the others fixed at `base`. Ties go to
/// the value of smaller magnitude.
pub fn tune_gain<M: SdeModel + ?Sized>(
    grid: &GridSpec,
    base: &PiGains,
    obj: &TuningObjective,
    setup: &TuningSetup<'_, M>,
) -> Result<TuneResult> {
    grid.validate()?;
    obj.validate()?;
    let mut curve = Vec::with_capacity(grid.count);
    for (i, v) in grid.values().into_iter().enumerate() {
        let seed = if setup.common_random_numbers { setup.sim.seed } else { setup.sim.seed.wrapping_add((i * grid.paths) as u64) };
        let cfg = setup.config_for(grid.init, seed);
        let gains = grid.gain.set(base, v);
        let mut point = average_objective(&gains, obj, setup.model, &cfg, grid.paths)?;
        point.value = v;
        curve.push(point);
    }
    if curve.iter().all(|p| p.failures == grid.paths) {
        return Err(Error::Domain(format!("every path failed at every {} grid point", grid.gain.name())));
    }
    let best_index = argmin_small_magnitude(&curve);
    Ok(TuneResult { gain: grid.gain, best: curve[best_index].value, best_index, curve })
}

fn argmin_small_magnitude(curve: &[CurvePoint]) -> usize {
    let mut best = 0;
    for (i, p) in curve.iter().enumerate().skip(1) {
        let b = &curve[best];
        if p.mean < b.mean || (p.mean == b.mean && p.value.abs() < b.value.abs()) {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunePiResult {
    pub gains: PiGains,
    pub stages: Vec<TuneResult>,
    /// Gains leaving each stage.
    pub stage_gains: Vec<PiGains>,
    /// Mean objective of the incoming gains at each stage, same seeds.
    pub incumbent_means: Vec<f64>,
}

/// Coordinate tuning in the order of `grids` (normally kp, ki, kaw). A
/// stage keeps its incoming gain when no grid value beats it on the stage's
/// seed set, so the averaged objective never increases from stage to stage.
pub fn tune_pi<M: SdeModel + ?Sized>(
    grids: &[GridSpec],
    base: &PiGains,
    obj: &TuningObjective,
    setup: &TuningSetup<'_, M>,
) -> Result<TunePiResult> {
    let mut gains = *base;
    let mut stages = Vec::with_capacity(grids.len());
    let mut incumbent_means = Vec::with_capacity(grids.len());
    let mut stage_gains = Vec::with_capacity(grids.len());
    for grid in grids {
        let r = tune_gain(grid, &gains, obj, setup)?;
        let cfg = setup.config_for(grid.init, setup.sim.seed);
        let incumbent = average_objective(&gains, obj, setup.model, &cfg, grid.paths)?.mean;
        let grid_best = if setup.common_random_numbers {
            r.best_mean()
        } else {
            let g = grid.gain.set(&gains, r.best);
            average_objective(&g, obj, setup.model, &cfg, grid.paths)?.mean
        };
        if grid_best <= incumbent {
            gains = grid.gain.set(&gains, r.best);
        }
        incumbent_means.push(incumbent);
        stage_gains.push(gains);
        stages.push(r);
    }
    Ok(TunePiResult { gains, stages, stage_gains, incumbent_means })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ScalarLinearSde;

    fn linear_setup(m: &ScalarLinearSde, seed: u64) -> TuningSetup<'_, ScalarLinearSde> {
        TuningSetup {
            model: m,
            sim: SimConfig { t0: 0.0, tf: 30.0, ts: 1.0, substeps: 1, seed, x0: vec![] },
            x0_operating: vec![1.0],
            x0_far: vec![5.0],
            common_random_numbers: true,
        }
    }

    fn p_only() -> PiGains {
        PiGains { kp: 0.0, ki: 0.0, kaw: 0.0, u_min: -100.0, u_max: 100.0, u_bar: 0.0, y_bar: 0.0, ts: 1.0 }
    }

    #[test]
    fn grid_values() {
        let g = GridSpec { gain: Gain::Kp, lo: -1.0, hi: 1.0, count: 5, paths: 1, init: InitialState::AtOperatingPoint };
        assert_eq!(g.values(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(GridSpec { count: 1, ..g }.validate().is_err());
        assert!(GridSpec { lo: 1.0, ..g }.validate().is_err());
    }

    #[test]
    fn noiseless_minimizer_is_deadbeat_gain() {
        // x+ = (1 + a) x + b u, u = kp (0 - x): Phi1 is minimal at the
        // deadbeat gain kp = (1 + a) / b, where Phi1 = x0^2.
        let m = ScalarLinearSde { a: -0.1, b: 2.0, s: 0.0, rv: 0.0 };
        let setup = linear_setup(&m, 0);
        let grid = GridSpec { gain: Gain::Kp, lo: 0.0, hi: 0.9, count: 91, paths: 1, init: InitialState::AtOperatingPoint };
        let r = tune_gain(&grid, &p_only(), &TuningObjective::phi1(0.0), &setup).unwrap();
        assert!((r.best - 0.45).abs() < 1e-12, "{}", r.best);
        assert!((r.best_mean() - 1.0).abs() < 1e-12);
        assert!(r.has_interior_minimum());
    }

    #[test]
    fn ties_prefer_small_magnitude() {
        // already at the reference with no noise: every gain gives zero
        let m = ScalarLinearSde { a: -0.1, b: 2.0, s: 0.0, rv: 0.0 };
        let mut setup = linear_setup(&m, 0);
        setup.x0_operating = vec![0.0];
        let grid = GridSpec { gain: Gain::Kp, lo: -0.4, hi: 0.3, count: 8, paths: 2, init: InitialState::AtOperatingPoint };
        let r = tune_gain(&grid, &p_only(), &TuningObjective::phi1(0.0), &setup).unwrap();
        assert!(r.curve.iter().all(|p| p.mean == 0.0));
        assert!(r.best.abs() < 1e-12, "{}", r.best);
    }

    #[test]
    fn deterministic_curves() {
        let m = ScalarLinearSde { a: -0.1, b: 2.0, s: 0.2, rv: 0.01 };
        let setup = linear_setup(&m, 77);
        let grid = GridSpec { gain: Gain::Kp, lo: 0.0, hi: 0.9, count: 10, paths: 8, init: InitialState::AtOperatingPoint };
        let a = tune_gain(&grid, &p_only(), &TuningObjective::phi1(0.0), &setup).unwrap();
        let b = tune_gain(&grid, &p_only(), &TuningObjective::phi1(0.0), &setup).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failed_paths_are_penalized() {
        // a gain that makes the loop explode diverges to non-finite values
        let m = ScalarLinearSde { a: -0.1, b: 2.0, s: 0.0, rv: 0.0 };
        let setup = linear_setup(&m, 0);
        let mut g = p_only();
        g.u_min = -f64::MAX;
        g.u_max = f64::MAX;
        g.kp = 1e3;
        let cfg = setup.config_for(InitialState::AtOperatingPoint, 0);
        let cfg = SimConfig { tf: 300.0, ..cfg };
        let p = average_objective(&g, &TuningObjective::phi1(0.0), &m, &cfg, 3).unwrap();
        assert_eq!(p.failures, 3);
        assert_eq!(p.mean, FAILED_PATH_PENALTY);
    }

    #[test]
    fn coordinate_tuning_is_monotone() {
        let m = ScalarLinearSde { a: -0.1, b: 2.0, s: 0.2, rv: 0.05 };
        let setup = linear_setup(&m, 3);
        let mk = |gain, lo, hi, init| GridSpec { gain, lo, hi, count: 12, paths: 16, init };
        let grids = [
            mk(Gain::Kp, 0.0, 0.8, InitialState::AtOperatingPoint),
            mk(Gain::Ki, 0.0, 0.3, InitialState::AtOperatingPoint),
            mk(Gain::Kaw, 0.0, 1.0, InitialState::FarFromOperatingPoint),
        ];
        let base = PiGains { kp: 0.1, ki: 0.01, kaw: 0.1, u_min: -1.0, u_max: 1.0, ..p_only() };
        let obj = TuningObjective::phi1(0.0);
        let r = tune_pi(&grids, &base, &obj, &setup).unwrap();
        for (i, grid) in grids.iter().enumerate() {
            let cfg = setup.config_for(grid.init, setup.sim.seed);
            let after = average_objective(&r.stage_gains[i], &obj, &m, &cfg, grid.paths).unwrap().mean;
            assert!(after <= r.incumbent_means[i], "stage {i}: {after} > {}", r.incumbent_means[i]);
        }
    }
}
