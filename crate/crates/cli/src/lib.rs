//! Command implementations behind the `pimatch` binary. Every command reads
//! one experiment config, writes its outputs plus `manifest.json` into one
//! output directory, and prints a short report.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pimatch::compare::compare_controllers;
use pimatch::config::{Experiment, ExperimentConfig, GainsFile};
use pimatch::io::{self, EnsembleReport, Manifest, SweepRow};
use pimatch::matching::mpc_feedback_of;
use pimatch::pi::PiGains;
use pimatch::reactor::{calibrate, steady_states, CalibrationTargets};
use pimatch::sim::{run_ensemble, simulate_closed_loop, Controller, EnsembleOptions, SimConfig};
use pimatch::tuning::{evaluate_objective, tune_pi, ObjectiveKind};
use pimatch::units::{kelvin_to_celsius, l_per_s_to_ml_per_min, Flow};

#[derive(Debug, Parser)]
#[command(name = "pimatch", version, about = "Monte Carlo PI tuning and matched MPC for a stochastic CSTR")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed base of the noise realizations.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of closed-loop paths (per grid point for `tune`).
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerKind {
    Pi,
    Mpc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Phi1,
    Phi2,
}

impl From<ObjectiveArg> for ObjectiveKind {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Phi1 => ObjectiveKind::Phi1,
            ObjectiveArg::Phi2 => ObjectiveKind::Phi2,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit k0 and beta to the operating-point targets; writes reactor.toml.
    Calibrate,
    /// Steady-state temperatures over the configured flow grid; writes sweep.csv.
    SteadySweep,
    /// One closed-loop path; writes trajectory.csv.
    Simulate {
        #[arg(long, value_enum, default_value = "pi")]
        controller: ControllerKind,
    },
    /// Coordinate grid tuning of kp, ki, kaw; writes gains.toml and curve_*.csv.
    Tune {
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
    },
    /// Matched MPC stage cost for the configured PI gains; writes stage_cost.toml.
    Match,
    /// Closed-loop ensemble; writes ensemble.json.
    Run {
        #[arg(long, value_enum, default_value = "pi")]
        controller: ControllerKind,
    },
    /// PI and matched MPC on identical seeds; writes report.json.
    Compare,
}

/// An experiment with its output directory and manifest.
pub struct Session {
    pub exp: Experiment,
    pub out: PathBuf,
    pub manifest: Manifest,
}

impl Session {
    pub fn open(common: &CommonArgs, command: &str) -> Result<Self> {
        let exp = match &common.config {
            Some(p) => Experiment::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => Experiment::resolve(ExperimentConfig::default(), String::new(), Path::new("."))?,
        };
        let exp = exp.with_overrides(common.seed, common.paths).context("applying command-line overrides")?;
        let out = common.out.clone().unwrap_or_else(|| exp.output_dir());
        std::fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
        let manifest = Manifest::new(command, &exp.source, exp.sim.seed, exp.n_paths);
        Ok(Session { exp, out, manifest })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.manifest.write_file(&self.out, name, bytes).with_context(|| format!("writing {}", self.out.join(name).display()))
    }

    pub fn finish(self) -> Result<()> {
        self.manifest.save(&self.out).context("writing manifest.json")
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate => cmd_calibrate(&cli.common),
        Command::SteadySweep => cmd_steady_sweep(&cli.common),
        Command::Simulate { controller } => cmd_simulate(&cli.common, controller),
        Command::Tune { objective } => cmd_tune(&cli.common, objective),
        Command::Match => cmd_match(&cli.common),
        Command::Run { controller } => cmd_run(&cli.common, controller),
        Command::Compare => cmd_compare(&cli.common),
    }
}

pub fn cmd_calibrate(common: &CommonArgs) -> Result<()> {
    let mut s = Session::open(common, "calibrate")?;
    let op = s.exp.config.operating_point;
    let targets = CalibrationTargets { flow: op.flow_ml_min, ..CalibrationTargets::default() };
    let c = calibrate(&s.exp.params, &targets).context("calibration")?;
    s.write("reactor.toml", c.params.to_toml_string().as_bytes())?;
    println!("k0   = {:e}", c.params.k0);
    println!("beta = {}", c.params.beta);
    println!(
        "T_s  = {:.4} C   (target {:.2} C, residual {:.2e} K)",
        kelvin_to_celsius(c.steady_temperature),
        kelvin_to_celsius(targets.temperature),
        c.steady_temperature - targets.temperature
    );
    println!("A    = {:.6}     (target {}, residual {:.2e})", c.a, targets.a, c.a - targets.a);
    println!("B    = {:.4}    (target {}, residual {:.2e})", c.b, targets.b, c.b - targets.b);
    println!("Newton iterations: {}", c.iterations);
    s.finish()
}

/// Every steady state for each flow, ascending in temperature.
pub fn steady_sweep(exp: &Experiment) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for f in exp.config.sweep.flows() {
        for sp in steady_states(Flow::from_ml_per_min(f), &exp.params).with_context(|| format!("steady states at {f} mL/min"))? {
            rows.push(SweepRow { flow_ml_min: f, temperature_c: kelvin_to_celsius(sp.temperature), stable: sp.stable });
        }
    }
    Ok(rows)
}

pub fn cmd_steady_sweep(common: &CommonArgs) -> Result<()> {
    let mut s = Session::open(common, "steady-sweep")?;
    let rows = steady_sweep(&s.exp)?;
    let mut buf = Vec::new();
    io::write_sweep_csv(&rows, &mut buf)?;
    s.write("sweep.csv", &buf)?;
    println!("{} steady states over {} flows", rows.len(), s.exp.config.sweep.count);
    s.finish()
}

fn simulate_with<C: Controller>(exp: &Experiment, mut c: C, cfg: &SimConfig) -> Result<pimatch::sim::SimRecord> {
    Ok(simulate_closed_loop(&exp.model, &mut c, cfg)?)
}

pub fn cmd_simulate(common: &CommonArgs, controller: ControllerKind) -> Result<()> {
    let mut s = Session::open(common, "simulate")?;
    let exp = &s.exp;
    let gains = exp.gains;
    let mut rec = match controller {
        ControllerKind::Pi => simulate_with(exp, exp.pi_controller(&gains)?, &exp.sim)?,
        ControllerKind::Mpc => {
            let cost = exp.stage_cost(&gains)?;
            simulate_with(exp, exp.mpc_controller(&gains, cost)?, &exp.sim)?
        }
    };
    for obj in exp.both_objectives() {
        rec.objectives.insert(obj.name().to_string(), evaluate_objective(&rec, &obj));
    }
    let below = exp.violation_threshold.map(|t| rec.fraction_below(t));
    let mut buf = Vec::new();
    io::write_record_csv(&rec, &mut buf)?;
    s.write("trajectory.csv", &buf)?;
    for (k, v) in &rec.objectives {
        println!("{k} = {v:.6e}");
    }
    if let Some(b) = below {
        println!("time below threshold: {:.3} %", 100.0 * b);
    }
    s.finish()
}

fn gains_file(g: &PiGains) -> GainsFile {
    GainsFile { kp: g.kp, ki: g.ki, kaw: g.kaw }
}

pub fn cmd_tune(common: &CommonArgs, objective: Option<ObjectiveArg>) -> Result<()> {
    let mut s = Session::open(common, "tune")?;
    let exp = &s.exp;
    let kind = objective.map(ObjectiveKind::from).unwrap_or(exp.config.objective.kind);
    let obj = exp.objective(kind);
    let mut grids = exp.grids();
    if let Some(n) = common.paths {
        for g in &mut grids {
            g.paths = n;
        }
    }
    if grids.is_empty() {
        bail!("no tuning grids configured");
    }
    let setup = exp.tuning_setup();
    let result = tune_pi(&grids, &exp.gains, &obj, &setup).context("tuning")?;
    let mut files = Vec::new();
    for stage in &result.stages {
        let mut buf = Vec::new();
        io::write_curve_csv(stage, &mut buf)?;
        files.push((format!("curve_{}.csv", stage.gain.name()), buf));
        println!(
            "{:<4} best {:+.5e}  mean {:.5e}  (grid index {} of {}{})",
            stage.gain.name(),
            stage.best,
            stage.best_mean(),
            stage.best_index,
            stage.curve.len(),
            if stage.has_interior_minimum() { "" } else { ", at an end" }
        );
    }
    let g = result.gains;
    let gains_text = gains_file(&g).to_toml_string();
    let json = io::tune_to_json(&result)?;
    for (name, buf) in files {
        s.write(&name, &buf)?;
    }
    s.write("gains.toml", gains_text.as_bytes())?;
    s.write("tune.json", json.as_bytes())?;
    println!("tuned ({}): kp = {:e}, ki = {:e}, kaw = {:e}", obj.name(), g.kp, g.ki, g.kaw);
    s.finish()
}

pub fn cmd_match(common: &CommonArgs) -> Result<()> {
    let mut s = Session::open(common, "match")?;
    let exp = &s.exp;
    let gains = exp.gains;
    let aug = exp.augmented(&gains)?;
    let m = exp.matching(&gains).context("matching SDP")?;
    let (a, b) = aug.model(m.cost.pair);
    let horizon = exp.mpc.horizon;
    let k = mpc_feedback_of(&m.cost, a, b, horizon)?;
    let gap = (&k - &aug.k_hat).amax();
    let text = m.cost.to_toml_string()?;
    s.write("stage_cost.toml", text.as_bytes())?;
    println!("beta = {:.6e} (infeasible below {:.6e})", m.cost.beta, m.beta_lower);
    println!(
        "certificate: lambda_min(H) - 1 = {:.2e}, lambda_max(H) - beta = {:.2e}",
        m.certificate.min_eig_lower, m.certificate.max_eig_upper
    );
    println!("max |K_mpc(N = {horizon}) - K_pi| = {gap:.3e}");
    s.finish()
}

pub fn cmd_run(common: &CommonArgs, controller: ControllerKind) -> Result<()> {
    let mut s = Session::open(common, "run")?;
    let exp = &s.exp;
    let gains = exp.gains;
    let opts =
        EnsembleOptions { objectives: exp.both_objectives(), z_threshold: exp.violation_threshold, keep_records: false, bands: true };
    let (name, e) = match controller {
        ControllerKind::Pi => ("pi", run_ensemble(&exp.model, || exp.pi_controller(&gains), &exp.sim, exp.n_paths, &opts)?),
        ControllerKind::Mpc => {
            let proto = exp.mpc_controller(&gains, exp.stage_cost(&gains)?)?;
            ("mpc", run_ensemble(&exp.model, || Ok(proto.clone()), &exp.sim, exp.n_paths, &opts)?)
        }
    };
    let report = EnsembleReport { controller: name.to_string(), summary: e.summary.clone(), paths: e.paths };
    let json = io::ensemble_to_json(&report)?;
    s.write("ensemble.json", json.as_bytes())?;
    for o in &report.summary.objectives {
        println!("{} mean {:.5e}  stderr {:.3e}  (n = {})", o.name, o.mean, o.stderr, o.n);
    }
    if let Some(f) = report.summary.fraction_below_mean {
        println!("time below threshold: {:.3} %", 100.0 * f);
    }
    println!("failed paths: {} of {}", report.summary.n_failed, report.summary.n_paths);
    s.finish()
}

pub fn cmd_compare(common: &CommonArgs) -> Result<()> {
    let mut s = Session::open(common, "compare")?;
    let exp = &s.exp;
    let gains = exp.gains;
    let cost = exp.stage_cost(&gains)?;
    let r = compare_controllers(exp, &gains, cost, true).context("comparing PI and MPC")?;
    let range = (l_per_s_to_ml_per_min(gains.u_min), l_per_s_to_ml_per_min(gains.u_max));
    s.write("report.json", r.to_json()?.as_bytes())?;
    print!("{}", r.summary_text());
    println!("input range {:.0}..{:.0} mL/min", range.0, range.1);
    s.finish()
}
