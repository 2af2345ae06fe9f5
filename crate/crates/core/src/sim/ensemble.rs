use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::closed_loop::{simulate_closed_loop, Controller, SimConfig, SimRecord};
use super::sde::SdeModel;
use crate::error::{Error, Result};
use crate::tuning::{evaluate_objective, TuningObjective};

/// Lower and upper probability of the pointwise bands.
pub const BAND_PROBABILITIES: (f64, f64) = (0.025, 0.975);

#[derive(Debug, Clone, Default)]
pub struct EnsembleOptions {
    pub objectives: Vec<TuningObjective>,
    /// Threshold for the time-below fraction, K.
    pub z_threshold: Option<f64>,
    /// Keep every successful record in [`Ensemble::records`].
    pub keep_records: bool,
    /// Compute pointwise quantile bands of `z` and `u`.
    pub bands: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    pub index: usize,
    pub seed: u64,
    /// One value per requested objective, empty for failed paths.
    pub objectives: Vec<f64>,
    pub fraction_below: Option<f64>,
    pub error: Option<String>,
}

impl PathOutcome {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveStats {
    pub name: String,
    #[serde(with = "crate::io::serde_nan")]
    pub mean: f64,
    #[serde(with = "crate::io::serde_nan")]
    pub variance: f64,
    #[serde(with = "crate::io::serde_nan")]
    pub stderr: f64,
    pub n: usize,
}

impl ObjectiveStats {
    pub fn from_samples(name: &str, xs: &[f64]) -> Self {
        let (mean, variance) = mean_variance(xs);
        let n = xs.len();
        ObjectiveStats { name: name.to_string(), mean, variance, stderr: if n > 0 { (variance / n as f64).sqrt() } else { f64::NAN }, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub t: Vec<f64>,
    pub z_mean: Vec<f64>,
    pub z_lo: Vec<f64>,
    pub z_median: Vec<f64>,
    pub z_hi: Vec<f64>,
    pub u_mean: Vec<f64>,
    pub u_lo: Vec<f64>,
    pub u_median: Vec<f64>,
    pub u_hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub seed_base: u64,
    pub n_paths: usize,
    pub n_failed: usize,
    pub objectives: Vec<ObjectiveStats>,
    pub z_threshold: Option<f64>,
    /// Mean over successful paths of the fraction of samples below the threshold.
    pub fraction_below_mean: Option<f64>,
    pub bands: Option<Bands>,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub summary: EnsembleSummary,
    pub paths: Vec<PathOutcome>,
    pub records: Vec<SimRecord>,
}

/// Seed of path `index`.
pub fn path_seed(seed_base: u64, index: usize) -> u64 {
    seed_base.wrapping_add(index as u64)
}

/// Runs `n_paths` closed loops with seeds `config.seed + i`, one fresh
/// controller per path. Paths run on the rayon pool; results are reduced
/// in path order so the summary does not depend on the schedule. Failed
/// paths are counted and left out of every statistic.
pub fn run_ensemble<M, C, F>(model: &M, factory: F, config: &SimConfig, n_paths: usize, opts: &EnsembleOptions) -> Result<Ensemble>
where
    M: SdeModel + ?Sized,
    C: Controller,
    F: Fn() -> Result<C> + Sync,
{
    if n_paths == 0 {
        return Err(Error::invalid("n_paths", "must be at least 1"));
    }
    config.validate()?;
    let keep = opts.keep_records || opts.bands;
    let results: Vec<(PathOutcome, Option<SimRecord>)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let seed = path_seed(config.seed, i);
            let cfg = SimConfig { seed, ..config.clone() };
            let run = factory().and_then(|mut c| simulate_closed_loop(model, &mut c, &cfg));
            match run {
                Ok(mut rec) => {
                    let values: Vec<f64> = opts.objectives.iter().map(|o| evaluate_objective(&rec, o)).collect();
                    for (o, v) in opts.objectives.iter().zip(&values) {
                        rec.objectives.insert(o.name().to_string(), *v);
                    }
                    let outcome = PathOutcome {
                        index: i,
                        seed,
                        objectives: values,
                        fraction_below: opts.z_threshold.map(|th| rec.fraction_below(th)),
                        error: None,
                    };
                    (outcome, keep.then_some(rec))
                }
                Err(e) => (PathOutcome { index: i, seed, objectives: Vec::new(), fraction_below: None, error: Some(e.to_string()) }, None),
            }
        })
        .collect();

    let (paths, records): (Vec<PathOutcome>, Vec<Option<SimRecord>>) = results.into_iter().unzip();
    let records: Vec<SimRecord> = records.into_iter().flatten().collect();
    let ok: Vec<&PathOutcome> = paths.iter().filter(|p| !p.failed()).collect();

    let objectives = opts
        .objectives
        .iter()
        .enumerate()
        .map(|(j, o)| {
            let xs: Vec<f64> = ok.iter().map(|p| p.objectives[j]).collect();
            ObjectiveStats::from_samples(o.name(), &xs)
        })
        .collect();
    let fraction_below_mean = match opts.z_threshold {
        Some(_) if !ok.is_empty() => {
            let xs: Vec<f64> = ok.iter().filter_map(|p| p.fraction_below).collect();
            Some(mean_variance(&xs).0)
        }
        _ => None,
    };
    let bands = if opts.bands && !records.is_empty() { Some(quantile_bands(&records)?) } else { None };

    Ok(Ensemble {
        summary: EnsembleSummary {
            seed_base: config.seed,
            n_paths,
            n_failed: n_paths - ok.len(),
            objectives,
            z_threshold: opts.z_threshold,
            fraction_below_mean,
            bands,
        },
        paths,
        records: if opts.keep_records { records } else { Vec::new() },
    })
}

/// Sample mean and unbiased variance (NaN mean for an empty slice).
pub fn mean_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Pointwise mean, median and 2.5 % / 97.5 % quantiles of `z` and `u`.
pub fn quantile_bands(records: &[SimRecord]) -> Result<Bands> {
    let first = records.first().ok_or_else(|| Error::invalid("records", "need at least one record"))?;
    let len = first.len();
    if records.iter().any(|r| r.len() != len) {
        return Err(Error::dims("ensemble records", len, "records of different lengths"));
    }
    let (p_lo, p_hi) = BAND_PROBABILITIES;
    let mut b = Bands {
        t: first.t.clone(),
        z_mean: Vec::with_capacity(len),
        z_lo: Vec::with_capacity(len),
        z_median: Vec::with_capacity(len),
        z_hi: Vec::with_capacity(len),
        u_mean: Vec::with_capacity(len),
        u_lo: Vec::with_capacity(len),
        u_median: Vec::with_capacity(len),
        u_hi: Vec::with_capacity(len),
    };
    let mut col = vec![0.0; records.len()];
    for k in 0..len {
        for (c, r) in col.iter_mut().zip(records) {
            *c = r.z[k];
        }
        b.z_mean.push(mean_variance(&col).0);
        col.sort_by(f64::total_cmp);
        b.z_lo.push(quantile_sorted(&col, p_lo));
        b.z_median.push(quantile_sorted(&col, 0.5));
        b.z_hi.push(quantile_sorted(&col, p_hi));
        for (c, r) in col.iter_mut().zip(records) {
            *c = r.u[k];
        }
        b.u_mean.push(mean_variance(&col).0);
        col.sort_by(f64::total_cmp);
        b.u_lo.push(quantile_sorted(&col, p_lo));
        b.u_median.push(quantile_sorted(&col, 0.5));
        b.u_hi.push(quantile_sorted(&col, p_hi));
    }
    Ok(b)
}
