//! File formats: trajectory CSV, ensemble JSON, objective-curve and
//! steady-state sweep CSV, and the run manifest. All numbers are written in
//! internal units (s, K, L/s) with shortest round-trip formatting, so every
//! file loads back to identical values.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sim::{EnsembleSummary, PathOutcome, SimRecord};
use crate::tuning::{CurvePoint, Gain, TunePiResult, TuneResult};

/// Serde adapter writing a matrix as a list of rows.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let nr = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nc) {
            return Err("matrix rows have different lengths".into());
        }
        Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
    }
}

/// Serde adapter that writes NaN as `null` and reads `null` back as NaN.
pub mod serde_nan {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

fn parse_err(what: &'static str, message: impl ToString) -> Error {
    Error::Parse { what, message: message.to_string() }
}

fn parse_f64(what: &'static str, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| parse_err(what, format!("`{s}`: {e}")))
}

// ---------------------------------------------------------------- trajectories

const RECORD_TAIL: [&str; 7] = ["y", "z", "u", "integrator", "slack_lo", "slack_hi", "seed"];

/// Writes one trajectory: `t, x0..x{n-1}, y, z, u, integrator, slack_lo,
/// slack_hi, seed`.
pub fn write_record_csv<W: Write>(rec: &SimRecord, w: W) -> Result<()> {
    rec.validate()?;
    let mut wr = csv::Writer::from_writer(w);
    let nx = rec.state_dim();
    let mut header = vec!["t".to_string()];
    header.extend((0..nx).map(|i| format!("x{i}")));
    header.extend(RECORD_TAIL.iter().map(|s| s.to_string()));
    wr.write_record(&header)?;
    for k in 0..rec.len() {
        let mut row = Vec::with_capacity(header.len());
        row.push(rec.t[k].to_string());
        row.extend(rec.x[k].iter().map(f64::to_string));
        for v in [rec.y[k], rec.z[k], rec.u[k], rec.integrator[k], rec.slack_lo[k], rec.slack_hi[k]] {
            row.push(v.to_string());
        }
        row.push(rec.seed.to_string());
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_record_csv<R: Read>(r: R) -> Result<SimRecord> {
    const WHAT: &str = "trajectory CSV";
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(parse_err(WHAT, "first column must be `t`"));
    }
    if header.len() < 1 + RECORD_TAIL.len() {
        return Err(parse_err(WHAT, format!("expected at least {} columns", 1 + RECORD_TAIL.len())));
    }
    let nx = header.len() - 1 - RECORD_TAIL.len();
    for i in 0..nx {
        if header[1 + i] != format!("x{i}") {
            return Err(parse_err(WHAT, format!("column {} must be `x{i}`, got `{}`", 1 + i, header[1 + i])));
        }
    }
    for (j, name) in RECORD_TAIL.iter().enumerate() {
        if header[1 + nx + j] != *name {
            return Err(parse_err(WHAT, format!("column {} must be `{name}`", 1 + nx + j)));
        }
    }
    let mut rec = SimRecord {
        seed: 0,
        t: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
        z: Vec::new(),
        u: Vec::new(),
        integrator: Vec::new(),
        slack_lo: Vec::new(),
        slack_hi: Vec::new(),
        objectives: BTreeMap::new(),
    };
    for (line, row) in rd.records().enumerate() {
        let row = row?;
        if row.len() != header.len() {
            return Err(parse_err(WHAT, format!("row {line} has {} fields", row.len())));
        }
        let f = |i: usize| parse_f64(WHAT, &row[i]);
        rec.t.push(f(0)?);
        rec.x.push((0..nx).map(|i| f(1 + i)).collect::<Result<_>>()?);
        let b = 1 + nx;
        rec.y.push(f(b)?);
        rec.z.push(f(b + 1)?);
        rec.u.push(f(b + 2)?);
        rec.integrator.push(f(b + 3)?);
        rec.slack_lo.push(f(b + 4)?);
        rec.slack_hi.push(f(b + 5)?);
        let seed: u64 = row[b + 6].trim().parse().map_err(|e| parse_err(WHAT, format!("seed `{}`: {e}", &row[b + 6])))?;
        if line > 0 && seed != rec.seed {
            return Err(parse_err(WHAT, "seed changes within one trajectory"));
        }
        rec.seed = seed;
    }
    Ok(rec)
}

pub fn save_record_csv(rec: &SimRecord, path: &Path) -> Result<()> {
    write_record_csv(rec, std::fs::File::create(path)?)
}

pub fn load_record_csv(path: &Path) -> Result<SimRecord> {
    read_record_csv(std::fs::File::open(path)?)
}

// ---------------------------------------------------------------- ensembles

/// Ensemble summary plus per-path outcomes, as written to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleReport {
    pub controller: String,
    pub summary: EnsembleSummary,
    pub paths: Vec<PathOutcome>,
}

pub fn ensemble_to_json(report: &EnsembleReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn ensemble_from_json(s: &str) -> Result<EnsembleReport> {
    serde_json::from_str(s).map_err(|e| parse_err("ensemble JSON", e))
}

// ---------------------------------------------------------------- curves

pub fn tune_to_json(r: &TunePiResult) -> Result<String> {
    Ok(serde_json::to_string_pretty(r)?)
}

pub fn tune_from_json(s: &str) -> Result<TunePiResult> {
    serde_json::from_str(s).map_err(|e| parse_err("tuning JSON", e))
}

/// `gain, value, mean, stderr, failures` rows of one objective curve.
pub fn write_curve_csv<W: Write>(r: &TuneResult, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["gain", "value", "mean", "stderr", "failures"])?;
    for p in &r.curve {
        wr.write_record([
            r.gain.name().to_string(),
            p.value.to_string(),
            p.mean.to_string(),
            p.stderr.to_string(),
            p.failures.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_curve_csv<R: Read>(r: R) -> Result<TuneResult> {
    const WHAT: &str = "objective curve CSV";
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != ["gain", "value", "mean", "stderr", "failures"] {
        return Err(parse_err(WHAT, format!("unexpected header {header:?}")));
    }
    let mut gain = None;
    let mut curve = Vec::new();
    for row in rd.records() {
        let row = row?;
        if row.len() != 5 {
            return Err(parse_err(WHAT, "expected 5 fields"));
        }
        let g = match &row[0] {
            "kp" => Gain::Kp,
            "ki" => Gain::Ki,
            "kaw" => Gain::Kaw,
            other => return Err(parse_err(WHAT, format!("unknown gain `{other}`"))),
        };
        if gain.is_some_and(|prev| prev != g) {
            return Err(parse_err(WHAT, "mixed gains in one curve"));
        }
        gain = Some(g);
        curve.push(CurvePoint {
            value: parse_f64(WHAT, &row[1])?,
            mean: parse_f64(WHAT, &row[2])?,
            stderr: parse_f64(WHAT, &row[3])?,
            failures: row[4].trim().parse().map_err(|e| parse_err(WHAT, e))?,
        });
    }
    let gain = gain.ok_or_else(|| parse_err(WHAT, "empty curve"))?;
    let best_index = curve.iter().enumerate().fold(0, |b, (i, p)| {
        let q = &curve[b];
        if p.mean < q.mean || (p.mean == q.mean && p.value.abs() < q.value.abs()) {
            i
        } else {
            b
        }
    });
    Ok(TuneResult { gain, best: curve[best_index].value, best_index, curve })
}

// ---------------------------------------------------------------- sweep

/// One steady state of the sweep, in CLI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub flow_ml_min: f64,
    pub temperature_c: f64,
    pub stable: bool,
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["flow_ml_min", "temperature_c", "stable"])?;
    for r in rows {
        wr.serialize((r.flow_ml_min, r.temperature_c, r.stable))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(r: R) -> Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

// ---------------------------------------------------------------- manifest

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Provenance of one CLI run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub crate_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub n_paths: usize,
    /// Output file name to its SHA-256.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config_text: &str, seed: u64, n_paths: usize) -> Self {
        Manifest {
            command: command.to_string(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            seed,
            n_paths,
            files: BTreeMap::new(),
        }
    }

    /// Writes `bytes` to `dir/name` and records its hash.
    pub fn write_file(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(dir.join(name), bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_ensemble, simulate_closed_loop, ConstantInput, EnsembleOptions, ScalarLinearSde, SimConfig};
    use crate::tuning::TuningObjective;

    fn record() -> SimRecord {
        let m = ScalarLinearSde { a: -0.3, b: 1.0, s: 0.4, rv: 0.2 };
        let cfg = SimConfig { t0: 0.0, tf: 12.0, ts: 0.5, substeps: 3, seed: u64::MAX - 3, x0: vec![0.1] };
        simulate_closed_loop(&m, &mut ConstantInput(0.3), &cfg).unwrap()
    }

    #[test]
    fn record_csv_round_trip_is_exact() {
        let rec = record();
        let mut buf = Vec::new();
        write_record_csv(&rec, &mut buf).unwrap();
        let back = read_record_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rec);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x0,y,z,u,integrator,slack_lo,slack_hi,seed\n"));
    }

    #[test]
    fn record_csv_rejects_garbage() {
        assert!(read_record_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(read_record_csv("t,x0,y,z,u,integrator,slack_lo,slack_hi,seed\n0,1,2,3,4,5,6,7,x\n".as_bytes()).is_err());
        assert!(read_record_csv("t,x0,y,z,u,integrator,slack_lo,slack_hi,seed\n0,1,2,3,4,5,6,7,1\n1,1,2,3,4,5,6,7,2\n".as_bytes()).is_err());
    }

    #[test]
    fn ensemble_json_round_trip() {
        let m = ScalarLinearSde { a: -0.3, b: 1.0, s: 0.4, rv: 0.2 };
        let cfg = SimConfig { t0: 0.0, tf: 10.0, ts: 1.0, substeps: 2, seed: 4, x0: vec![0.1] };
        let opts =
            EnsembleOptions { objectives: vec![TuningObjective::phi1(0.0)], z_threshold: Some(0.0), keep_records: false, bands: true };
        let e = run_ensemble(&m, || Ok(ConstantInput(0.0)), &cfg, 7, &opts).unwrap();
        let report = EnsembleReport { controller: "open-loop".into(), summary: e.summary, paths: e.paths };
        let s = ensemble_to_json(&report).unwrap();
        assert_eq!(ensemble_from_json(&s).unwrap(), report);
    }

    #[test]
    fn nan_statistics_survive_json() {
        let stats = crate::sim::ObjectiveStats::from_samples("phi1", &[]);
        let s = serde_json::to_string(&stats).unwrap();
        let back: crate::sim::ObjectiveStats = serde_json::from_str(&s).unwrap();
        assert!(back.mean.is_nan() && back.n == 0);
    }

    #[test]
    fn curve_and_sweep_round_trip() {
        let r = TuneResult {
            gain: Gain::Ki,
            curve: vec![
                CurvePoint { value: -1e-3, mean: 5.0, stderr: 0.1, failures: 0 },
                CurvePoint { value: -5e-4, mean: 4.0, stderr: 0.2, failures: 1 },
                CurvePoint { value: 0.0, mean: 4.5, stderr: 0.3, failures: 0 },
            ],
            best_index: 1,
            best: -5e-4,
        };
        let mut buf = Vec::new();
        write_curve_csv(&r, &mut buf).unwrap();
        assert_eq!(read_curve_csv(buf.as_slice()).unwrap(), r);

        let rows = vec![
            SweepRow { flow_ml_min: 0.0, temperature_c: 80.1, stable: true },
            SweepRow { flow_ml_min: 630.0, temperature_c: 59.3, stable: false },
        ];
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_sweep_csv(buf.as_slice()).unwrap(), rows);
        let mut buf = Vec::new();
        write_sweep_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "flow_ml_min,temperature_c,stable\n");
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
