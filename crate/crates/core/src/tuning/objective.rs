use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::SimRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Output tracking only.
    Phi1,
    /// Output tracking plus input moves.
    Phi2,
}

/// `Phi = sum_k q_z (z_k - z_ref)^2 [+ sum_k q_du (du_scale (u_k - u_{k-1}))^2]`
/// with `u_{-1} = u_ref`. `z` is in K and `u` in L/s; `du_scale` converts
/// input moves to the unit the move weight refers to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningObjective {
    pub kind: ObjectiveKind,
    pub q_z: f64,
    pub q_du: f64,
    pub du_scale: f64,
    pub z_ref: f64,
    pub u_ref: f64,
}

/// Move weights are stated per (L/min)^2 by default.
pub const DEFAULT_DU_SCALE: f64 = 60.0;

impl TuningObjective {
    pub fn phi1(z_ref: f64) -> Self {
        TuningObjective { kind: ObjectiveKind::Phi1, q_z: 1.0, q_du: 0.0, du_scale: DEFAULT_DU_SCALE, z_ref, u_ref: 0.0 }
    }

    pub fn phi2(z_ref: f64, u_ref: f64, q_du: f64) -> Self {
        TuningObjective { kind: ObjectiveKind::Phi2, q_z: 1.0, q_du, du_scale: DEFAULT_DU_SCALE, z_ref, u_ref }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ObjectiveKind::Phi1 => "phi1",
            ObjectiveKind::Phi2 => "phi2",
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("q_z", self.q_z), ("q_du", self.q_du), ("du_scale", self.du_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        if !(self.z_ref.is_finite() && self.u_ref.is_finite()) {
            return Err(Error::NonFinite("objective reference"));
        }
        Ok(())
    }
}

pub fn evaluate_objective(record: &SimRecord, obj: &TuningObjective) -> f64 {
    let track: f64 = record.z.iter().map(|z| (z - obj.z_ref) * (z - obj.z_ref)).sum::<f64>() * obj.q_z;
    match obj.kind {
        ObjectiveKind::Phi1 => track,
        ObjectiveKind::Phi2 => {
            let mut prev = obj.u_ref;
            let mut moves = 0.0;
            for &u in &record.u {
                let du = obj.du_scale * (u - prev);
                moves += du * du;
                prev = u;
            }
            track + obj.q_du * moves
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn record(z: Vec<f64>, u: Vec<f64>) -> SimRecord {
        let n = z.len();
        SimRecord {
            seed: 0,
            t: (0..n).map(|k| k as f64).collect(),
            x: z.iter().map(|v| vec![*v]).collect(),
            y: z.clone(),
            z,
            u,
            integrator: vec![0.0; n],
            slack_lo: vec![0.0; n],
            slack_hi: vec![0.0; n],
            objectives: BTreeMap::new(),
        }
    }

    #[test]
    fn zero_at_reference() {
        let r = record(vec![332.45; 5], vec![0.0105; 5]);
        assert_eq!(evaluate_objective(&r, &TuningObjective::phi1(332.45)), 0.0);
        assert_eq!(evaluate_objective(&r, &TuningObjective::phi2(332.45, 0.0105, 5e3)), 0.0);
    }

    #[test]
    fn single_deviation() {
        let r = record(vec![1.0, 1.0 + 0.7, 1.0], vec![0.0; 3]);
        assert!((evaluate_objective(&r, &TuningObjective::phi1(1.0)) - 0.49).abs() < 1e-15);
    }

    #[test]
    fn first_move_is_against_reference_input() {
        let r = record(vec![0.0; 2], vec![2.0, 2.0]);
        let mut o = TuningObjective::phi2(0.0, 1.5, 3.0);
        o.du_scale = 1.0;
        assert_eq!(evaluate_objective(&r, &o), 3.0 * 0.25);
    }

    #[test]
    fn validation() {
        let mut o = TuningObjective::phi2(0.0, 0.0, -1.0);
        assert!(o.validate().is_err());
        o.q_du = 1.0;
        assert!(o.validate().is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn phi2_dominates_phi1(
                z in proptest::collection::vec(300.0f64..360.0, 1..40),
                q_du in 0.0f64..1e4,
            ) {
                let u: Vec<f64> = z.iter().map(|v| (v - 330.0) * 1e-3).collect();
                let r = record(z, u);
                let p1 = evaluate_objective(&r, &TuningObjective::phi1(332.0));
                let p2 = evaluate_objective(&r, &TuningObjective::phi2(332.0, 0.0, q_du));
                prop_assert!(p1 >= 0.0);
                prop_assert!(p2 >= p1);
            }
        }
    }
}
