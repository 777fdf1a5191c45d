//! Measurement-record synthesis and filter propagation.
//!
//! Time is measured in units of `1/κ` (the measurement rate κ is the unit
//! rate), and a record advances on a uniform grid of step `dt`. A record is
//! produced by integrating the conditional Schrödinger equation from a known
//! spin coherent state while drawing shot noise (`simulate_truth`); filters
//! re-propagate a state against the fixed record using either the exact
//! many-body equation ([`cse::propagate_cse`]), the coherent-state Bloch
//! approximation ([`scs::propagate_scs`]), or a deterministic rotation-only
//! model ([`scs::propagate_backaction_free`]).

mod cse;
mod scs;
mod waveform;

pub use cse::{propagate_cse, simulate_truth, CsePath, CsePropagator, TruthTrajectory};
pub use scs::{propagate_backaction_free, propagate_scs, propagate_scs_bloch, ScsSchedule};
pub use waveform::{ControlWaveform, Segment};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spin::SpinError;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("waveform grid mismatch: {0}")]
    GridMismatch(String),
    #[error("time step too coarse: mean pre-renormalization norm drift {mean_drift:.3e} over {steps} steps")]
    StepTooCoarse { steps: usize, mean_drift: f64 },
    #[error("numerical instability at step {step}: {reason}")]
    Instability { step: usize, reason: String },
    #[error("initial Bloch vector has norm {0}, expected {1}")]
    BadInitialNorm(f64, &'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Spin(#[from] SpinError),
}

impl TrajectoryError {
    /// True for the distinguished filter-instability failure that estimators
    /// translate into an invalid (excluded) candidate.
    pub fn is_instability(&self) -> bool {
        matches!(self, TrajectoryError::Instability { .. })
    }
}

/// Simulation-scale constants: ensemble size, measurement rate, duration and
/// integration step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub num_qubits: usize,
    /// Measurement rate κ; 1 by convention (κ defines the time unit).
    pub kappa: f64,
    /// Total duration `T` in units of `1/κ`.
    pub total_time: f64,
    pub dt: f64,
    pub rng_seed: u64,
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if self.num_qubits == 0 {
            return Err(TrajectoryError::InvalidConfig("num_qubits must be ≥ 1".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(TrajectoryError::InvalidConfig("kappa must be > 0".into()));
        }
        if !(self.dt > 0.0) || !(self.total_time > 0.0) {
            return Err(TrajectoryError::InvalidConfig("dt and total_time must be > 0".into()));
        }
        let steps = self.total_time / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(TrajectoryError::InvalidConfig(format!(
                "total_time/dt = {steps} is not an integer number of steps"
            )));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.total_time / self.dt).round() as usize
    }
}

/// A diffusive measurement record: per-step increments `dy` on a uniform
/// grid, together with the physical scale (`κ`, `N`) it was generated under
/// and the seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub dt: f64,
    pub increments: Vec<f64>,
    pub kappa: f64,
    pub num_qubits: usize,
    pub seed: u64,
}

impl MeasurementRecord {
    pub fn new(
        dt: f64,
        increments: Vec<f64>,
        kappa: f64,
        num_qubits: usize,
        seed: u64,
    ) -> Result<Self, TrajectoryError> {
        if !(dt > 0.0) {
            return Err(TrajectoryError::InvalidConfig("record dt must be > 0".into()));
        }
        if increments.iter().any(|d| !d.is_finite()) {
            return Err(TrajectoryError::InvalidConfig(
                "record increments must be finite".into(),
            ));
        }
        Ok(Self {
            dt,
            increments,
            kappa,
            num_qubits,
            seed,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn total_time(&self) -> f64 {
        self.increments.len() as f64 * self.dt
    }
}

/// Per-time-point RMS deviation between exact `⟨Jz⟩` series and approximate
/// `z(t)` series over an ensemble of trials, both scaled by `1/J`:
/// `Δz_err(t) = sqrt( ⟨ (⟨Jz⟩(t)/J - z(t))² ⟩_trials )`.
pub fn rms_z_error(exact_jz: &[Vec<f64>], approx_z: &[Vec<f64>], total_spin: f64) -> Vec<f64> {
    assert_eq!(exact_jz.len(), approx_z.len(), "trial counts must match");
    assert!(!exact_jz.is_empty(), "need at least one trial");
    let len = exact_jz[0].len();
    let mut acc = vec![0.0f64; len];
    for (jz, z) in exact_jz.iter().zip(approx_z.iter()) {
        assert_eq!(jz.len(), len, "series lengths must match");
        assert_eq!(z.len(), len, "series lengths must match");
        for (slot, (a, b)) in acc.iter_mut().zip(jz.iter().zip(z.iter())) {
            let d = a / total_spin - b;
            *slot += d * d;
        }
    }
    let inv = 1.0 / exact_jz.len() as f64;
    acc.into_iter().map(|s| (s * inv).sqrt()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let good = TrajectoryConfig {
            num_qubits: 10,
            kappa: 1.0,
            total_time: 0.8,
            dt: 1e-4,
            rng_seed: 1,
        };
        good.validate().unwrap();
        assert_eq!(good.n_steps(), 8000);

        let mut bad = good.clone();
        bad.dt = 3e-4;
        assert!(bad.validate().is_err());
        bad = good.clone();
        bad.kappa = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn record_rejects_non_finite() {
        assert!(MeasurementRecord::new(1e-4, vec![0.0, f64::NAN], 1.0, 5, 0).is_err());
    }

    #[test]
    fn rms_z_error_trivial_cases() {
        let a = vec![vec![1.0, 2.0, 3.0], vec![0.5, 1.5, 2.5]];
        let same: Vec<Vec<f64>> = a.iter().map(|v| v.iter().map(|x| x / 2.0).collect()).collect();
        let zero = rms_z_error(&a, &same, 2.0);
        assert!(zero.iter().all(|&v| v == 0.0));

        let offset: Vec<Vec<f64>> = same
            .iter()
            .map(|v| v.iter().map(|x| x + 0.125).collect())
            .collect();
        let err = rms_z_error(&a, &offset, 2.0);
        assert!(err.iter().all(|&v| (v - 0.125).abs() < 1e-12));
    }
}
