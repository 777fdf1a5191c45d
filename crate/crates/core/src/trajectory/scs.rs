//! Coherent-state Bloch-vector filter and the rotation-only signal model.
//!
//! The conditional Bloch vector obeys
//! `dn = (b×n - (κ/8)(n - z·ê_z)) dt + (√κ/2)(ê_z - z·n) dv` with the
//! innovation `dv = dy - √κ (N/2) z dt`. Rather than a literal first-order
//! update, the measurement part of each step applies the exact single-qubit
//! map of the operator `K = 1 + (√κ dv/4)(σz - z) - (κ dt/32)(σz - z)²`,
//! which is the `N = 1` specialization of the many-body step in
//! [`super::cse`]. The map agrees with the first-order update to `O(dt)`,
//! keeps `|n| ≤ 1` for every noise value, and makes the single-qubit filter
//! agree with the exact filter to floating-point accuracy instead of to
//! integrator accuracy. Rotations reuse the per-segment step matrices, so a
//! κ = 0 propagation reduces bit-for-bit to the rotation-only model.

use super::waveform::ControlWaveform;
use super::{MeasurementRecord, TrajectoryError};
use crate::bloch::BlochVector;

type Mat3 = [[f64; 3]; 3];

fn rotation_matrix(axis: BlochVector, angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    let k = 1.0 - c;
    let (x, y, z) = (axis.x, axis.y, axis.z);
    [
        [c + k * x * x, k * x * y - s * z, k * x * z + s * y],
        [k * y * x + s * z, c + k * y * y, k * y * z - s * x],
        [k * z * x - s * y, k * z * y + s * x, c + k * z * z],
    ]
}

fn apply(m: &Mat3, v: BlochVector) -> BlochVector {
    BlochVector::new(
        m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
        m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
        m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
    )
}

/// Per-step rotation schedule derived from a waveform on a fixed grid.
pub struct ScsSchedule {
    step_rotations: Vec<Mat3>,
    steps_per_segment: usize,
}

impl ScsSchedule {
    pub fn new(dt: f64, waveform: &ControlWaveform) -> Result<Self, TrajectoryError> {
        if waveform.is_empty() {
            return Ok(Self {
                step_rotations: Vec::new(),
                steps_per_segment: 0,
            });
        }
        let per = waveform.steps_per_segment(dt)?;
        let angle = waveform.larmor() * dt;
        let step_rotations = waveform
            .segments()
            .iter()
            .map(|seg| rotation_matrix(seg.axis, angle))
            .collect();
        Ok(Self {
            step_rotations,
            steps_per_segment: per,
        })
    }

    fn check_covers(&self, n_steps: usize) -> Result<(), TrajectoryError> {
        if !self.step_rotations.is_empty()
            && self.step_rotations.len() * self.steps_per_segment != n_steps
        {
            return Err(TrajectoryError::GridMismatch(format!(
                "waveform covers {} steps but the run has {} steps",
                self.step_rotations.len() * self.steps_per_segment,
                n_steps
            )));
        }
        Ok(())
    }

    fn rotate(&self, step: usize, v: BlochVector) -> BlochVector {
        if self.step_rotations.is_empty() {
            v
        } else {
            match self.step_rotations.get(step / self.steps_per_segment) {
                Some(m) => apply(m, v),
                None => v,
            }
        }
    }
}

/// Exact single-qubit measurement update for one step; valid for pure and
/// mixed Bloch vectors alike.
#[inline]
fn measurement_update(n: BlochVector, dv: f64, kappa: f64, dt: f64) -> BlochVector {
    let a = 0.25 * kappa.sqrt() * dv;
    let b = -kappa * dt / 32.0;
    let z = n.z;
    let alpha = 1.0 - a * z + b * (1.0 + z * z);
    let beta = a - 2.0 * b * z;
    let sum_sq = alpha * alpha + beta * beta;
    let diff_sq = alpha * alpha - beta * beta;
    let cross = 2.0 * alpha * beta;
    let denom = sum_sq + cross * z;
    BlochVector::new(
        diff_sq * n.x / denom,
        diff_sq * n.y / denom,
        (cross + sum_sq * z) / denom,
    )
}

/// Propagate a Bloch vector (norm ≤ 1; mixed states allowed) against a
/// record, returning the full Bloch series with `n_steps + 1` entries.
pub fn propagate_scs_bloch(
    record: &MeasurementRecord,
    initial: BlochVector,
    waveform: &ControlWaveform,
) -> Result<Vec<BlochVector>, TrajectoryError> {
    let schedule = ScsSchedule::new(record.dt, waveform)?;
    propagate_scs_with(record, initial, &schedule, |_, _| {})
}

/// Propagate and return only the `z(t)` series (`n_steps + 1` entries).
pub fn propagate_scs(
    record: &MeasurementRecord,
    initial: BlochVector,
    waveform: &ControlWaveform,
) -> Result<Vec<f64>, TrajectoryError> {
    Ok(propagate_scs_bloch(record, initial, waveform)?
        .into_iter()
        .map(|n| n.z)
        .collect())
}

/// Shared propagation loop; `visit` sees `(step, n)` before each step.
pub(crate) fn propagate_scs_with<F: FnMut(usize, BlochVector)>(
    record: &MeasurementRecord,
    initial: BlochVector,
    schedule: &ScsSchedule,
    mut visit: F,
) -> Result<Vec<BlochVector>, TrajectoryError> {
    let norm = initial.norm();
    if norm > 1.0 + 1e-9 {
        return Err(TrajectoryError::BadInitialNorm(norm, "≤ 1"));
    }
    schedule.check_covers(record.n_steps())?;
    let half_n = record.num_qubits as f64 / 2.0;
    let sqrt_kappa = record.kappa.sqrt();
    let mut n = initial;
    let mut out = Vec::with_capacity(record.n_steps() + 1);
    for (i, &dy) in record.increments.iter().enumerate() {
        visit(i, n);
        out.push(n);
        let dv = dy - sqrt_kappa * half_n * n.z * record.dt;
        n = measurement_update(n, dv, record.kappa, record.dt);
        n = schedule.rotate(i, n);
        let len = n.norm();
        if !n.is_finite() {
            return Err(TrajectoryError::Instability {
                step: i,
                reason: "non-finite Bloch vector".into(),
            });
        }
        if len > 1.0 {
            n = n.scaled(1.0 / len);
        }
    }
    visit(record.n_steps(), n);
    out.push(n);
    Ok(out)
}

/// Deterministic rotation-only evolution `n(t) = R(t)·n(0)`; returns the
/// `z(t)` series on a grid of `n_steps` steps of size `dt`. Ignores any
/// measurement record by construction.
pub fn propagate_backaction_free(
    initial: BlochVector,
    waveform: &ControlWaveform,
    n_steps: usize,
    dt: f64,
) -> Result<Vec<f64>, TrajectoryError> {
    if !initial.is_unit(1e-9) {
        return Err(TrajectoryError::BadInitialNorm(initial.norm(), "1"));
    }
    let schedule = ScsSchedule::new(dt, waveform)?;
    schedule.check_covers(n_steps)?;
    let mut n = initial;
    let mut out = Vec::with_capacity(n_steps + 1);
    for i in 0..n_steps {
        out.push(n.z);
        n = schedule.rotate(i, n);
        // Same guard as the measurement filter so a κ→0 propagation there
        // reproduces this path bit-for-bit.
        let len = n.norm();
        if len > 1.0 {
            n = n.scaled(1.0 / len);
        }
    }
    out.push(n.z);
    Ok(out)
}
