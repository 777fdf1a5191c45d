//! Maximum-likelihood reconstruction of the initial qubit state from a
//! single measurement record.
//!
//! The two-step estimator first scores a shell of isotropically distributed
//! *mixed* states (norm 3/4) against the maximally mixed reference; mixed
//! candidates keep overlap with every possible truth, which sidesteps the
//! filter instabilities of nearly orthogonal pure initializations. The
//! normalized stage-1 winner then seeds a spherical-cap resample of pure
//! states whose argmax is reported as the estimate. A single-stage
//! backaction-free baseline scores uniformly sampled pure states under the
//! rotation-only signal model.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bloch::BlochVector;
use crate::likelihood::{llr_general, LikelihoodError, MeanSignalSeries};
use crate::seed::{self, tag};
use crate::spin::qubit_fidelity;
use crate::trajectory::{
    propagate_backaction_free, propagate_scs, ControlWaveform, MeasurementRecord,
};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error("all {n_total} candidates invalid at stage {stage}")]
    AllCandidatesInvalid { stage: u8, n_total: usize },
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

/// Sample counts and geometry of the two-step search.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Stage-1 mixed-state candidates on the shell.
    pub m1_count: usize,
    /// Stage-2 pure-state candidates in the cap.
    pub m2_count: usize,
    /// Norm of the stage-1 mixed candidates.
    pub shell_radius: f64,
    /// Angular radius of the stage-2 cap around the stage-1 winner.
    pub cap_half_angle: f64,
    /// Sphere samples used by the backaction-free baseline.
    pub baseline_count: usize,
    pub rng_seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            m1_count: 250,
            m2_count: 250,
            shell_radius: 0.75,
            cap_half_angle: std::f64::consts::FRAC_PI_4,
            baseline_count: 1700,
            rng_seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.m1_count == 0 || self.m2_count == 0 || self.baseline_count == 0 {
            return Err(EstimatorError::InvalidConfig("sample counts must be ≥ 1".into()));
        }
        if !(self.shell_radius > 0.0 && self.shell_radius < 1.0) {
            return Err(EstimatorError::InvalidConfig(
                "shell_radius must lie strictly inside (0, 1)".into(),
            ));
        }
        if !(self.cap_half_angle > 0.0 && self.cap_half_angle <= std::f64::consts::PI) {
            return Err(EstimatorError::InvalidConfig(
                "cap_half_angle must lie in (0, π]".into(),
            ));
        }
        Ok(())
    }
}

/// One scored candidate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LlrRow {
    pub candidate: BlochVector,
    pub llr: f64,
    pub valid: bool,
}

/// Result of a reconstruction, including the per-candidate score tables for
/// diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    /// Reported estimate; always unit norm.
    pub estimate: BlochVector,
    /// Stage-1 reference (the zero vector for the two-step estimator, the
    /// first sphere sample for the baseline).
    pub reference_stage1: BlochVector,
    /// Winning mixed candidate of stage 1 (norm = shell radius); absent for
    /// the single-stage baseline.
    pub winner_stage1: Option<BlochVector>,
    pub stage1: Vec<LlrRow>,
    pub stage2: Vec<LlrRow>,
    /// Candidates excluded across both stages.
    pub n_invalid: usize,
}

/// `count` Bloch vectors of exact norm `radius`, directions uniform on the
/// sphere.
pub fn sample_shell<R: Rng + ?Sized>(count: usize, radius: f64, rng: &mut R) -> Vec<BlochVector> {
    assert!(radius > 0.0 && radius < 1.0, "shell radius must be in (0, 1)");
    (0..count)
        .map(|_| BlochVector::random_unit(rng).scaled(radius))
        .collect()
}

/// `count` unit vectors uniform in area over the spherical cap
/// `{n : n·center ≥ cos(half_angle)}`.
pub fn sample_cap<R: Rng + ?Sized>(
    count: usize,
    center: BlochVector,
    half_angle: f64,
    rng: &mut R,
) -> Vec<BlochVector> {
    assert!(center.is_unit(1e-9), "cap center must be a unit vector");
    assert!(half_angle > 0.0 && half_angle <= std::f64::consts::PI);
    // Orthonormal frame (u, v, center).
    let helper = if center.z.abs() < 0.9 {
        BlochVector::Z
    } else {
        BlochVector::X
    };
    let u = helper.cross(center).normalized().expect("independent helper");
    let v = center.cross(u);
    let cos_min = half_angle.cos();
    (0..count)
        .map(|_| {
            let cos_theta = rng.gen_range(cos_min..=1.0);
            let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = u.scaled(sin_theta * phi.cos())
                + v.scaled(sin_theta * phi.sin())
                + center.scaled(cos_theta);
            p.normalized().expect("unit by construction")
        })
        .collect()
}

/// Mode for [`sample_density_check`].
#[derive(Debug, Clone, Copy)]
pub enum DensityMode {
    Sphere,
    Cap { half_angle: f64 },
}

/// Mean over samples of the nearest-neighbor infidelity
/// `min_{k≠i} (1 - qubit_fidelity)`; used to justify sample counts.
pub fn sample_density_check<R: Rng + ?Sized>(count: usize, mode: DensityMode, rng: &mut R) -> f64 {
    let points: Vec<BlochVector> = match mode {
        DensityMode::Sphere => (0..count).map(|_| BlochVector::random_unit(rng)).collect(),
        DensityMode::Cap { half_angle } => sample_cap(count, BlochVector::Z, half_angle, rng),
    };
    let mut total = 0.0;
    for (i, a) in points.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (k, b) in points.iter().enumerate() {
            if i != k {
                best = best.min(1.0 - qubit_fidelity(*a, *b));
            }
        }
        total += best;
    }
    total / count as f64
}

fn argmax_valid(rows: &[LlrRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, row) in rows.iter().enumerate() {
        if !row.valid {
            continue;
        }
        match best {
            // Strict comparison keeps the lowest index on ties.
            Some(b) if rows[b].llr >= row.llr => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Score `candidates` against a fixed reference mean-signal series under the
/// coherent-state filter.
fn score_scs_candidates(
    record: &MeasurementRecord,
    waveform: &ControlWaveform,
    candidates: &[BlochVector],
    reference_m: &MeanSignalSeries,
) -> Result<Vec<LlrRow>, EstimatorError> {
    candidates
        .par_iter()
        .map(|&candidate| {
            let z = match propagate_scs(record, candidate, waveform) {
                Ok(z) => z,
                Err(e) if e.is_instability() => {
                    return Ok(LlrRow {
                        candidate,
                        llr: f64::NAN,
                        valid: false,
                    })
                }
                Err(e) => return Err(EstimatorError::Likelihood(e.into())),
            };
            let m =
                MeanSignalSeries::from_z_series(&z, record.kappa, record.num_qubits, record.dt)?;
            let llr = llr_general(record, &m, reference_m)?;
            Ok(LlrRow {
                candidate,
                llr: llr.value,
                valid: llr.valid,
            })
        })
        .collect()
}

fn scs_reference_series(
    record: &MeasurementRecord,
    waveform: &ControlWaveform,
    reference: BlochVector,
    stage: u8,
    n_total: usize,
) -> Result<MeanSignalSeries, EstimatorError> {
    let z = propagate_scs(record, reference, waveform).map_err(|e| {
        if e.is_instability() {
            // Reference failure invalidates the whole stage.
            EstimatorError::AllCandidatesInvalid { stage, n_total }
        } else {
            EstimatorError::Likelihood(e.into())
        }
    })?;
    Ok(MeanSignalSeries::from_z_series(
        &z,
        record.kappa,
        record.num_qubits,
        record.dt,
    )?)
}

/// Two-step maximum-likelihood estimate of the initial qubit state.
///
/// Deterministic given `(record, waveform, config.rng_seed)`; invalid
/// candidates are excluded from both argmaxes, and a stage whose candidates
/// are all invalid is an error.
pub fn estimate_mle(
    record: &MeasurementRecord,
    waveform: &ControlWaveform,
    config: &EstimatorConfig,
) -> Result<EstimateReport, EstimatorError> {
    config.validate()?;

    let mut rng1 = seed::rng(config.rng_seed, &[tag::STAGE1]);
    let shell = sample_shell(config.m1_count, config.shell_radius, &mut rng1);
    let reference1 = BlochVector::ZERO;
    let ref1_m = scs_reference_series(record, waveform, reference1, 1, config.m1_count)?;
    let stage1 = score_scs_candidates(record, waveform, &shell, &ref1_m)?;
    let winner_idx = argmax_valid(&stage1).ok_or(EstimatorError::AllCandidatesInvalid {
        stage: 1,
        n_total: config.m1_count,
    })?;
    let winner = stage1[winner_idx].candidate;
    let cap_center = winner.normalized().expect("shell candidates are nonzero");

    let mut rng2 = seed::rng(config.rng_seed, &[tag::STAGE2]);
    let cap = sample_cap(config.m2_count, cap_center, config.cap_half_angle, &mut rng2);
    let ref2_m = scs_reference_series(record, waveform, cap_center, 2, config.m2_count)?;
    let stage2 = score_scs_candidates(record, waveform, &cap, &ref2_m)?;
    let estimate_idx = argmax_valid(&stage2).ok_or(EstimatorError::AllCandidatesInvalid {
        stage: 2,
        n_total: config.m2_count,
    })?;
    let estimate = stage2[estimate_idx]
        .candidate
        .normalized()
        .expect("cap candidates are unit vectors");

    let n_invalid = stage1.iter().chain(stage2.iter()).filter(|r| !r.valid).count();
    Ok(EstimateReport {
        estimate,
        reference_stage1: reference1,
        winner_stage1: Some(winner),
        stage1,
        stage2,
        n_invalid,
    })
}

/// Single-stage estimator under the backaction-free signal model: argmax
/// over uniformly sampled pure states, the first sample serving as the
/// reference.
pub fn estimate_backaction_free(
    record: &MeasurementRecord,
    waveform: &ControlWaveform,
    config: &EstimatorConfig,
) -> Result<EstimateReport, EstimatorError> {
    config.validate()?;
    let mut rng = seed::rng(config.rng_seed, &[tag::BASELINE]);
    let samples: Vec<BlochVector> = (0..config.baseline_count)
        .map(|_| BlochVector::random_unit(&mut rng))
        .collect();
    let reference = samples[0];
    let ref_z = propagate_backaction_free(reference, waveform, record.n_steps(), record.dt)
        .map_err(LikelihoodError::from)?;
    let ref_m = MeanSignalSeries::from_z_series(&ref_z, record.kappa, record.num_qubits, record.dt)?;
    let rows: Vec<LlrRow> = samples
        .par_iter()
        .map(|&candidate| {
            let z = propagate_backaction_free(candidate, waveform, record.n_steps(), record.dt)
                .map_err(LikelihoodError::from)?;
            let m =
                MeanSignalSeries::from_z_series(&z, record.kappa, record.num_qubits, record.dt)?;
            let llr = llr_general(record, &m, &ref_m)?;
            Ok(LlrRow {
                candidate,
                llr: llr.value,
                valid: llr.valid,
            })
        })
        .collect::<Result<_, EstimatorError>>()?;
    let estimate_idx = argmax_valid(&rows).ok_or(EstimatorError::AllCandidatesInvalid {
        stage: 1,
        n_total: config.baseline_count,
    })?;
    let estimate = rows[estimate_idx].candidate;
    let n_invalid = rows.iter().filter(|r| !r.valid).count();
    Ok(EstimateReport {
        estimate,
        reference_stage1: reference,
        winner_stage1: None,
        stage1: rows,
        stage2: Vec::new(),
        n_invalid,
    })
}
