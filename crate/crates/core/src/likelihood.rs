//! Log-likelihood ratios for diffusive measurement records.
//!
//! For a record `dy_i` on a uniform grid and two candidate mean-signal
//! models `m1`, `m2`, the log-likelihood ratio is the left-endpoint Itô sum
//!
//! ```text
//! λ = Σ_i (m1_i - m2_i)·dy_i - ½ Σ_i (m1_i² - m2_i²)·dt .
//! ```
//!
//! A per-step Gaussian log-density (the finite-step likelihood itself) is
//! useless as an estimation objective: writing `dy_i = dw_i + m°_i dt` for
//! the true model `m°`, each step's log density is
//! `-½ (dw_i/√dt - (m_i - m°_i)√dt)²` up to a constant, so the
//! model-dependent part is `O(√dt)` against an `O(1)` shot-noise term and
//! vanishes as the grid refines. Only the *ratio* between two models keeps a
//! finite, noise-free limit, which is why everything here is expressed as a
//! difference and why `λ` is never exponentiated (`Λ = e^λ` overflows at
//! large `N·T`).
//!
//! ```
//! use spintomo_core::likelihood::per_step_log_density_gap;
//! // The per-step log-density gap between two constant-drift models shrinks
//! // linearly in dt at fixed noise, i.e. as O(√dt) per √dt of noise scale.
//! let gap_coarse = per_step_log_density_gap(1.0, 0.0, 0.0, 1e-2);
//! let gap_fine = per_step_log_density_gap(1.0, 0.0, 0.0, 1e-4);
//! assert!((gap_coarse / gap_fine - 100.0).abs() < 1e-9);
//! ```

use thiserror::Error;

use crate::bloch::BlochVector;
use crate::spin::SymmetricState;
use crate::trajectory::{
    propagate_backaction_free, propagate_cse, propagate_scs, ControlWaveform, MeasurementRecord,
    TrajectoryError,
};

#[derive(Debug, Error)]
pub enum LikelihoodError {
    #[error("series length {found} does not match the record length {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("mean-signal series contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Drift of a candidate model evaluated at the left endpoint of every step:
/// `m_i = m(θ, t_i, y)` in units of `√κ · spin`.
#[derive(Debug, Clone)]
pub struct MeanSignalSeries {
    values: Vec<f64>,
    dt: f64,
}

impl MeanSignalSeries {
    pub fn new(values: Vec<f64>, dt: f64) -> Result<Self, LikelihoodError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LikelihoodError::NonFinite);
        }
        Ok(Self { values, dt })
    }

    /// Spin mean signal `m_i = √κ·(N/2)·z_i` from a Bloch `z(t)` series.
    /// Accepts `n` or `n+1` values for an `n`-step record; the trailing grid
    /// point is not a left endpoint and is ignored by the sums.
    pub fn from_z_series(
        z: &[f64],
        kappa: f64,
        num_qubits: usize,
        dt: f64,
    ) -> Result<Self, LikelihoodError> {
        let scale = kappa.sqrt() * num_qubits as f64 / 2.0;
        Self::new(z.iter().map(|v| scale * v).collect(), dt)
    }

    /// Same scaling from an exact `⟨Jz⟩` series (`m_i = √κ·⟨Jz⟩_i`).
    pub fn from_jz_series(jz: &[f64], kappa: f64, dt: f64) -> Result<Self, LikelihoodError> {
        let scale = kappa.sqrt();
        Self::new(jz.iter().map(|v| scale * v).collect(), dt)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn check_against(&self, record: &MeasurementRecord) -> Result<(), LikelihoodError> {
        let n = record.n_steps();
        if self.values.len() != n && self.values.len() != n + 1 {
            return Err(LikelihoodError::LengthMismatch {
                expected: n,
                found: self.values.len(),
            });
        }
        Ok(())
    }
}

/// A log-likelihood-ratio value; `valid == false` marks a comparison whose
/// propagation went unstable (or whose sums were non-finite) and which must
/// be excluded from any argmax rather than read as a number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlrValue {
    pub value: f64,
    pub candidate_id: Option<usize>,
    pub reference_id: Option<usize>,
    pub valid: bool,
}

impl LlrValue {
    fn plain(value: f64) -> Self {
        Self {
            value,
            candidate_id: None,
            reference_id: None,
            valid: value.is_finite(),
        }
    }

    fn invalid() -> Self {
        Self {
            value: f64::NAN,
            candidate_id: None,
            reference_id: None,
            valid: false,
        }
    }

    pub fn with_ids(mut self, candidate: usize, reference: usize) -> Self {
        self.candidate_id = Some(candidate);
        self.reference_id = Some(reference);
        self
    }
}

/// General diffusive LLR between two mean-signal models over one record.
pub fn llr_general(
    record: &MeasurementRecord,
    m1: &MeanSignalSeries,
    m2: &MeanSignalSeries,
) -> Result<LlrValue, LikelihoodError> {
    m1.check_against(record)?;
    m2.check_against(record)?;
    let mut ito_sum = 0.0;
    let mut drift_sum = 0.0;
    for (i, &dy) in record.increments.iter().enumerate() {
        let a = m1.values[i];
        let b = m2.values[i];
        ito_sum += (a - b) * dy;
        drift_sum += a * a - b * b;
    }
    Ok(LlrValue::plain(ito_sum - 0.5 * drift_sum * record.dt))
}

/// Coherent-state LLR between two Bloch-vector initial conditions
/// (`|n| ≤ 1`; mixed states allowed), both filtered against the same record:
///
/// ```text
/// λ = √κ(N/2) Σ (z_c - z_r) dy - (κN²/8) Σ (z_c² - z_r²) dt .
/// ```
///
/// An unstable propagation yields `valid = false`, never a silent number.
pub fn llr_scs(
    record: &MeasurementRecord,
    candidate: BlochVector,
    reference: BlochVector,
    waveform: &ControlWaveform,
) -> Result<LlrValue, LikelihoodError> {
    let zc = match propagate_scs(record, candidate, waveform) {
        Ok(z) => z,
        Err(e) if e.is_instability() => return Ok(LlrValue::invalid()),
        Err(e) => return Err(e.into()),
    };
    let zr = match propagate_scs(record, reference, waveform) {
        Ok(z) => z,
        Err(e) if e.is_instability() => return Ok(LlrValue::invalid()),
        Err(e) => return Err(e.into()),
    };
    let m1 = MeanSignalSeries::from_z_series(&zc, record.kappa, record.num_qubits, record.dt)?;
    let m2 = MeanSignalSeries::from_z_series(&zr, record.kappa, record.num_qubits, record.dt)?;
    llr_general(record, &m1, &m2)
}

/// Backaction-free LLR: the mean signals come from the deterministic
/// rotation-only model, so propagation never goes unstable.
pub fn llr_backaction_free(
    record: &MeasurementRecord,
    candidate: BlochVector,
    reference: BlochVector,
    waveform: &ControlWaveform,
) -> Result<LlrValue, LikelihoodError> {
    let zc = propagate_backaction_free(candidate, waveform, record.n_steps(), record.dt)?;
    let zr = propagate_backaction_free(reference, waveform, record.n_steps(), record.dt)?;
    let m1 = MeanSignalSeries::from_z_series(&zc, record.kappa, record.num_qubits, record.dt)?;
    let m2 = MeanSignalSeries::from_z_series(&zr, record.kappa, record.num_qubits, record.dt)?;
    llr_general(record, &m1, &m2)
}

/// Exact many-body LLR between two symmetric-subspace initial conditions;
/// affordable only for small `N`, where it validates the coherent-state
/// approximation.
pub fn llr_cse(
    record: &MeasurementRecord,
    candidate: &SymmetricState,
    reference: &SymmetricState,
    waveform: &ControlWaveform,
) -> Result<LlrValue, LikelihoodError> {
    let jz_c = match propagate_cse(record, candidate, waveform, &[]) {
        Ok(path) => path.jz,
        Err(e) if e.is_instability() => return Ok(LlrValue::invalid()),
        Err(e) => return Err(e.into()),
    };
    let jz_r = match propagate_cse(record, reference, waveform, &[]) {
        Ok(path) => path.jz,
        Err(e) if e.is_instability() => return Ok(LlrValue::invalid()),
        Err(e) => return Err(e.into()),
    };
    let m1 = MeanSignalSeries::from_jz_series(&jz_c, record.kappa, record.dt)?;
    let m2 = MeanSignalSeries::from_jz_series(&jz_r, record.kappa, record.dt)?;
    llr_general(record, &m1, &m2)
}

/// Magnitude of the per-step Gaussian log-density difference between two
/// constant-drift models for one increment `dy = dw` of a pure noise path
/// with standardized noise `dw/√dt`; shrinks with `dt`, illustrating why
/// per-step densities carry no usable signal in the continuum limit.
pub fn per_step_log_density_gap(m1: f64, m2: f64, dw_over_sqrt_dt: f64, dt: f64) -> f64 {
    let xi = dw_over_sqrt_dt;
    let d1 = xi - m1 * dt.sqrt();
    let d2 = xi - m2 * dt.sqrt();
    (0.5 * (d2 * d2 - d1 * d1)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::spin_coherent;
    use crate::trajectory::{simulate_truth, TrajectoryConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn wiener_record(n_steps: usize, dt: f64, num_qubits: usize, seed: u64) -> MeasurementRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let increments = (0..n_steps)
            .map(|_| dt.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        MeasurementRecord::new(dt, increments, 1.0, num_qubits, seed).unwrap()
    }

    #[test]
    fn identical_models_give_exactly_zero() {
        let record = wiener_record(500, 1e-3, 10, 1);
        let m = MeanSignalSeries::new(vec![1.25; 500], 1e-3).unwrap();
        let llr = llr_general(&record, &m, &m).unwrap();
        assert_eq!(llr.value, 0.0);
        assert!(llr.valid);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let record = wiener_record(500, 1e-3, 10, 2);
        let m1 = MeanSignalSeries::new(vec![1.0; 499], 1e-3).unwrap();
        let m2 = MeanSignalSeries::new(vec![0.0; 500], 1e-3).unwrap();
        assert!(matches!(
            llr_general(&record, &m1, &m2),
            Err(LikelihoodError::LengthMismatch { .. })
        ));
        assert!(MeanSignalSeries::new(vec![f64::INFINITY], 1e-3).is_err());
    }

    #[test]
    fn girsanov_moments_for_constant_drift() {
        // Pure Wiener record scored as drift-c against drift-0:
        // E[λ] = -c²T/2 and Var[λ] = c²T.
        let (c, t_total, dt) = (1.0, 1.0, 1e-3);
        let n_steps = (t_total / dt) as usize;
        let paths = 1000;
        let mut values = Vec::with_capacity(paths);
        for seed in 0..paths {
            let record = wiener_record(n_steps, dt, 1, 1000 + seed as u64);
            let m1 = MeanSignalSeries::new(vec![c; n_steps], dt).unwrap();
            let m2 = MeanSignalSeries::new(vec![0.0; n_steps], dt).unwrap();
            values.push(llr_general(&record, &m1, &m2).unwrap().value);
        }
        let mean = values.iter().sum::<f64>() / paths as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (paths - 1) as f64;
        let expected_mean = -c * c * t_total / 2.0;
        let expected_var = c * c * t_total;
        let mean_sigma = (expected_var / paths as f64).sqrt();
        assert!(
            (mean - expected_mean).abs() < 3.0 * mean_sigma,
            "mean {mean} vs {expected_mean}"
        );
        let var_sigma = expected_var * (2.0 / (paths as f64 - 1.0)).sqrt();
        assert!(
            (var - expected_var).abs() < 3.0 * var_sigma,
            "var {var} vs {expected_var}"
        );
    }

    #[test]
    fn scs_llr_discriminates_true_from_antipodal() {
        // Records generated from SCS(n₀): λ(n₀, 0) should beat λ(-n₀, 0) in
        // at least 95% of trials.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut wins = 0;
        let trials = 200;
        let wf_rng = &mut ChaCha8Rng::seed_from_u64(78);
        let waveform = ControlWaveform::random(40, 25.0 * PI, wf_rng).unwrap();
        for trial in 0..trials {
            let truth_dir = BlochVector::random_unit(&mut rng);
            let cfg = TrajectoryConfig {
                num_qubits: 50,
                kappa: 1.0,
                total_time: 0.8,
                dt: 1e-4,
                rng_seed: 5000 + trial,
            };
            let truth = simulate_truth(truth_dir, &cfg, &waveform, &[]).unwrap();
            let plus = llr_scs(&truth.record, truth_dir, BlochVector::ZERO, &waveform).unwrap();
            let minus = llr_scs(
                &truth.record,
                truth_dir.scaled(-1.0),
                BlochVector::ZERO,
                &waveform,
            )
            .unwrap();
            assert!(plus.valid && minus.valid);
            if plus.value > minus.value {
                wins += 1;
            }
        }
        assert!(wins >= 190, "true state won only {wins}/{trials}");
    }

    #[test]
    fn candidate_equal_reference_is_zero_for_all_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let waveform = ControlWaveform::random(2, 25.0 * PI, &mut rng).unwrap();
        let record = wiener_record(400, 1e-4, 8, 9);
        let n = BlochVector::from_angles(0.6, 1.0);
        assert_eq!(llr_scs(&record, n, n, &waveform).unwrap().value, 0.0);
        assert_eq!(
            llr_backaction_free(&record, n, n, &waveform).unwrap().value,
            0.0
        );
        let state = spin_coherent(n, 8).unwrap();
        assert_eq!(llr_cse(&record, &state, &state, &waveform).unwrap().value, 0.0);
    }

    #[test]
    fn reference_swap_shifts_all_candidates_equally() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let waveform = ControlWaveform::random(2, 25.0 * PI, &mut rng).unwrap();
        let record = wiener_record(400, 1e-4, 20, 10);
        let candidates: Vec<BlochVector> = (0..12)
            .map(|_| BlochVector::random_unit(&mut rng).scaled(0.9))
            .collect();
        let ref_a = BlochVector::ZERO;
        let ref_b = BlochVector::random_unit(&mut rng).scaled(0.5);
        let with_a: Vec<f64> = candidates
            .iter()
            .map(|&c| llr_scs(&record, c, ref_a, &waveform).unwrap().value)
            .collect();
        let with_b: Vec<f64> = candidates
            .iter()
            .map(|&c| llr_scs(&record, c, ref_b, &waveform).unwrap().value)
            .collect();
        let shift = with_a[0] - with_b[0];
        for (a, b) in with_a.iter().zip(with_b.iter()) {
            assert_abs_diff_eq!(a - b, shift, epsilon = 1e-9 * (1.0 + shift.abs()));
        }
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&with_a), argmax(&with_b));
    }

    #[test]
    fn backaction_free_matches_scs_in_zero_kappa_limit() {
        // Propagate the coherent-state filter on a κ=0 record, then score
        // both z-series with the production κ scaling: identical λ.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let waveform = ControlWaveform::random(3, 25.0 * PI, &mut rng).unwrap();
        let n_steps = 600;
        let dt = 1e-4;
        let kappa = 1.0;
        let num_qubits = 30;
        let record = wiener_record(n_steps, dt, num_qubits, 11);
        let zero_kappa_record =
            MeasurementRecord::new(dt, record.increments.clone(), 0.0, num_qubits, 11).unwrap();
        let candidate = BlochVector::from_angles(1.3, 0.2);
        let reference = BlochVector::from_angles(2.0, -1.1);
        let zc = propagate_scs(&zero_kappa_record, candidate, &waveform).unwrap();
        let zr = propagate_scs(&zero_kappa_record, reference, &waveform).unwrap();
        let m1 = MeanSignalSeries::from_z_series(&zc, kappa, num_qubits, dt).unwrap();
        let m2 = MeanSignalSeries::from_z_series(&zr, kappa, num_qubits, dt).unwrap();
        let via_scs = llr_general(&record, &m1, &m2).unwrap();
        let via_rotation = llr_backaction_free(&record, candidate, reference, &waveform).unwrap();
        assert_eq!(via_scs.value, via_rotation.value);
    }

    #[test]
    fn exact_llr_matches_scs_llr_for_single_qubit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let waveform = ControlWaveform::random(4, 25.0 * PI, &mut rng).unwrap();
        let cfg = TrajectoryConfig {
            num_qubits: 1,
            kappa: 1.0,
            total_time: 0.08,
            dt: 1e-4,
            rng_seed: 21,
        };
        let truth =
            simulate_truth(BlochVector::from_angles(1.0, 0.4), &cfg, &waveform, &[]).unwrap();
        let c = BlochVector::from_angles(0.5, 2.0);
        let r = BlochVector::from_angles(2.5, -0.5);
        let scs = llr_scs(&truth.record, c, r, &waveform).unwrap();
        let cse = llr_cse(
            &truth.record,
            &spin_coherent(c, 1).unwrap(),
            &spin_coherent(r, 1).unwrap(),
            &waveform,
        )
        .unwrap();
        assert_abs_diff_eq!(scs.value, cse.value, epsilon = 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn antisymmetry_is_exact(seed in 0u64..1000, n_steps in 10usize..200) {
            let record = wiener_record(n_steps, 1e-3, 4, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
            let m1 = MeanSignalSeries::new(
                (0..n_steps).map(|_| rng.gen_range(-3.0..3.0)).collect(), 1e-3).unwrap();
            let m2 = MeanSignalSeries::new(
                (0..n_steps).map(|_| rng.gen_range(-3.0..3.0)).collect(), 1e-3).unwrap();
            let ab = llr_general(&record, &m1, &m2).unwrap().value;
            let ba = llr_general(&record, &m2, &m1).unwrap().value;
            prop_assert_eq!(ab, -ba);
        }

        #[test]
        fn telescoping_additivity(seed in 0u64..1000, n_steps in 10usize..200) {
            let record = wiener_record(n_steps, 1e-3, 4, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x123456);
            let mk = |rng: &mut ChaCha8Rng| MeanSignalSeries::new(
                (0..n_steps).map(|_| rng.gen_range(-3.0..3.0)).collect(), 1e-3).unwrap();
            let (m1, m2, m3) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            let direct = llr_general(&record, &m1, &m3).unwrap().value;
            let chained = llr_general(&record, &m1, &m2).unwrap().value
                + llr_general(&record, &m2, &m3).unwrap().value;
            // Algebraically exact; floating point leaves a few ulps.
            prop_assert!((direct - chained).abs() <= 1e-12 * (1.0 + direct.abs()));
        }

        #[test]
        fn zero_models_give_zero(seed in 0u64..1000) {
            let record = wiener_record(50, 1e-3, 4, seed);
            let zero = MeanSignalSeries::new(vec![0.0; 50], 1e-3).unwrap();
            prop_assert_eq!(llr_general(&record, &zero, &zero).unwrap().value, 0.0);
        }
    }
}
