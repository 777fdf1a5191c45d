//! Piecewise-constant randomized control waveforms.
//!
//! The control field is `b(t) = Ω_b · e_i` on the i-th segment, with the
//! segment duration fixed to `τ = π/(2 Ω_b)` so that every segment performs
//! a π/2 rotation about its axis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrajectoryError;
use crate::bloch::BlochVector;

/// One constant-field segment: a unit rotation axis held for `duration`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Segment {
    pub axis: BlochVector,
    pub start_time: f64,
    pub duration: f64,
}

/// A sequence of π/2 rotations about given axes at Larmor frequency `Ω_b`.
///
/// An empty waveform means `b(t) ≡ 0` for all times (the no-control QND
/// case) and is compatible with records of any duration.
#[derive(Debug, Clone)]
pub struct ControlWaveform {
    segments: Vec<Segment>,
    larmor: f64,
}

impl ControlWaveform {
    /// Build a waveform from explicit axes; each axis is normalized and held
    /// for `τ = π/(2·larmor)`.
    pub fn from_axes(axes: Vec<BlochVector>, larmor: f64) -> Result<Self, TrajectoryError> {
        if !(larmor > 0.0) {
            return Err(TrajectoryError::InvalidConfig("larmor must be > 0".into()));
        }
        let tau = std::f64::consts::FRAC_PI_2 / larmor;
        let segments = axes
            .into_iter()
            .enumerate()
            .map(|(i, axis)| {
                // Keep axes that already satisfy the unit-norm invariant so
                // serialization round-trips are exact.
                let axis = if axis.is_unit(1e-12) {
                    axis
                } else {
                    axis.normalized()
                        .ok_or_else(|| TrajectoryError::InvalidConfig("zero rotation axis".into()))?
                };
                Ok(Segment {
                    axis,
                    start_time: i as f64 * tau,
                    duration: tau,
                })
            })
            .collect::<Result<Vec<_>, TrajectoryError>>()?;
        Ok(Self { segments, larmor })
    }

    /// `num_rotations` segments with axes drawn i.i.d. uniformly on the unit
    /// sphere.
    pub fn random<R: Rng + ?Sized>(num_rotations: usize, larmor: f64, rng: &mut R) -> Result<Self, TrajectoryError> {
        let axes = (0..num_rotations)
            .map(|_| BlochVector::random_unit(rng))
            .collect();
        Self::from_axes(axes, larmor)
    }

    /// No controls: `b(t) ≡ 0`.
    pub fn none() -> Self {
        Self {
            segments: Vec::new(),
            larmor: f64::NAN,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn larmor(&self) -> f64 {
        self.larmor
    }

    /// Segment duration `τ = π/(2 Ω_b)`; `None` when there are no controls.
    pub fn tau(&self) -> Option<f64> {
        self.segments.first().map(|s| s.duration)
    }

    /// Total covered time; 0 for the empty waveform.
    pub fn total_time(&self) -> f64 {
        self.segments
            .last()
            .map(|s| s.start_time + s.duration)
            .unwrap_or(0.0)
    }

    /// Number of grid steps per segment, requiring the segment boundaries to
    /// fall exactly on the grid.
    pub(crate) fn steps_per_segment(&self, dt: f64) -> Result<usize, TrajectoryError> {
        let tau = self.tau().expect("non-empty waveform");
        let per = tau / dt;
        if (per - per.round()).abs() > 1e-9 * per.max(1.0) || per.round() < 1.0 {
            return Err(TrajectoryError::GridMismatch(format!(
                "segment duration {tau} is not an integer multiple of dt = {dt}"
            )));
        }
        Ok(per.round() as usize)
    }

    /// Check that the waveform tiles a record of `n_steps · dt` exactly;
    /// the empty waveform covers any duration.
    pub fn check_covers(&self, n_steps: usize, dt: f64) -> Result<(), TrajectoryError> {
        if self.is_empty() {
            return Ok(());
        }
        let per = self.steps_per_segment(dt)?;
        if per * self.segments.len() != n_steps {
            return Err(TrajectoryError::GridMismatch(format!(
                "waveform covers {} steps but the record has {} steps",
                per * self.segments.len(),
                n_steps
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn forty_rotations_at_25_pi_span_0p8() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let wf = ControlWaveform::random(40, 25.0 * PI, &mut rng).unwrap();
        assert_eq!(wf.segments().len(), 40);
        assert_abs_diff_eq!(wf.total_time(), 0.8, epsilon = 1e-12);
        for seg in wf.segments() {
            assert!(seg.axis.is_unit(1e-12));
            // Each segment is a π/2 rotation.
            assert_abs_diff_eq!(wf.larmor() * seg.duration, PI / 2.0, epsilon = 1e-12);
        }
        assert_eq!(wf.steps_per_segment(1e-4).unwrap(), 200);
        wf.check_covers(8000, 1e-4).unwrap();
        assert!(wf.check_covers(8001, 1e-4).is_err());
    }

    #[test]
    fn empty_waveform_covers_anything() {
        let wf = ControlWaveform::none();
        assert_eq!(wf.total_time(), 0.0);
        wf.check_covers(12345, 1e-4).unwrap();
    }

    #[test]
    fn axis_sampling_is_isotropic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let wf = ControlWaveform::random(n, 25.0 * PI, &mut rng).unwrap();
        let mut mean = BlochVector::ZERO;
        for seg in wf.segments() {
            mean = mean + seg.axis;
        }
        mean = mean.scaled(1.0 / n as f64);
        // Per-component std of a uniform direction is sqrt(1/3); allow 3σ.
        let limit = 3.0 * (1.0f64 / 3.0 / n as f64).sqrt();
        for c in [mean.x, mean.y, mean.z] {
            assert!(c.abs() < limit, "component mean {c} exceeds 3σ = {limit}");
        }
    }

    #[test]
    fn rejects_bad_larmor() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(ControlWaveform::random(4, 0.0, &mut rng).is_err());
    }
}
