//! Experiment orchestration: estimator-scaling campaigns, approximation
//! quality studies, squeezing phenomenology, power-law fits, and the
//! plot-ready data files they emit.
//!
//! Everything is deterministic under the master seed: per-trial RNG streams
//! are derived with [`crate::seed::derive`] from `(master, N, trial,
//! purpose)`, so results are bit-identical regardless of thread count or
//! scheduling. Only `meta.json` (timestamps, wall times) varies between
//! runs.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bloch::BlochVector;
use crate::estimator::{
    estimate_backaction_free, estimate_mle, EstimatorConfig, EstimatorError,
};
use crate::io::IoError;
use crate::seed::{self, tag};
use crate::spin::{
    fidelity, q_function, qubit_fidelity, spin_coherent, squeezing_db, squeezing_parameter,
    CollectiveOps,
};
use crate::trajectory::{
    propagate_scs_bloch, ControlWaveform, CsePropagator, MeasurementRecord, TrajectoryError,
};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid campaign configuration: {0}")]
    InvalidConfig(String),
    #[error("power-law fit needs at least 3 strictly positive points")]
    FitUnderdetermined,
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Spin(#[from] crate::spin::SpinError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Which reconstruction runs against each record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    ScsMle,
    BackactionFree,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorKind::ScsMle => write!(f, "scs_mle"),
            EstimatorKind::BackactionFree => write!(f, "backaction_free"),
        }
    }
}

fn default_kappa() -> f64 {
    1.0
}

fn default_shared_waveform() -> bool {
    true
}

/// Full description of a scaling campaign. Unknown JSON keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub qubit_counts: Vec<usize>,
    /// Trials ν per qubit count (one noise realization per trial).
    pub trials_per_n: usize,
    pub num_rotations: usize,
    /// Larmor frequency Ω_b in units of κ.
    pub larmor: f64,
    pub total_time: f64,
    pub dt: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    pub estimator: EstimatorConfig,
    pub master_seed: u64,
    /// One waveform drawn from the master seed and shared across all trials
    /// (default), versus a fresh waveform per trial.
    #[serde(default = "default_shared_waveform")]
    pub shared_waveform: bool,
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.qubit_counts.is_empty() || self.qubit_counts.iter().any(|&n| n == 0) {
            return Err(CampaignError::InvalidConfig(
                "qubit_counts must be non-empty, all ≥ 1".into(),
            ));
        }
        if self.trials_per_n == 0 {
            return Err(CampaignError::InvalidConfig("trials_per_n must be ≥ 1".into()));
        }
        if !(self.kappa > 0.0) || !(self.dt > 0.0) || !(self.total_time > 0.0) {
            return Err(CampaignError::InvalidConfig(
                "kappa, dt and total_time must be > 0".into(),
            ));
        }
        if self.num_rotations > 0 {
            if !(self.larmor > 0.0) {
                return Err(CampaignError::InvalidConfig("larmor must be > 0".into()));
            }
            let implied = self.num_rotations as f64 * std::f64::consts::FRAC_PI_2 / self.larmor;
            if (implied - self.total_time).abs() > 1e-9 * self.total_time {
                return Err(CampaignError::InvalidConfig(format!(
                    "total_time {} inconsistent with num_rotations·π/(2·larmor) = {implied}",
                    self.total_time
                )));
            }
        }
        let steps = self.total_time / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(CampaignError::InvalidConfig(
                "total_time/dt must be an integer number of steps".into(),
            ));
        }
        self.estimator.validate()?;
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.total_time / self.dt).round() as usize
    }
}

/// One trial outcome; `estimate`/`infidelity` are `None` when the trial
/// failed (coarse-step guard or an all-invalid estimator stage).
#[derive(Debug, Clone)]
pub struct CampaignRow {
    pub num_qubits: usize,
    pub trial: usize,
    pub truth: BlochVector,
    pub estimate: Option<BlochVector>,
    pub infidelity: Option<f64>,
    pub kind: EstimatorKind,
    pub n_invalid: usize,
    pub wall_time: Duration,
}

/// Per-N summary; `std_error = sqrt(Var[1-F]/ν)` over valid trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NAggregate {
    pub num_qubits: usize,
    pub mean_infidelity: f64,
    pub std_error: f64,
    pub n_valid: usize,
    pub n_failed: usize,
}

/// Ordinary-least-squares power law `y = a·N^b` fitted in log-log space.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub b: f64,
    pub a_err: f64,
    pub b_err: f64,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub kind: EstimatorKind,
    pub rows: Vec<CampaignRow>,
    pub aggregates: Vec<NAggregate>,
    /// Absent when fewer than 3 qubit counts have valid aggregates.
    pub fit: Option<PowerLawFit>,
    pub failed_fraction: f64,
}

/// Unweighted OLS of `ln y` on `ln N`; parameter standard errors from the
/// residual variance.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit, CampaignError> {
    if points.len() < 3 || points.iter().any(|&(n, y)| !(n > 0.0) || !(y > 0.0)) {
        return Err(CampaignError::FitUnderdetermined);
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(x, _)| x.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, y)| y.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    if sxx == 0.0 {
        return Err(CampaignError::FitUnderdetermined);
    }
    let b = sxy / sxx;
    let intercept = y_mean - b * x_mean;
    let ssr: f64 = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| (y - (intercept + b * x)).powi(2))
        .sum();
    let dof = (points.len() - 2).max(1) as f64;
    let s2 = ssr / dof;
    let b_err = (s2 / sxx).sqrt();
    let intercept_err = (s2 * (1.0 / n + x_mean * x_mean / sxx)).sqrt();
    let a = intercept.exp();
    Ok(PowerLawFit {
        a,
        b,
        a_err: a * intercept_err,
        b_err,
    })
}

fn trial_waveform(
    config: &CampaignConfig,
    num_qubits: usize,
    trial: usize,
) -> Result<ControlWaveform, CampaignError> {
    if config.num_rotations == 0 {
        return Ok(ControlWaveform::none());
    }
    let mut rng = seed::rng(
        config.master_seed,
        &[tag::WAVEFORM, num_qubits as u64, trial as u64],
    );
    Ok(ControlWaveform::random(
        config.num_rotations,
        config.larmor,
        &mut rng,
    )?)
}

fn run_trial(
    config: &CampaignConfig,
    kind: EstimatorKind,
    num_qubits: usize,
    trial: usize,
    waveform: &ControlWaveform,
    propagator: &CsePropagator,
) -> Result<CampaignRow, CampaignError> {
    let start = Instant::now();
    let mut truth_rng = seed::rng(
        config.master_seed,
        &[tag::TRUTH, num_qubits as u64, trial as u64],
    );
    let truth_dir = BlochVector::random_unit(&mut truth_rng);
    let noise_seed = seed::derive(
        config.master_seed,
        &[tag::TRUTH, num_qubits as u64, trial as u64, 1],
    );
    let failed = |truth: BlochVector, elapsed: Duration| CampaignRow {
        num_qubits,
        trial,
        truth,
        estimate: None,
        infidelity: None,
        kind,
        n_invalid: 0,
        wall_time: elapsed,
    };
    let truth = match propagator.simulate_truth(truth_dir, config.n_steps(), noise_seed, &[]) {
        Ok(t) => t,
        Err(TrajectoryError::StepTooCoarse { .. }) | Err(TrajectoryError::Instability { .. }) => {
            return Ok(failed(truth_dir, start.elapsed()))
        }
        Err(e) => return Err(e.into()),
    };
    let mut est_config = config.estimator.clone();
    est_config.rng_seed = seed::derive(
        config.master_seed,
        &[tag::ESTIMATOR, num_qubits as u64, trial as u64],
    );
    let report = match kind {
        EstimatorKind::ScsMle => estimate_mle(&truth.record, waveform, &est_config),
        EstimatorKind::BackactionFree => {
            estimate_backaction_free(&truth.record, waveform, &est_config)
        }
    };
    let report = match report {
        Ok(r) => r,
        Err(EstimatorError::AllCandidatesInvalid { .. }) => {
            return Ok(failed(truth_dir, start.elapsed()))
        }
        Err(e) => return Err(e.into()),
    };
    let infidelity = 1.0 - qubit_fidelity(truth_dir, report.estimate);
    Ok(CampaignRow {
        num_qubits,
        trial,
        truth: truth_dir,
        estimate: Some(report.estimate),
        infidelity: Some(infidelity),
        kind,
        n_invalid: report.n_invalid,
        wall_time: start.elapsed(),
    })
}

fn aggregate_rows(rows: &[CampaignRow], qubit_counts: &[usize]) -> Vec<NAggregate> {
    qubit_counts
        .iter()
        .map(|&n| {
            let infids: Vec<f64> = rows
                .iter()
                .filter(|r| r.num_qubits == n)
                .filter_map(|r| r.infidelity)
                .collect();
            let n_failed = rows
                .iter()
                .filter(|r| r.num_qubits == n && r.infidelity.is_none())
                .count();
            let count = infids.len();
            let mean = if count > 0 {
                infids.iter().sum::<f64>() / count as f64
            } else {
                f64::NAN
            };
            let std_error = if count > 1 {
                let var = infids.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                    / (count as f64 - 1.0);
                (var / count as f64).sqrt()
            } else {
                0.0
            };
            NAggregate {
                num_qubits: n,
                mean_infidelity: mean,
                std_error,
                n_valid: count,
                n_failed,
            }
        })
        .collect()
}

/// Run a full campaign: for every `(N, trial)`, draw a uniformly random true
/// state, synthesize a record, reconstruct it with `kind`, and score the
/// infidelity. `threads` bounds the worker pool (`None` = rayon default).
pub fn run_campaign(
    config: &CampaignConfig,
    kind: EstimatorKind,
    threads: Option<usize>,
) -> Result<CampaignResult, CampaignError> {
    config.validate()?;
    let body = || -> Result<Vec<CampaignRow>, CampaignError> {
        let mut rows = Vec::with_capacity(config.qubit_counts.len() * config.trials_per_n);
        for &n in &config.qubit_counts {
            let shared = if config.shared_waveform {
                let wf = trial_waveform(config, 0, 0)?;
                let prop = CsePropagator::new(n, config.kappa, config.dt, &wf)?;
                Some((wf, prop))
            } else {
                None
            };
            let mut n_rows: Vec<CampaignRow> = (0..config.trials_per_n)
                .into_par_iter()
                .map(|trial| match &shared {
                    Some((wf, prop)) => run_trial(config, kind, n, trial, wf, prop),
                    None => {
                        let wf = trial_waveform(config, n, trial)?;
                        let prop = CsePropagator::new(n, config.kappa, config.dt, &wf)?;
                        run_trial(config, kind, n, trial, &wf, &prop)
                    }
                })
                .collect::<Result<_, _>>()?;
            rows.append(&mut n_rows);
        }
        Ok(rows)
    };
    let mut rows = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CampaignError::InvalidConfig(e.to_string()))?
            .install(body)?,
        None => body()?,
    };
    rows.sort_by_key(|r| (r.num_qubits, r.trial));
    let aggregates = aggregate_rows(&rows, &config.qubit_counts);
    let fit_points: Vec<(f64, f64)> = aggregates
        .iter()
        .filter(|a| a.n_valid > 0 && a.mean_infidelity > 0.0)
        .map(|a| (a.num_qubits as f64, a.mean_infidelity))
        .collect();
    let fit = fit_power_law(&fit_points).ok();
    let failed = rows.iter().filter(|r| r.infidelity.is_none()).count();
    let failed_fraction = failed as f64 / rows.len() as f64;
    Ok(CampaignResult {
        kind,
        rows,
        aggregates,
        fit,
        failed_fraction,
    })
}

/// Render the trial table with the stable column layout
/// `N,trial,truth_x,truth_y,truth_z,est_x,est_y,est_z,infidelity,kind,n_invalid`.
pub fn render_rows_csv(result: &CampaignResult) -> String {
    let mut out = String::from(
        "N,trial,truth_x,truth_y,truth_z,est_x,est_y,est_z,infidelity,kind,n_invalid\n",
    );
    for r in &result.rows {
        let est = r.estimate.unwrap_or(BlochVector::new(f64::NAN, f64::NAN, f64::NAN));
        let infid = r.infidelity.unwrap_or(f64::NAN);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.num_qubits,
            r.trial,
            r.truth.x,
            r.truth.y,
            r.truth.z,
            est.x,
            est.y,
            est.z,
            infid,
            r.kind,
            r.n_invalid
        ));
    }
    out
}

#[derive(Serialize)]
struct AggregateFile<'a> {
    kind: EstimatorKind,
    aggregates: &'a [NAggregate],
    failed_fraction: f64,
    config: &'a CampaignConfig,
}

/// Write `rows.csv`, `aggregate.json`, `fit.json` (when a fit exists) and
/// the `meta.json` sidecar (the only file carrying timestamps).
pub fn write_campaign_outputs(
    result: &CampaignResult,
    config: &CampaignConfig,
    dir: &Path,
    wall_time: Duration,
    threads: Option<usize>,
) -> Result<(), IoError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("rows.csv"), render_rows_csv(result))?;
    let aggregate = AggregateFile {
        kind: result.kind,
        aggregates: &result.aggregates,
        failed_fraction: result.failed_fraction,
        config,
    };
    let mut w = BufWriter::new(File::create(dir.join("aggregate.json"))?);
    serde_json::to_writer_pretty(&mut w, &aggregate).map_err(IoError::Json)?;
    w.flush()?;
    if let Some(fit) = &result.fit {
        let mut w = BufWriter::new(File::create(dir.join("fit.json"))?);
        serde_json::to_writer_pretty(&mut w, fit).map_err(IoError::Json)?;
        w.flush()?;
    }
    let meta = serde_json::json!({
        "wall_time_seconds": wall_time.as_secs_f64(),
        "threads": threads,
        "unix_timestamp": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    let mut w = BufWriter::new(File::create(dir.join("meta.json"))?);
    serde_json::to_writer_pretty(&mut w, &meta).map_err(IoError::Json)?;
    w.flush()?;
    Ok(())
}

/// Configuration of an approximation-quality study (exact filter versus
/// coherent-state filter on shared records).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxStudyConfig {
    pub qubit_counts: Vec<usize>,
    pub trials: usize,
    pub with_controls: bool,
    pub num_rotations: usize,
    pub larmor: f64,
    pub total_time: f64,
    pub dt: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Fidelity snapshot cadence in steps.
    pub snapshot_stride: usize,
    pub master_seed: u64,
}

/// Time series of one `(N, controls)` study cell.
#[derive(Debug, Clone, Serialize)]
pub struct ApproxStudySeries {
    pub num_qubits: usize,
    pub with_controls: bool,
    /// Snapshot times for the fidelity series.
    pub fidelity_times: Vec<f64>,
    pub mean_fidelity: Vec<f64>,
    /// Full-grid times for the z-error series.
    pub zerr_times: Vec<f64>,
    pub rms_z_err: Vec<f64>,
}

/// Co-propagate the exact filter (truth) and the coherent-state filter on
/// identical records; aggregate the state fidelity and the RMS z-error over
/// `trials` random initial states.
pub fn run_approximation_study(
    config: &ApproxStudyConfig,
) -> Result<Vec<ApproxStudySeries>, CampaignError> {
    if config.trials == 0 || config.snapshot_stride == 0 {
        return Err(CampaignError::InvalidConfig(
            "trials and snapshot_stride must be ≥ 1".into(),
        ));
    }
    let n_steps = (config.total_time / config.dt).round() as usize;
    let waveform = if config.with_controls {
        let mut rng = seed::rng(config.master_seed, &[tag::WAVEFORM]);
        ControlWaveform::random(config.num_rotations, config.larmor, &mut rng)?
    } else {
        ControlWaveform::none()
    };
    let snapshot_steps: Vec<usize> = (0..=n_steps).step_by(config.snapshot_stride).collect();
    let mut out = Vec::with_capacity(config.qubit_counts.len());
    for &n in &config.qubit_counts {
        let propagator = CsePropagator::new(n, config.kappa, config.dt, &waveform)?;
        let j = n as f64 / 2.0;
        let per_trial: Vec<(Vec<f64>, Vec<f64>)> = (0..config.trials)
            .into_par_iter()
            .map(|trial| -> Result<(Vec<f64>, Vec<f64>), CampaignError> {
                let mut rng = seed::rng(
                    config.master_seed,
                    &[tag::TRUTH, n as u64, trial as u64],
                );
                let dir = BlochVector::random_unit(&mut rng);
                let noise_seed = seed::derive(
                    config.master_seed,
                    &[tag::TRUTH, n as u64, trial as u64, 1],
                );
                let truth =
                    propagator.simulate_truth(dir, n_steps, noise_seed, &snapshot_steps)?;
                let bloch = propagate_scs_bloch(&truth.record, dir, &waveform)?;
                let fids = truth
                    .snapshots
                    .iter()
                    .map(|(step, state)| {
                        let approx_dir = bloch[*step]
                            .normalized()
                            .unwrap_or(BlochVector::Z);
                        let scs = spin_coherent(approx_dir, n)?;
                        Ok(fidelity(state, &scs)?)
                    })
                    .collect::<Result<Vec<f64>, CampaignError>>()?;
                let sq_err: Vec<f64> = truth
                    .jz
                    .iter()
                    .zip(bloch.iter())
                    .map(|(jz, nvec)| (jz / j - nvec.z).powi(2))
                    .collect();
                Ok((fids, sq_err))
            })
            .collect::<Result<_, _>>()?;
        let trials = per_trial.len() as f64;
        let mut mean_fidelity = vec![0.0; snapshot_steps.len()];
        let mut mean_sq = vec![0.0; n_steps + 1];
        for (fids, sq) in &per_trial {
            for (slot, f) in mean_fidelity.iter_mut().zip(fids.iter()) {
                *slot += f / trials;
            }
            for (slot, e) in mean_sq.iter_mut().zip(sq.iter()) {
                *slot += e / trials;
            }
        }
        out.push(ApproxStudySeries {
            num_qubits: n,
            with_controls: config.with_controls,
            fidelity_times: snapshot_steps.iter().map(|&s| s as f64 * config.dt).collect(),
            mean_fidelity,
            zerr_times: (0..=n_steps).map(|s| s as f64 * config.dt).collect(),
            rms_z_err: mean_sq.into_iter().map(f64::sqrt).collect(),
        });
    }
    Ok(out)
}

pub fn write_approx_study_csv(series: &[ApproxStudySeries], dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir)?;
    for s in series {
        let suffix = format!(
            "n{}_{}",
            s.num_qubits,
            if s.with_controls { "controls" } else { "qnd" }
        );
        let mut w = BufWriter::new(File::create(dir.join(format!("fidelity_{suffix}.csv")))?);
        writeln!(w, "t,mean_fidelity")?;
        for (t, f) in s.fidelity_times.iter().zip(s.mean_fidelity.iter()) {
            writeln!(w, "{t},{f}")?;
        }
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join(format!("zerr_{suffix}.csv")))?);
        writeln!(w, "t,rms_z_err")?;
        for (t, e) in s.zerr_times.iter().zip(s.rms_z_err.iter()) {
            writeln!(w, "{t},{e}")?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Configuration of a single squeezing trajectory demo.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SqueezeDemoConfig {
    pub num_qubits: usize,
    pub with_controls: bool,
    pub num_rotations: usize,
    pub larmor: f64,
    pub total_time: f64,
    pub dt: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    pub seed: u64,
    /// Squeezing evaluation cadence in steps.
    pub squeezing_stride: usize,
    /// Times (units of 1/κ) at which Q-function grids are emitted.
    pub q_times: Vec<f64>,
    pub q_theta_points: usize,
    pub q_phi_points: usize,
}

impl SqueezeDemoConfig {
    /// Standard demo scale: 75 qubits polarized along x, κT = 0.2, Q-function
    /// snapshots at κt = 0, 0.03, 0.1, 0.2.
    pub fn standard(with_controls: bool, seed: u64) -> Self {
        Self {
            num_qubits: 75,
            with_controls,
            num_rotations: 10,
            larmor: 25.0 * std::f64::consts::PI,
            total_time: 0.2,
            dt: 1e-4,
            kappa: 1.0,
            seed,
            squeezing_stride: 100,
            q_times: vec![0.0, 0.03, 0.1, 0.2],
            q_theta_points: 60,
            q_phi_points: 120,
        }
    }
}

/// A Q-function evaluated on a regular midpoint grid, stored row-major over
/// `(theta, phi)`.
#[derive(Debug, Clone, Serialize)]
pub struct QFunctionGrid {
    pub time: f64,
    pub thetas: Vec<f64>,
    pub phis: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SqueezeDemoResult {
    pub times: Vec<f64>,
    pub squeezing: Vec<f64>,
    pub squeezing_db: Vec<f64>,
    pub record: MeasurementRecord,
    pub q_snapshots: Vec<QFunctionGrid>,
}

/// Simulate one trajectory from the coherent state along +x and report the
/// squeezing-parameter trace, the raw record, and Q-function snapshots.
pub fn run_squeezing_demo(config: &SqueezeDemoConfig) -> Result<SqueezeDemoResult, CampaignError> {
    if config.squeezing_stride == 0 {
        return Err(CampaignError::InvalidConfig("squeezing_stride must be ≥ 1".into()));
    }
    let n_steps = (config.total_time / config.dt).round() as usize;
    let waveform = if config.with_controls {
        let mut rng = seed::rng(config.seed, &[tag::WAVEFORM]);
        ControlWaveform::random(config.num_rotations, config.larmor, &mut rng)?
    } else {
        ControlWaveform::none()
    };
    let mut snapshot_steps: Vec<usize> = (0..=n_steps).step_by(config.squeezing_stride).collect();
    if snapshot_steps.last() != Some(&n_steps) {
        snapshot_steps.push(n_steps);
    }
    let mut q_steps: Vec<usize> = config
        .q_times
        .iter()
        .map(|t| (t / config.dt).round() as usize)
        .collect();
    q_steps.retain(|&s| s <= n_steps);
    let mut all_steps = snapshot_steps.clone();
    all_steps.extend(&q_steps);
    all_steps.sort_unstable();
    all_steps.dedup();

    let propagator = CsePropagator::new(config.num_qubits, config.kappa, config.dt, &waveform)?;
    let noise_seed = seed::derive(config.seed, &[tag::TRUTH]);
    let truth = propagator.simulate_truth(BlochVector::X, n_steps, noise_seed, &all_steps)?;

    let ops = CollectiveOps::new(config.num_qubits)?;
    let mut times = Vec::new();
    let mut squeezing = Vec::new();
    for (step, state) in &truth.snapshots {
        if snapshot_steps.contains(step) {
            times.push(*step as f64 * config.dt);
            squeezing.push(squeezing_parameter(state, &ops)?);
        }
    }

    let (n_theta, n_phi) = (config.q_theta_points, config.q_phi_points);
    let d_theta = std::f64::consts::PI / n_theta as f64;
    let d_phi = std::f64::consts::TAU / n_phi as f64;
    let thetas: Vec<f64> = (0..n_theta).map(|i| (i as f64 + 0.5) * d_theta).collect();
    let phis: Vec<f64> = (0..n_phi).map(|i| (i as f64 + 0.5) * d_phi).collect();
    let grid: Vec<(f64, f64)> = thetas
        .iter()
        .flat_map(|&t| phis.iter().map(move |&p| (t, p)))
        .collect();
    let q_snapshots = truth
        .snapshots
        .iter()
        .filter(|(step, _)| q_steps.contains(step))
        .map(|(step, state)| QFunctionGrid {
            time: *step as f64 * config.dt,
            thetas: thetas.clone(),
            phis: phis.clone(),
            values: q_function(state, &grid),
        })
        .collect();

    Ok(SqueezeDemoResult {
        times,
        squeezing_db: squeezing.iter().map(|&x| squeezing_db(x)).collect(),
        squeezing,
        record: truth.record,
        q_snapshots,
    })
}

pub fn write_squeeze_demo_outputs(
    result: &SqueezeDemoResult,
    dir: &Path,
) -> Result<(), IoError> {
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("squeezing.csv"))?);
    writeln!(w, "t,xi_squared,xi_squared_db")?;
    for ((t, xi2), db) in result
        .times
        .iter()
        .zip(result.squeezing.iter())
        .zip(result.squeezing_db.iter())
    {
        writeln!(w, "{t},{xi2},{db}")?;
    }
    w.flush()?;
    crate::io::write_record_csv(&result.record, &dir.join("record.csv"))?;
    for q in &result.q_snapshots {
        let mut w = BufWriter::new(File::create(dir.join(format!("qfunc_{:.3}.csv", q.time)))?);
        writeln!(w, "theta,phi,q")?;
        for (i, &theta) in q.thetas.iter().enumerate() {
            for (k, &phi) in q.phis.iter().enumerate() {
                writeln!(w, "{theta},{phi},{}", q.values[i * q.phis.len() + k])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn fit_recovers_exact_power_law() {
        let points: Vec<(f64, f64)> = [25.0, 40.0, 55.0, 70.0, 85.0, 100.0]
            .iter()
            .map(|&n| (n, 2.0 / n))
            .collect();
        let fit = fit_power_law(&points).unwrap();
        assert_abs_diff_eq!(fit.a, 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.b, -1.0, epsilon = 1e-10);
        assert!(fit.b_err < 1e-10);
    }

    #[test]
    fn fit_recovers_published_scaling_points() {
        // Points on the 0.69·N^-0.89 curve at the published qubit counts.
        let points: Vec<(f64, f64)> = [25.0f64, 40.0, 55.0, 70.0, 85.0, 100.0]
            .iter()
            .map(|&n| (n, 0.69 * n.powf(-0.89)))
            .collect();
        let fit = fit_power_law(&points).unwrap();
        assert!((fit.b + 0.89).abs() < 0.1, "b = {}", fit.b);
        assert!((fit.a - 0.69).abs() < 0.05, "a = {}", fit.a);
    }

    #[test]
    fn fit_survives_multiplicative_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut recovered = Vec::new();
        for _ in 0..100 {
            let points: Vec<(f64, f64)> = [25.0, 40.0, 55.0, 70.0, 85.0, 100.0]
                .iter()
                .map(|&n| {
                    let noise: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal);
                    (n, (1.0 / n) * (0.1 * noise).exp())
                })
                .collect();
            recovered.push(fit_power_law(&points).unwrap().b);
        }
        let mean = recovered.iter().sum::<f64>() / recovered.len() as f64;
        assert!((mean + 1.0).abs() < 0.15, "mean recovered b = {mean}");
    }

    #[test]
    fn fit_rejects_underdetermined_input() {
        assert!(matches!(
            fit_power_law(&[(10.0, 0.1), (20.0, 0.05)]),
            Err(CampaignError::FitUnderdetermined)
        ));
        assert!(fit_power_law(&[(10.0, 0.1), (20.0, 0.0), (30.0, 0.1)]).is_err());
    }

    fn smoke_config() -> CampaignConfig {
        CampaignConfig {
            qubit_counts: vec![10],
            trials_per_n: 5,
            num_rotations: 4,
            larmor: 25.0 * PI,
            total_time: 0.08,
            dt: 1e-4,
            kappa: 1.0,
            estimator: EstimatorConfig {
                m1_count: 30,
                m2_count: 30,
                baseline_count: 50,
                ..EstimatorConfig::default()
            },
            master_seed: 5,
            shared_waveform: true,
            output_dir: None,
        }
    }

    #[test]
    fn smoke_campaign_emits_wellformed_results() {
        let config = smoke_config();
        let result = run_campaign(&config, EstimatorKind::ScsMle, None).unwrap();
        assert_eq!(result.rows.len(), 5);
        assert_eq!(result.failed_fraction, 0.0);
        for row in &result.rows {
            let infid = row.infidelity.unwrap();
            assert!((0.0..=1.0).contains(&infid));
            assert!(row.estimate.unwrap().is_unit(1e-12));
        }
        // Single qubit count: no fit.
        assert!(result.fit.is_none());
        let agg = &result.aggregates[0];
        assert_eq!(agg.n_valid, 5);
        // Aggregate self-consistency against the rows.
        let mean = result
            .rows
            .iter()
            .filter_map(|r| r.infidelity)
            .sum::<f64>()
            / 5.0;
        assert_abs_diff_eq!(agg.mean_infidelity, mean, epsilon = 1e-15);
        let csv = render_rows_csv(&result);
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.starts_with("N,trial,truth_x"));
    }

    #[test]
    fn campaign_is_identical_across_thread_counts() {
        let config = smoke_config();
        let one = run_campaign(&config, EstimatorKind::ScsMle, Some(1)).unwrap();
        let four = run_campaign(&config, EstimatorKind::ScsMle, Some(4)).unwrap();
        assert_eq!(render_rows_csv(&one), render_rows_csv(&four));
    }

    #[test]
    fn config_consistency_is_enforced() {
        let mut config = smoke_config();
        config.total_time = 0.1; // inconsistent with 4 rotations at 25π
        assert!(matches!(
            config.validate(),
            Err(CampaignError::InvalidConfig(_))
        ));
        let mut config = smoke_config();
        config.trials_per_n = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn per_trial_waveforms_differ_from_shared() {
        let mut config = smoke_config();
        config.trials_per_n = 2;
        let shared = run_campaign(&config, EstimatorKind::ScsMle, None).unwrap();
        config.shared_waveform = false;
        let fresh = run_campaign(&config, EstimatorKind::ScsMle, None).unwrap();
        assert_ne!(
            shared.rows[0].estimate.unwrap(),
            fresh.rows[0].estimate.unwrap()
        );
    }

    #[test]
    fn single_qubit_study_has_unit_fidelity() {
        let config = ApproxStudyConfig {
            qubit_counts: vec![1],
            trials: 4,
            with_controls: true,
            num_rotations: 4,
            larmor: 25.0 * PI,
            total_time: 0.08,
            dt: 1e-4,
            kappa: 1.0,
            snapshot_stride: 100,
            master_seed: 3,
        };
        let series = run_approximation_study(&config).unwrap();
        assert_eq!(series.len(), 1);
        for f in &series[0].mean_fidelity {
            assert!(*f > 1.0 - 1e-6, "fidelity {f}");
        }
        for e in &series[0].rms_z_err {
            assert!(*e < 1e-6, "z error {e}");
        }
    }

    #[test]
    fn squeeze_demo_initial_state_is_unsqueezed_equatorial() {
        let mut config = SqueezeDemoConfig::standard(false, 9);
        config.num_qubits = 30;
        config.total_time = 0.05;
        config.q_times = vec![0.0];
        let result = run_squeezing_demo(&config).unwrap();
        // ξ² starts at 1 (0 dB) for a coherent state.
        assert_abs_diff_eq!(result.squeezing[0], 1.0, epsilon = 1e-8);
        // Q-function at t=0 peaks on the equator toward +x.
        let q = &result.q_snapshots[0];
        let (best, _) = q
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let theta = q.thetas[best / q.phis.len()];
        let phi = q.phis[best % q.phis.len()];
        assert!((theta - PI / 2.0).abs() < PI / config.q_theta_points as f64);
        assert!(phi.min(std::f64::consts::TAU - phi) < std::f64::consts::TAU / config.q_phi_points as f64);
    }
}
