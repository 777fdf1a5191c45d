//! Command-line harness for collective-spin measurement simulation and
//! initial-state estimation.
//!
//! Subcommands: `simulate` (one trajectory → record files), `estimate`
//! (reconstruct a recorded trajectory), `campaign` (estimator scaling with
//! power-law fit), `approx-study` (coherent-state approximation quality),
//! `squeeze-demo` (squeezing trace plus Q-function snapshots) and `fit`
//! (power-law fit of tabulated points).
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical-failure budget
//! exceeded (more than 5% failed trials).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use spintomo_core::bloch::BlochVector;
use spintomo_core::campaign::{
    fit_power_law, run_approximation_study, run_campaign, run_squeezing_demo,
    write_approx_study_csv, write_campaign_outputs, write_squeeze_demo_outputs,
    ApproxStudyConfig, CampaignConfig, EstimatorKind, SqueezeDemoConfig,
};
use spintomo_core::estimator::{estimate_backaction_free, estimate_mle, EstimatorConfig};
use spintomo_core::io::{
    read_record_binary, read_record_csv, read_waveform_json, write_record_binary,
    write_record_csv, write_waveform_json,
};
use spintomo_core::trajectory::{simulate_truth, ControlWaveform, TrajectoryConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_FAILURE_BUDGET: u8 = 3;
/// Failed-trial fraction beyond which a campaign exits nonzero.
const FAILURE_BUDGET: f64 = 0.05;

#[derive(Parser)]
#[command(
    name = "spintomo",
    version,
    about = "Collective-spin continuous-measurement simulator and state estimator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory and write the record and waveform files.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// JSON file with a trajectory configuration.
        #[arg(long)]
        config: PathBuf,
        /// Number of randomized π/2 rotations (0 = no controls).
        #[arg(long, default_value_t = 40)]
        rotations: usize,
        /// Larmor frequency in units of κ.
        #[arg(long, default_value_t = 25.0 * std::f64::consts::PI)]
        larmor: f64,
    },
    /// Reconstruct the initial state from a stored record and waveform.
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
        /// Record file (.qrec binary or .csv).
        #[arg(long)]
        record: PathBuf,
        /// Waveform JSON file.
        #[arg(long)]
        waveform: PathBuf,
        /// Optional estimator configuration JSON (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the backaction-free baseline instead of the two-step search.
        #[arg(long)]
        backaction_free: bool,
    },
    /// Run an estimator-scaling campaign from a JSON configuration.
    Campaign {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        config: PathBuf,
        /// Estimator to run: scs-mle or backaction-free.
        #[arg(long, default_value = "scs-mle")]
        kind: String,
    },
    /// Compare exact and coherent-state filters on shared records.
    ApproxStudy {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        config: PathBuf,
    },
    /// Squeezing trace, record and Q-function snapshots for one trajectory.
    SqueezeDemo {
        #[command(flatten)]
        common: CommonArgs,
        /// Optional JSON configuration; defaults to the standard demo scale.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Apply randomized control rotations.
        #[arg(long)]
        controls: bool,
    },
    /// Fit a·N^b to `N,value` CSV rows (header line allowed).
    Fit {
        /// Input CSV with two columns: N,value.
        #[arg(long)]
        input: PathBuf,
        /// Output JSON path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("bad config {}: {e}", path.display()))
}

fn run_simulate(
    common: &CommonArgs,
    config_path: &Path,
    rotations: usize,
    larmor: f64,
) -> anyhow::Result<u8> {
    let mut config: TrajectoryConfig = read_json_config(config_path)?;
    if let Some(seed) = common.seed {
        config.rng_seed = seed;
    }
    config.validate()?;
    let waveform = if rotations > 0 {
        let mut rng =
            spintomo_core::seed::rng(config.rng_seed, &[spintomo_core::seed::tag::WAVEFORM]);
        ControlWaveform::random(rotations, larmor, &mut rng)?
    } else {
        ControlWaveform::none()
    };
    let truth = simulate_truth(BlochVector::X, &config, &waveform, &[])?;
    std::fs::create_dir_all(&common.out)?;
    write_record_binary(&truth.record, &common.out.join("record_0.qrec"))?;
    write_record_csv(&truth.record, &common.out.join("record_0.csv"))?;
    write_waveform_json(&waveform, &common.out.join("waveform.json"))?;
    println!(
        "simulated N={} for {} steps; final <Jz>/J = {:.4}",
        config.num_qubits,
        truth.record.n_steps(),
        truth.jz.last().unwrap() / (config.num_qubits as f64 / 2.0)
    );
    Ok(0)
}

fn read_record(path: &Path) -> anyhow::Result<spintomo_core::trajectory::MeasurementRecord> {
    if path.extension().map(|e| e == "csv").unwrap_or(false) {
        Ok(read_record_csv(path)?)
    } else {
        Ok(read_record_binary(path)?)
    }
}

fn run_estimate(
    common: &CommonArgs,
    record_path: &Path,
    waveform_path: &Path,
    config_path: Option<&Path>,
    backaction_free: bool,
) -> anyhow::Result<u8> {
    let record = read_record(record_path)?;
    let waveform = read_waveform_json(waveform_path)?;
    let mut config: EstimatorConfig = match config_path {
        Some(p) => read_json_config(p)?,
        None => EstimatorConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.rng_seed = seed;
    }
    let report = if backaction_free {
        estimate_backaction_free(&record, &waveform, &config)?
    } else {
        estimate_mle(&record, &waveform, &config)?
    };
    std::fs::create_dir_all(&common.out)?;
    let out = common.out.join("estimate.json");
    std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "estimate: ({:.6}, {:.6}, {:.6}), {} invalid candidates; wrote {}",
        report.estimate.x,
        report.estimate.y,
        report.estimate.z,
        report.n_invalid,
        out.display()
    );
    Ok(0)
}

fn run_campaign_cmd(common: &CommonArgs, config_path: &Path, kind: &str) -> anyhow::Result<u8> {
    let mut config: CampaignConfig = read_json_config(config_path)?;
    if let Some(seed) = common.seed {
        config.master_seed = seed;
    }
    let kind = match kind {
        "scs-mle" | "scs_mle" => EstimatorKind::ScsMle,
        "backaction-free" | "backaction_free" => EstimatorKind::BackactionFree,
        other => anyhow::bail!("unknown estimator kind {other:?}"),
    };
    let started = Instant::now();
    let result = run_campaign(&config, kind, common.threads)?;
    let out_dir = config
        .output_dir
        .clone()
        .map(PathBuf::from)
        .unwrap_or_else(|| common.out.clone());
    write_campaign_outputs(&result, &config, &out_dir, started.elapsed(), common.threads)?;
    for agg in &result.aggregates {
        println!(
            "N={:4}  mean infidelity {:.5} +/- {:.5}  ({} valid, {} failed)",
            agg.num_qubits, agg.mean_infidelity, agg.std_error, agg.n_valid, agg.n_failed
        );
    }
    if let Some(fit) = &result.fit {
        println!(
            "fit: a = {:.4} +/- {:.4}, b = {:.4} +/- {:.4}",
            fit.a, fit.a_err, fit.b, fit.b_err
        );
    }
    println!("outputs in {}", out_dir.display());
    if result.failed_fraction > FAILURE_BUDGET {
        eprintln!(
            "failure budget exceeded: {:.1}% of trials failed",
            100.0 * result.failed_fraction
        );
        return Ok(EXIT_FAILURE_BUDGET);
    }
    Ok(0)
}

fn run_approx_study_cmd(common: &CommonArgs, config_path: &Path) -> anyhow::Result<u8> {
    let mut config: ApproxStudyConfig = read_json_config(config_path)?;
    if let Some(seed) = common.seed {
        config.master_seed = seed;
    }
    let series = run_approximation_study(&config)?;
    write_approx_study_csv(&series, &common.out)?;
    for s in &series {
        let worst = s.mean_fidelity.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_err = s.rms_z_err.iter().cloned().fold(0.0, f64::max);
        println!(
            "N={:4} controls={}  min mean fidelity {:.4}  max z-error {:.4}",
            s.num_qubits, s.with_controls, worst, max_err
        );
    }
    println!("outputs in {}", common.out.display());
    Ok(0)
}

fn run_squeeze_demo_cmd(
    common: &CommonArgs,
    config_path: Option<&Path>,
    controls: bool,
) -> anyhow::Result<u8> {
    let mut config: SqueezeDemoConfig = match config_path {
        Some(p) => read_json_config(p)?,
        None => SqueezeDemoConfig::standard(controls, common.seed.unwrap_or(1)),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let result = run_squeezing_demo(&config)?;
    write_squeeze_demo_outputs(&result, &common.out)?;
    let min_db = result
        .squeezing_db
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    println!(
        "squeezing: min {:.2} dB, final {:.2} dB; {} Q-function snapshots in {}",
        min_db,
        result.squeezing_db.last().unwrap(),
        result.q_snapshots.len(),
        common.out.display()
    );
    Ok(0)
}

fn run_fit(input: &Path, out: Option<&Path>) -> anyhow::Result<u8> {
    let text = std::fs::read_to_string(input)?;
    let mut points = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let n: f64 = match fields.next().map(str::trim).map(str::parse) {
            Some(Ok(v)) => v,
            _ => continue, // header row
        };
        let y: f64 = fields
            .next()
            .map(str::trim)
            .ok_or_else(|| anyhow::anyhow!("row with a single column"))?
            .parse()
            .map_err(|_| anyhow::anyhow!("bad value column"))?;
        points.push((n, y));
    }
    let fit = fit_power_law(&points)?;
    let rendered = serde_json::to_string_pretty(&fit)?;
    match out {
        Some(path) => std::fs::write(path, rendered)?,
        None => println!("{rendered}"),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate {
            common,
            config,
            rotations,
            larmor,
        } => run_simulate(common, config, *rotations, *larmor),
        Command::Estimate {
            common,
            record,
            waveform,
            config,
            backaction_free,
        } => run_estimate(common, record, waveform, config.as_deref(), *backaction_free),
        Command::Campaign {
            common,
            config,
            kind,
        } => run_campaign_cmd(common, config, kind),
        Command::ApproxStudy { common, config } => run_approx_study_cmd(common, config),
        Command::SqueezeDemo {
            common,
            config,
            controls,
        } => run_squeeze_demo_cmd(common, config.as_deref(), *controls),
        Command::Fit { input, out } => run_fit(input, out.as_deref()),
    };
    match outcome {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
