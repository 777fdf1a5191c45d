//! On-disk formats for records and waveforms.
//!
//! Records serialize to a little-endian columnar binary file (magic
//! `QREC`, format version, scale metadata, then the raw `dy` array) and to
//! CSV with columns `step,t,dy` behind a versioned header line. Waveforms
//! serialize to JSON as a list of `{axis, tau}` segments plus a format
//! version. Floats round-trip exactly: CSV/JSON use shortest-round-trip
//! formatting and the binary format stores raw bits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bloch::BlochVector;
use crate::trajectory::{ControlWaveform, MeasurementRecord, TrajectoryError};

const RECORD_MAGIC: &[u8; 4] = b"QREC";
const RECORD_VERSION: u32 = 1;
const WAVEFORM_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

fn format_err(msg: impl Into<String>) -> IoError {
    IoError::Format(msg.into())
}

/// Write a record as versioned little-endian binary.
pub fn write_record_binary(record: &MeasurementRecord, path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RECORD_MAGIC)?;
    w.write_all(&RECORD_VERSION.to_le_bytes())?;
    w.write_all(&(record.num_qubits as u64).to_le_bytes())?;
    w.write_all(&record.kappa.to_le_bytes())?;
    w.write_all(&record.dt.to_le_bytes())?;
    w.write_all(&record.seed.to_le_bytes())?;
    w.write_all(&(record.increments.len() as u64).to_le_bytes())?;
    for dy in &record.increments {
        w.write_all(&dy.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_record_binary(path: &Path) -> Result<MeasurementRecord, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != RECORD_MAGIC {
        return Err(format_err("bad magic, not a record file"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != RECORD_VERSION {
        return Err(format_err(format!("unsupported record version {version}")));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let num_qubits = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf)?;
    let kappa = f64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf)?;
    let dt = f64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf)?;
    let seed = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf)?;
    let len = u64::from_le_bytes(u64buf) as usize;
    let mut increments = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut u64buf)?;
        increments.push(f64::from_le_bytes(u64buf));
    }
    Ok(MeasurementRecord::new(dt, increments, kappa, num_qubits, seed)?)
}

/// Write a record as CSV (`step,t,dy`) behind a versioned metadata line.
pub fn write_record_csv(record: &MeasurementRecord, path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "# spintomo-record v{RECORD_VERSION} kappa={} num_qubits={} dt={} seed={}",
        record.kappa, record.num_qubits, record.dt, record.seed
    )?;
    writeln!(w, "step,t,dy")?;
    for (i, dy) in record.increments.iter().enumerate() {
        writeln!(w, "{},{},{}", i, i as f64 * record.dt, dy)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_record_csv(path: &Path) -> Result<MeasurementRecord, IoError> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| format_err("empty record csv"))??;
    let rest = header
        .strip_prefix(&format!("# spintomo-record v{RECORD_VERSION} "))
        .ok_or_else(|| format_err("missing or unsupported record csv header"))?;
    let mut kappa = None;
    let mut num_qubits = None;
    let mut dt = None;
    let mut seed = None;
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| format_err("malformed header field"))?;
        match key {
            "kappa" => kappa = Some(value.parse().map_err(|_| format_err("bad kappa"))?),
            "num_qubits" => {
                num_qubits = Some(value.parse().map_err(|_| format_err("bad num_qubits"))?)
            }
            "dt" => dt = Some(value.parse().map_err(|_| format_err("bad dt"))?),
            "seed" => seed = Some(value.parse().map_err(|_| format_err("bad seed"))?),
            other => return Err(format_err(format!("unknown header field {other}"))),
        }
    }
    let column_line = lines
        .next()
        .ok_or_else(|| format_err("missing column header"))??;
    if column_line != "step,t,dy" {
        return Err(format_err("unexpected column header"));
    }
    let mut increments = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let dy = line
            .rsplit(',')
            .next()
            .ok_or_else(|| format_err("malformed row"))?
            .parse()
            .map_err(|_| format_err("bad dy value"))?;
        increments.push(dy);
    }
    Ok(MeasurementRecord::new(
        dt.ok_or_else(|| format_err("missing dt"))?,
        increments,
        kappa.ok_or_else(|| format_err("missing kappa"))?,
        num_qubits.ok_or_else(|| format_err("missing num_qubits"))?,
        seed.ok_or_else(|| format_err("missing seed"))?,
    )?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WaveformFile {
    format_version: u32,
    larmor: f64,
    segments: Vec<SegmentFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentFile {
    axis: [f64; 3],
    tau: f64,
}

pub fn write_waveform_json(waveform: &ControlWaveform, path: &Path) -> Result<(), IoError> {
    let file = WaveformFile {
        format_version: WAVEFORM_VERSION,
        larmor: if waveform.is_empty() {
            0.0
        } else {
            waveform.larmor()
        },
        segments: waveform
            .segments()
            .iter()
            .map(|s| SegmentFile {
                axis: [s.axis.x, s.axis.y, s.axis.z],
                tau: s.duration,
            })
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &file)?;
    w.flush()?;
    Ok(())
}

pub fn read_waveform_json(path: &Path) -> Result<ControlWaveform, IoError> {
    let file: WaveformFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.format_version != WAVEFORM_VERSION {
        return Err(format_err(format!(
            "unsupported waveform version {}",
            file.format_version
        )));
    }
    if file.segments.is_empty() {
        return Ok(ControlWaveform::none());
    }
    let tau = std::f64::consts::FRAC_PI_2 / file.larmor;
    for seg in &file.segments {
        if (seg.tau - tau).abs() > 1e-12 * tau.abs().max(1.0) {
            return Err(format_err("segment tau inconsistent with larmor"));
        }
    }
    let axes = file
        .segments
        .iter()
        .map(|s| BlochVector::new(s.axis[0], s.axis[1], s.axis[2]))
        .collect();
    Ok(ControlWaveform::from_axes(axes, file.larmor)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sample_record() -> MeasurementRecord {
        MeasurementRecord::new(
            1e-4,
            vec![0.125, -3.5e-3, 1.0 / 3.0, f64::MIN_POSITIVE],
            1.0,
            42,
            777,
        )
        .unwrap()
    }

    #[test]
    fn record_binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.qrec");
        let record = sample_record();
        write_record_binary(&record, &path).unwrap();
        let back = read_record_binary(&path).unwrap();
        assert_eq!(record, back);
    }

    #[test]
    fn record_csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let record = sample_record();
        write_record_csv(&record, &path).unwrap();
        let back = read_record_csv(&path).unwrap();
        assert_eq!(record, back);
    }

    #[test]
    fn waveform_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wf.json");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let wf = ControlWaveform::random(7, 25.0 * PI, &mut rng).unwrap();
        write_waveform_json(&wf, &path).unwrap();
        let back = read_waveform_json(&path).unwrap();
        assert_eq!(back.segments().len(), 7);
        assert_eq!(back.larmor(), wf.larmor());
        for (a, b) in wf.segments().iter().zip(back.segments().iter()) {
            assert_eq!(a.axis, b.axis);
            assert_eq!(a.duration, b.duration);
        }

        let empty_path = dir.path().join("empty.json");
        write_waveform_json(&ControlWaveform::none(), &empty_path).unwrap();
        assert!(read_waveform_json(&empty_path).unwrap().is_empty());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.qrec");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(
            read_record_binary(&path),
            Err(IoError::Format(_))
        ));
    }
}
