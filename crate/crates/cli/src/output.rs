//! CSV emission, replicate statistics and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rid_core::protocol::SlotParams;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

/// Bumped whenever a column is added, removed or reordered.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Writes `rows` under `header` to `dir/name`.
pub fn write_csv<R: Serialize>(dir: &Path, name: &str, header: &[&str], rows: &[R]) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(path)
}

/// Arithmetic mean and sample standard deviation; the deviation is `None`
/// for fewer than two values.
pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

#[derive(Debug, Serialize)]
struct OutputEntry {
    file: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    seed: u64,
    workers: usize,
    csv_schema_version: u32,
    slots: SlotParams,
    config: &'a RunConfig,
    outputs: Vec<OutputEntry>,
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Records everything needed to rerun `subcommand` and the digests of what
/// it produced.
pub fn write_manifest(
    dir: &Path,
    subcommand: &str,
    config: &RunConfig,
    workers: usize,
    outputs: &[PathBuf],
) -> Result<PathBuf, CliError> {
    let outputs = outputs
        .iter()
        .map(|p| {
            Ok(OutputEntry {
                file: p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = Manifest {
        tool: "ridsim",
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        seed: config.experiment.seed,
        workers,
        csv_schema_version: CSV_SCHEMA_VERSION,
        slots: config.slot_params()?,
        config,
        outputs,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    let path = dir.join("manifest.toml");
    fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_statistics() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s.unwrap() - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[3.0]), (3.0, None));
    }

    #[test]
    fn manifest_lists_outputs_with_digests() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let csv = write_csv(dir.path(), "x.csv", &["a", "b"], &[(1, 2.5)]).unwrap();
        assert_eq!(fs::read_to_string(&csv).unwrap(), "a,b\n1,2.5\n");
        let m = write_manifest(dir.path(), "rate-sweep", &cfg, 1, &[csv]).unwrap();
        let text = fs::read_to_string(m).unwrap();
        let parsed: toml::Value = toml::from_str(&text).unwrap();
        assert_eq!(parsed["slots"]["t_gnss"].as_integer(), Some(8000));
        assert_eq!(parsed["outputs"][0]["file"].as_str(), Some("x.csv"));
        let back: RunConfig = parsed["config"].clone().try_into().unwrap();
        assert_eq!(back, cfg);
    }
}
