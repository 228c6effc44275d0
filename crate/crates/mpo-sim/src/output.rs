//! Deterministic artifact writers: time-series CSV, record JSONL, ensemble
//! stats CSV, and the manifest with SHA-256 digests of every data file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::dynamics::PropagationResult;
use crate::trajectories::{EnsembleStats, MeasurementRecord};

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

fn write_file(path: &Path, contents: &str) -> Result<(), OutputError> {
    std::fs::write(path, contents).map_err(|e| OutputError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Shortest-roundtrip float formatting; stable across runs.
fn fmt(x: f64) -> String {
    let mut s = format!("{x}");
    if !s.contains(['.', 'e', 'n', 'i']) {
        s.push_str(".0");
    }
    s
}

/// `t, trace_err, pos_err, edge_leak, <obs...>` per snapshot.
pub fn timeseries_csv(result: &PropagationResult, obs_names: &[String]) -> String {
    let mut out = String::from("t,trace_err,pos_err,edge_leak");
    for name in obs_names {
        write!(out, ",{name}").unwrap();
    }
    out.push('\n');
    for (j, &t) in result.times.iter().enumerate() {
        write!(
            out,
            "{},{},{},{}",
            fmt(t),
            fmt(result.trace_err[j]),
            fmt(result.pos_err[j]),
            fmt(result.edge_leak[j])
        )
        .unwrap();
        for vals in &result.expectations {
            write!(out, ",{}", fmt(vals[j].re)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// `t, obs, mean, se` rows, one block per observable.
pub fn ensemble_csv(stats: &EnsembleStats, obs_names: &[String]) -> String {
    let mut out = String::from("t,obs,mean,se\n");
    for (i, name) in obs_names.iter().enumerate() {
        for (j, &t) in stats.times.iter().enumerate() {
            writeln!(out, "{},{name},{},{}", fmt(t), fmt(stats.obs_mean[i][j]), fmt(stats.obs_se[i][j]))
                .unwrap();
        }
    }
    out
}

/// One JSON line per trajectory:
/// `{"traj": i, "seed": s, "jumps": {"ch<k>": [t...]}, "homodyne": {"ch<k>": [[t, dY]...]}}`.
pub fn records_jsonl(records: &[MeasurementRecord]) -> String {
    let mut out = String::new();
    for (i, rec) in records.iter().enumerate() {
        let jumps: serde_json::Map<String, serde_json::Value> = rec
            .counting_channels
            .iter()
            .zip(&rec.counting)
            .map(|(ch, times)| (format!("ch{ch}"), serde_json::json!(times)))
            .collect();
        let homodyne: serde_json::Map<String, serde_json::Value> = rec
            .homodyne_channels
            .iter()
            .zip(&rec.homodyne)
            .map(|(ch, series)| {
                let pairs: Vec<[f64; 2]> = series.iter().map(|&(t, dy)| [t, dy]).collect();
                (format!("ch{ch}"), serde_json::json!(pairs))
            })
            .collect();
        let line = serde_json::json!({
            "traj": i,
            "seed": rec.seed,
            "dt": rec.dt,
            "t_final": rec.t_final,
            "jumps": jumps,
            "homodyne": homodyne,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

pub fn sha256_hex(data: &[u8]) -> String {
    let digest = Sha256::digest(data);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// A run directory writer: collects (name, contents), writes each file, then
/// a manifest referencing every file with its digest. All writes funnel
/// through this one struct so no orphan artifacts appear.
pub struct RunWriter {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl RunWriter {
    pub fn new(dir: &Path) -> Result<Self, OutputError> {
        std::fs::create_dir_all(dir).map_err(|e| OutputError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn add(&mut self, name: &str, contents: String) -> Result<(), OutputError> {
        write_file(&self.dir.join(name), &contents)?;
        self.files.push((name.to_string(), sha256_hex(contents.as_bytes())));
        Ok(())
    }

    /// Write `manifest.json` (config echo, version, wall time, digests).
    pub fn finish(
        self,
        config_echo: &serde_json::Value,
        wall_time_s: f64,
    ) -> Result<PathBuf, OutputError> {
        let files: serde_json::Map<String, serde_json::Value> = self
            .files
            .into_iter()
            .map(|(name, digest)| (name, serde_json::Value::String(digest)))
            .collect();
        let manifest = serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "wall_time_s": wall_time_s,
            "files": files,
            "config": config_echo,
        });
        let path = self.dir.join("manifest.json");
        write_file(&path, &serde_json::to_string_pretty(&manifest).unwrap())?;
        Ok(path)
    }
}
