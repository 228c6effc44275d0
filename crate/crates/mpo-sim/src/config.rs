//! Run configuration: JSON ingestion, validation, and `key=value` overrides.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Deserialize;

use crate::fock::{FockError, ModeLayout};
use crate::model::{DriveParams, MeasurementScheme, ModelError, ModelParams};
use crate::observables::{self, ObservableError};
use crate::sparse::OperatorMatrix;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("field `model`: {0}")]
    Model(#[from] ModelError),
    #[error("field `layout`: {0}")]
    Fock(#[from] FockError),
    #[error("field `run.observables`: {0}")]
    Observable(#[from] ObservableError),
    #[error("run mode `{0}` draws random numbers; `run.seed` is required")]
    MissingSeed(String),
    #[error("override `{0}` is not of the form key=value")]
    BadOverride(String),
}

fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: field.to_string(), message: message.into() }
}

// ---- raw JSON shape -------------------------------------------------------

type Cpx = (f64, f64);

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(rename = "_notes", default)]
    _notes: Option<serde_json::Value>,
    layout: RawLayout,
    model: RawModel,
    #[serde(default)]
    drive: Option<RawDrive>,
    initial_state: RawInitial,
    #[serde(default)]
    measurement: Option<RawMeasurement>,
    run: RawRun,
    #[serde(default)]
    tolerances: RawTolerances,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayout {
    n: usize,
    m: usize,
    trunc: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    ws: Vec<f64>,
    wp: Vec<f64>,
    g: f64,
    /// Eight per-block amplitude lists of [re, im] pairs; an empty list means
    /// all-zero amplitudes for that block.
    alpha: Vec<Vec<Cpx>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDrive {
    lambda: Cpx,
    horizon: f64,
    #[serde(default)]
    thetas: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    occupations: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasurement {
    counted: Vec<usize>,
    /// (flat channel, theta, rotation frequency) triples.
    homodyne: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    mode: String,
    t_final: f64,
    dt: f64,
    #[serde(default)]
    n_traj: usize,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    observables: Vec<String>,
    #[serde(default = "default_out_points")]
    out_points: usize,
    #[serde(default)]
    output_dir: Option<PathBuf>,
}

fn default_out_points() -> usize {
    21
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    leak_tol: Option<f64>,
    trace_tol: Option<f64>,
}

// ---- resolved config ------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Master,
    Jump,
    Homodyne,
    Verify,
}

impl RunMode {
    pub fn is_stochastic(self) -> bool {
        matches!(self, RunMode::Jump | RunMode::Homodyne)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub layout: ModeLayout,
    pub params: ModelParams,
    pub initial_occupations: Vec<usize>,
    pub scheme: MeasurementScheme,
    pub mode: RunMode,
    pub t_final: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: Option<u64>,
    /// (name, operator) pairs in config order.
    pub observables: Vec<(String, OperatorMatrix)>,
    pub out_points: usize,
    pub output_dir: Option<PathBuf>,
    pub leak_tol: f64,
    pub trace_tol: f64,
    /// Echo of the loaded (post-override) JSON for the manifest.
    pub echo: serde_json::Value,
}

impl RunConfig {
    /// Evenly spaced output grid (excludes t = 0 so dynamics always advances).
    pub fn time_grid(&self) -> Vec<f64> {
        let k = self.out_points.max(1);
        (1..=k).map(|i| self.t_final * i as f64 / k as f64).collect()
    }
}

fn resolve(value: serde_json::Value) -> Result<RunConfig, ConfigError> {
    let echo = value.clone();
    let raw: RawConfig = serde_json::from_value(value).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let layout = ModeLayout::new(raw.layout.n, raw.layout.m, &raw.layout.trunc)?;

    if raw.model.alpha.len() != 8 {
        return Err(field_err(
            "model.alpha",
            format!("expected 8 amplitude blocks, got {}", raw.model.alpha.len()),
        ));
    }
    let mut alpha: [Vec<Complex64>; 8] = Default::default();
    for (l, block) in raw.model.alpha.iter().enumerate() {
        let len = if l % 2 == 0 { raw.layout.n } else { raw.layout.m };
        alpha[l] = if block.is_empty() {
            vec![Complex64::ZERO; len]
        } else {
            block.iter().map(|&(re, im)| Complex64::new(re, im)).collect()
        };
    }

    let drive = match &raw.drive {
        None => DriveParams::off(raw.layout.n),
        Some(d) => DriveParams {
            lambda_re: d.lambda.0,
            lambda_im: d.lambda.1,
            horizon: d.horizon,
            thetas: if d.thetas.is_empty() { vec![0.0; raw.layout.n] } else { d.thetas.clone() },
        },
    };

    let params = ModelParams { ws: raw.model.ws, wp: raw.model.wp, g: raw.model.g, alpha, drive };
    params.validate(&layout)?;

    if raw.initial_state.occupations.len() != layout.n_modes() {
        return Err(field_err(
            "initial_state.occupations",
            format!(
                "expected {} occupations, got {}",
                layout.n_modes(),
                raw.initial_state.occupations.len()
            ),
        ));
    }
    for (k, &occ) in raw.initial_state.occupations.iter().enumerate() {
        if occ >= layout.cutoff(k) {
            return Err(field_err(
                "initial_state.occupations",
                format!("occupation {occ} in mode {k} exceeds cutoff {}", layout.cutoff(k)),
            ));
        }
    }

    let n_channels = 4 * layout.n_modes();
    let scheme = match &raw.measurement {
        None => MeasurementScheme::standard(&params, &layout),
        Some(ms) => {
            for &c in &ms.counted {
                if c >= n_channels {
                    return Err(field_err(
                        "measurement.counted",
                        format!("channel {c} out of range (have {n_channels})"),
                    ));
                }
            }
            for &(c, _, _) in &ms.homodyne {
                if c >= n_channels {
                    return Err(field_err(
                        "measurement.homodyne",
                        format!("channel {c} out of range (have {n_channels})"),
                    ));
                }
                if ms.counted.contains(&c) {
                    return Err(field_err(
                        "measurement",
                        format!("channel {c} is both counted and homodyne-monitored"),
                    ));
                }
            }
            MeasurementScheme {
                n_channels,
                counted: ms.counted.clone(),
                homodyne: ms.homodyne.clone(),
            }
        }
    };

    let mode = match raw.run.mode.as_str() {
        "master" => RunMode::Master,
        "jump" => RunMode::Jump,
        "homodyne" => RunMode::Homodyne,
        "verify" => RunMode::Verify,
        other => {
            return Err(field_err(
                "run.mode",
                format!("unknown mode `{other}`; expected master|jump|homodyne|verify"),
            ))
        }
    };
    if mode.is_stochastic() && raw.run.seed.is_none() {
        return Err(ConfigError::MissingSeed(raw.run.mode.clone()));
    }
    if mode.is_stochastic() && raw.run.n_traj == 0 {
        return Err(field_err("run.n_traj", "stochastic modes need n_traj >= 1"));
    }
    if mode != RunMode::Verify {
        if !(raw.run.t_final > 0.0) {
            return Err(field_err("run.t_final", "must be positive"));
        }
        if !(raw.run.dt > 0.0) {
            return Err(field_err("run.dt", "must be positive"));
        }
    }

    let observables = raw
        .run
        .observables
        .iter()
        .map(|name| Ok((name.clone(), observables::resolve(name, &layout)?)))
        .collect::<Result<Vec<_>, ConfigError>>()?;

    Ok(RunConfig {
        layout,
        params,
        initial_occupations: raw.initial_state.occupations,
        scheme,
        mode,
        t_final: raw.run.t_final,
        dt: raw.run.dt,
        n_traj: raw.run.n_traj,
        seed: raw.run.seed,
        observables,
        out_points: raw.run.out_points,
        output_dir: raw.run.output_dir,
        leak_tol: raw.tolerances.leak_tol.unwrap_or(1e-6),
        trace_tol: raw.tolerances.trace_tol.unwrap_or(1e-6),
        echo,
    })
}

/// Apply `key=value` overrides (dotted paths, JSON or bare-string values) to
/// the raw JSON tree before validation.
pub fn apply_overrides(
    value: &mut serde_json::Value,
    overrides: &[String],
) -> Result<(), ConfigError> {
    for ov in overrides {
        let (key, val) = ov
            .split_once('=')
            .ok_or_else(|| ConfigError::BadOverride(ov.clone()))?;
        let parsed: serde_json::Value = serde_json::from_str(val)
            .unwrap_or_else(|_| serde_json::Value::String(val.to_string()));
        let mut cursor = &mut *value;
        let segments: Vec<&str> = key.split('.').collect();
        for (i, seg) in segments.iter().enumerate() {
            let last = i + 1 == segments.len();
            cursor = if let Ok(idx) = seg.parse::<usize>() {
                let arr = cursor
                    .as_array_mut()
                    .ok_or_else(|| field_err(key, format!("`{seg}` indexes a non-array")))?;
                if idx >= arr.len() {
                    return Err(field_err(key, format!("index {idx} out of bounds")));
                }
                if last {
                    arr[idx] = parsed.clone();
                    break;
                }
                &mut arr[idx]
            } else {
                let obj = cursor
                    .as_object_mut()
                    .ok_or_else(|| field_err(key, format!("`{seg}` selects into a non-object")))?;
                if last {
                    obj.insert(seg.to_string(), parsed.clone());
                    break;
                }
                obj.entry(seg.to_string())
                    .or_insert_with(|| serde_json::Value::Object(Default::default()))
            };
        }
    }
    Ok(())
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    apply_overrides(&mut value, overrides)?;
    resolve(value)
}
