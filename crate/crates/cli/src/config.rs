//! Run configuration: a TOML file with `[system]`, `[controller]`,
//! `[simulation]` and `[output]` sections, or the same structure as JSON.
//!
//! Every key is optional and defaults to the reference car run, so an empty
//! file reproduces it. Unknown keys are rejected. Errors name the file, the
//! line and the offending key.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chainph_core::car::CarParams;
use chainph_core::controller::DEFAULT_EPS_W1;
use chainph_core::sim::DEFAULT_CONVERGENCE_TOL;
use chainph_core::{ControllerParams, Error, Matrix, SimConfig, Vector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemSection,
    pub controller: ControllerSection,
    pub simulation: SimulationSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    /// `"car"`; `"custom"` models are only available through the library.
    pub model: String,
    pub m1: f64,
    pub m2: f64,
    pub j1: f64,
    pub j2: f64,
    pub l: f64,
    pub du: f64,
    pub dtheta: f64,
    pub dphi: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        let p = CarParams::default();
        Self {
            model: "car".into(),
            m1: p.m1,
            m2: p.m2,
            j1: p.j1,
            j2: p.j2,
            l: p.l,
            du: p.du,
            dtheta: p.dtheta,
            dphi: p.dphi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    /// Diagonal of `L`.
    pub gains: Vec<f64>,
    pub k: f64,
    /// `D^` as a list of rows.
    pub damping_injection: Vec<Vec<f64>>,
    pub eps_w1: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let c = ControllerParams::car_reference();
        Self {
            gains: c.gains.clone(),
            k: c.k,
            damping_injection: c
                .damping_injection
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            eps_w1: DEFAULT_EPS_W1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub dt: f64,
    pub duration: f64,
    /// `(x1, y1, theta, phi)`.
    pub initial_q: Vec<f64>,
    /// Reduced momentum; zero when absent.
    pub initial_p: Option<Vec<f64>>,
    pub log_stride: usize,
    pub convergence_tol: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            duration: 60.0,
            initial_q: vec![4.0, 2.0, 0.0, 0.0],
            initial_p: None,
            log_stride: 1,
            convergence_tol: DEFAULT_CONVERGENCE_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Summary,
    Svg,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec![OutputFormat::Csv, OutputFormat::Summary, OutputFormat::Svg],
        }
    }
}

impl OutputSection {
    pub fn wants(&self, format: OutputFormat) -> bool {
        self.formats.contains(&format)
    }
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub duration: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    fn flag_for(&self, section: &str, key: &str) -> Option<&'static str> {
        match (section, key) {
            ("simulation", "dt") if self.dt.is_some() => Some("--dt"),
            ("simulation", "duration") if self.duration.is_some() => Some("--duration"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    Toml,
    Json,
}

impl SourceFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => SourceFormat::Json,
            _ => SourceFormat::Toml,
        }
    }
}

/// A load or validation failure, anchored to a file line or a flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub origin: String,
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.origin)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if let Some(key) = &self.key {
            write!(f, ": {key}")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub source: String,
    pub format: SourceFormat,
    pub config: RunConfig,
}

/// Everything a simulation needs, checked.
#[derive(Debug, Clone)]
pub struct ValidatedRun {
    pub car: CarParams,
    pub controller: ControllerParams,
    pub sim: SimConfig,
    pub output: OutputSection,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = fs::read_to_string(path).map_err(|e| ConfigError {
            origin: path.display().to_string(),
            line: None,
            key: None,
            message: format!("cannot read: {e}"),
        })?;
        Self::parse(path, source)
    }

    pub fn parse(path: &Path, source: String) -> Result<Self, ConfigError> {
        let format = SourceFormat::from_path(path);
        let origin = path.display().to_string();
        let config = match format {
            SourceFormat::Toml => {
                toml::from_str::<RunConfig>(&source).map_err(|e| ConfigError {
                    line: e.span().map(|s| line_of_offset(&source, s.start)),
                    origin: origin.clone(),
                    key: None,
                    message: e.message().trim_end().to_string(),
                })?
            }
            SourceFormat::Json => {
                serde_json::from_str::<RunConfig>(&source).map_err(|e| ConfigError {
                    line: Some(e.line()).filter(|&l| l > 0),
                    origin: origin.clone(),
                    key: None,
                    message: e.to_string(),
                })?
            }
        };
        Ok(Self {
            path: path.to_path_buf(),
            source,
            format,
            config,
        })
    }

    /// Applies `overrides` and checks every section.
    pub fn validate(&self, overrides: &Overrides) -> Result<ValidatedRun, ConfigError> {
        let mut cfg = self.config.clone();
        if let Some(dt) = overrides.dt {
            cfg.simulation.dt = dt;
        }
        if let Some(duration) = overrides.duration {
            cfg.simulation.duration = duration;
        }
        if let Some(out) = &overrides.out {
            cfg.output.directory = out.clone();
        }
        build(&cfg).map_err(|(section, key, message)| self.anchor(overrides, section, key, message))
    }

    fn anchor(
        &self,
        overrides: &Overrides,
        section: &str,
        key: &str,
        message: String,
    ) -> ConfigError {
        if let Some(flag) = overrides.flag_for(section, key) {
            return ConfigError {
                origin: "command line".into(),
                line: None,
                key: Some(flag.into()),
                message,
            };
        }
        ConfigError {
            origin: self.path.display().to_string(),
            line: locate(&self.source, self.format, section, key),
            key: Some(format!("{section}.{key}")),
            message,
        }
    }
}

type BuildError = (&'static str, &'static str, String);

fn build(cfg: &RunConfig) -> Result<ValidatedRun, BuildError> {
    let s = &cfg.system;
    match s.model.as_str() {
        "car" => {}
        "custom" => {
            return Err((
                "system",
                "model",
                "custom models are assembled through the chainph-core library; the CLI runs `car`"
                    .into(),
            ))
        }
        other => {
            return Err((
                "system",
                "model",
                format!("unknown model `{other}` (expected `car`)"),
            ))
        }
    }
    let car = CarParams {
        m1: s.m1,
        m2: s.m2,
        j1: s.j1,
        j2: s.j2,
        l: s.l,
        du: s.du,
        dtheta: s.dtheta,
        dphi: s.dphi,
    };
    car.validate().map_err(|e| field_error("system", e))?;

    let c = &cfg.controller;
    if c.gains.len() != 4 {
        return Err((
            "controller",
            "gains",
            format!("needs 4 entries, got {}", c.gains.len()),
        ));
    }
    let rows = c.damping_injection.len();
    if rows != 2 || c.damping_injection.iter().any(|r| r.len() != 2) {
        return Err((
            "controller",
            "damping_injection",
            "must be a 2 x 2 matrix given as two rows".into(),
        ));
    }
    let controller = ControllerParams {
        gains: c.gains.clone(),
        k: c.k,
        damping_injection: Matrix::from_fn(2, 2, |i, j| c.damping_injection[i][j]),
        eps_w1: c.eps_w1,
    };
    controller
        .validate()
        .map_err(|e| field_error("controller", e))?;

    let m = &cfg.simulation;
    if m.initial_q.len() != 4 {
        return Err((
            "simulation",
            "initial_q",
            format!(
                "needs 4 entries (x1, y1, theta, phi), got {}",
                m.initial_q.len()
            ),
        ));
    }
    if m.initial_q[0] == 0.0 {
        return Err((
            "simulation",
            "initial_q",
            "x1 = 0 lies on the controller's singular set; start with x1 != 0".into(),
        ));
    }
    let mut sim = SimConfig::new(Vector::from_vec(m.initial_q.clone()), m.dt, m.duration);
    if let Some(p) = &m.initial_p {
        if p.len() != 2 || p.iter().any(|x| !x.is_finite()) {
            return Err(("simulation", "initial_p", "needs 2 finite entries".into()));
        }
        sim.initial_p = Some(Vector::from_vec(p.clone()));
    }
    sim.log_stride = m.log_stride;
    sim.convergence_tol = m.convergence_tol;
    sim.validate().map_err(|e| field_error("simulation", e))?;

    if cfg.output.directory.as_os_str().is_empty() {
        return Err(("output", "directory", "must not be empty".into()));
    }
    Ok(ValidatedRun {
        car,
        controller,
        sim,
        output: cfg.output.clone(),
    })
}

fn field_error(section: &'static str, err: Error) -> BuildError {
    match err {
        Error::InvalidParameter { field, reason } => (section, field, reason),
        other => (section, "", other.to_string()),
    }
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// 1-based line of `key` inside `section`, falling back to the section
/// header. `None` means the value came from the defaults.
pub fn locate(source: &str, format: SourceFormat, section: &str, key: &str) -> Option<usize> {
    match format {
        SourceFormat::Toml => {
            let mut current = String::new();
            let mut header = None;
            for (i, raw) in source.lines().enumerate() {
                let line = raw.trim();
                if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
                    current = name.trim().to_string();
                    if current == section {
                        header = Some(i + 1);
                    }
                    continue;
                }
                if current == section && !key.is_empty() {
                    if let Some(rest) = line.strip_prefix(key) {
                        if rest.trim_start().starts_with('=') {
                            return Some(i + 1);
                        }
                    }
                }
            }
            header
        }
        SourceFormat::Json => {
            let section_key = format!("\"{section}\"");
            let field_key = format!("\"{key}\"");
            let mut header = None;
            for (i, line) in source.lines().enumerate() {
                if header.is_none() {
                    if line.contains(&section_key) {
                        header = Some(i + 1);
                    }
                } else if !key.is_empty() && line.contains(&field_key) {
                    return Some(i + 1);
                }
            }
            header
        }
    }
}
