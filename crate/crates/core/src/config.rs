//! Run configuration: a TOML document with a fixed schema. Unknown keys are
//! rejected with their full key path.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ground_state_profile, ModelParams};
use crate::samples::smooth_bump_field;
use crate::scatter::ScatterSettings;
use crate::snapshot::read_snapshot;
use crate::spectral::{make_grid, norms, Field, Grid, C64};
use crate::stepper::{ConvergenceProblem, StepperConfig};
use crate::waveop::SourceOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Waveop,
    Scatter,
    Functionals,
    Sweep,
    Convergence,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Waveop => "waveop",
            Command::Scatter => "scatter",
            Command::Functionals => "functionals",
            Command::Sweep => "sweep",
            Command::Convergence => "convergence",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_points: usize,
    pub domain_length: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_points: 1024,
            domain_length: 80.0 * std::f64::consts::PI,
        }
    }
}

fn default_width() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `a·exp(−(x/width)²)·e^{i v x}`; with `h1_norm` set, rescaled to that
    /// `H¹` norm.
    Gaussian {
        amplitude: f64,
        #[serde(default = "default_width")]
        width: f64,
        #[serde(default)]
        phase_velocity: f64,
        #[serde(default)]
        h1_norm: Option<f64>,
    },
    /// The ground state of the configured `σ` at frequency `omega`.
    GroundState { omega: f64 },
    /// Three random smooth bumps, seeded, scaled to `h1_norm`.
    RandomSmooth { h1_norm: f64 },
    /// A snapshot file.
    File { path: PathBuf },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Gaussian {
            amplitude: 0.5,
            width: 1.0,
            phase_velocity: 0.0,
            h1_norm: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveopConfig {
    pub t0: f64,
    /// Picked by the tail criterion when absent.
    pub tn: Option<f64>,
    pub tail_tol: f64,
    pub source: SourceOptions,
}

impl Default for WaveopConfig {
    fn default() -> Self {
        WaveopConfig {
            t0: 8.0,
            tn: None,
            tail_tol: 1e-6,
            source: SourceOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScatterConfig {
    pub horizon: f64,
    #[serde(flatten)]
    pub settings: ScatterSettings,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        ScatterConfig {
            horizon: 128.0,
            settings: ScatterSettings::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    #[serde(flatten)]
    pub problem: ConvergenceProblem,
    pub dt0: f64,
}

/// Cartesian parameter ranges. An absent axis keeps the base value; an
/// empty axis makes the product empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub command: Command,
    pub sigma: Option<Vec<f64>>,
    pub amplitude: Option<Vec<f64>>,
    pub omega: Option<Vec<f64>>,
}

/// One point of a sweep; `None` keeps the base value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub sigma: Option<f64>,
    pub amplitude: Option<f64>,
    pub omega: Option<f64>,
}

impl SweepConfig {
    pub fn points(&self) -> Vec<SweepPoint> {
        let axis = |values: &Option<Vec<f64>>| -> Vec<Option<f64>> {
            match values {
                None => vec![None],
                Some(v) => v.iter().copied().map(Some).collect(),
            }
        };
        let mut points = Vec::new();
        for &sigma in &axis(&self.sigma) {
            for &amplitude in &axis(&self.amplitude) {
                for &omega in &axis(&self.omega) {
                    points.push(SweepPoint {
                        sigma,
                        amplitude,
                        omega,
                    });
                }
            }
        }
        points
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    Snapshots,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("out"),
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, format: OutputFormat) -> bool {
        self.formats.contains(&format)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub stepper: StepperConfig,
    #[serde(default)]
    pub initial_condition: InitialCondition,
    #[serde(default)]
    pub waveop: WaveopConfig,
    #[serde(default)]
    pub scatter: ScatterConfig,
    pub convergence: Option<ConvergenceConfig>,
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub outputs: OutputConfig,
    /// Directory that relative paths in the config resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Parses TOML text; `origin` names the source in error messages.
pub fn parse_config_str(text: &str, origin: &str) -> Result<RunConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().message().to_string();
        Error::Config {
            path: if path == "." { origin.to_string() } else { path },
            message,
        }
    })
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut cfg = parse_config_str(&text, &path.display().to_string())?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    if cfg.command.is_some() {
        cfg.validate()?;
    }
    Ok(cfg)
}

fn invalid(path: &str, message: impl Into<String>) -> Error {
    Error::config(path, message)
}

fn wrap(path: &str, result: Result<()>) -> Result<()> {
    result.map_err(|e| invalid(path, e.to_string()))
}

impl RunConfig {
    pub fn command(&self) -> Result<Command> {
        self.command
            .ok_or_else(|| invalid("command", "no command given on the command line or in the config"))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let command = self.command()?;
        wrap("model", self.model.validate())?;
        if !(self.grid.n_points >= 8 && self.grid.n_points.is_power_of_two()) {
            return Err(invalid("grid.n_points", "must be a power of two >= 8"));
        }
        if !(self.grid.domain_length > 0.0 && self.grid.domain_length.is_finite()) {
            return Err(invalid("grid.domain_length", "must be positive"));
        }
        match command {
            Command::Simulate => wrap("stepper", self.stepper.validate())?,
            Command::Waveop => self.validate_waveop()?,
            Command::Scatter => {
                if !(self.model.sigma >= 3.0 || self.model.sigma == 2.0) {
                    return Err(invalid(
                        "model.sigma",
                        format!(
                            "scatter needs sigma >= 3 (sigma = 2 is allowed as exploratory), got {}",
                            self.model.sigma
                        ),
                    ));
                }
                let s = &self.scatter;
                if !(s.settings.dt > 0.0) {
                    return Err(invalid("scatter.dt", "must be positive"));
                }
                if !(s.settings.first_check > 0.0 && s.horizon >= s.settings.first_check) {
                    return Err(invalid("scatter.horizon", "must be at least scatter.first_check"));
                }
            }
            Command::Functionals => {}
            Command::Convergence => {
                let c = self
                    .convergence
                    .ok_or_else(|| invalid("convergence", "missing [convergence] table"))?;
                if !(c.dt0 > 0.0) {
                    return Err(invalid("convergence.dt0", "must be positive"));
                }
                if !(c.problem.n_points >= 8 && c.problem.n_points.is_power_of_two()) {
                    return Err(invalid("convergence.n_points", "must be a power of two >= 8"));
                }
            }
            Command::Sweep => {
                let sweep = self
                    .sweep
                    .as_ref()
                    .ok_or_else(|| invalid("sweep", "missing [sweep] table"))?;
                if sweep.command == Command::Sweep {
                    return Err(invalid("sweep.command", "a sweep cannot nest another sweep"));
                }
                for (name, values) in [
                    ("sweep.sigma", &sweep.sigma),
                    ("sweep.amplitude", &sweep.amplitude),
                    ("sweep.omega", &sweep.omega),
                ] {
                    if values.iter().flatten().any(|v| !v.is_finite()) {
                        return Err(invalid(name, "values must be finite"));
                    }
                }
            }
        }
        if let InitialCondition::File { path } = &self.initial_condition {
            if !self.resolve(path).is_file() {
                return Err(invalid(
                    "initial_condition.path",
                    format!("file {} does not exist", self.resolve(path).display()),
                ));
            }
        }
        if let InitialCondition::Gaussian { width, .. } = &self.initial_condition {
            if !(*width > 0.0) {
                return Err(invalid("initial_condition.width", "must be positive"));
            }
        }
        Ok(())
    }

    fn validate_waveop(&self) -> Result<()> {
        if !(self.model.sigma > 2.0) {
            return Err(invalid(
                "model.sigma",
                format!("waveop needs sigma > 2, got {}", self.model.sigma),
            ));
        }
        let w = &self.waveop;
        if !(w.t0 >= 1.0) {
            return Err(invalid("waveop.t0", "must be at least 1"));
        }
        if let Some(tn) = w.tn {
            if !(tn > w.t0) {
                return Err(invalid("waveop.tn", "must exceed waveop.t0"));
            }
        }
        if !(w.tail_tol > 0.0) {
            return Err(invalid("waveop.tail_tol", "must be positive"));
        }
        if !(self.stepper.dt > 0.0 && self.stepper.record_every >= 1) {
            return Err(invalid("stepper", "dt must be positive and record_every >= 1"));
        }
        Ok(())
    }

    pub fn make_grid(&self) -> Result<Arc<Grid>> {
        make_grid(self.grid.n_points, self.grid.domain_length)
    }

    /// Samples the initial condition; `seed` drives the random family.
    pub fn initial_field(&self, grid: &Arc<Grid>) -> Result<Field> {
        match &self.initial_condition {
            InitialCondition::Gaussian {
                amplitude,
                width,
                phase_velocity,
                h1_norm,
            } => {
                let u = Field::from_fn(grid, |x| {
                    C64::from_polar(amplitude * (-(x / width).powi(2)).exp(), phase_velocity * x)
                });
                Ok(match h1_norm {
                    Some(target) => {
                        let size = norms(&u).h1;
                        if size > 0.0 {
                            &u * (target / size)
                        } else {
                            u
                        }
                    }
                    None => u,
                })
            }
            InitialCondition::GroundState { omega } => {
                ground_state_profile(grid, &ModelParams { omega: *omega, ..self.model })
            }
            InitialCondition::RandomSmooth { h1_norm } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                Ok(smooth_bump_field(grid, &mut rng, *h1_norm))
            }
            InitialCondition::File { path } => {
                let snap = read_snapshot(&self.resolve(path))?;
                if snap.field.grid().as_ref() != grid.as_ref() {
                    return Err(Error::GridMismatch(format!(
                        "snapshot grid ({}, {}) differs from the configured grid ({}, {})",
                        snap.field.len(),
                        snap.field.grid().domain_length(),
                        grid.n_points(),
                        grid.domain_length()
                    )));
                }
                Ok(snap.field)
            }
        }
    }

    /// The config for one sweep point; the amplitude axis sets the Gaussian
    /// amplitude, or its `h1_norm` when that is given.
    pub fn with_point(&self, command: Command, point: &SweepPoint) -> RunConfig {
        let mut cfg = self.clone();
        cfg.command = Some(command);
        cfg.sweep = None;
        if let Some(s) = point.sigma {
            cfg.model.sigma = s;
        }
        if let Some(w) = point.omega {
            cfg.model.omega = w;
        }
        if let Some(a) = point.amplitude {
            match &mut cfg.initial_condition {
                InitialCondition::Gaussian { amplitude, h1_norm, .. } => {
                    if h1_norm.is_some() {
                        *h1_norm = Some(a);
                    } else {
                        *amplitude = a;
                    }
                }
                InitialCondition::RandomSmooth { h1_norm } => *h1_norm = a,
                _ => {}
            }
        }
        cfg
    }
}
