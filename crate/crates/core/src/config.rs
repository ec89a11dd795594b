//! Versioned JSON experiment configuration.
//!
//! A user document is deep-merged over the defaults of its `kind` and then
//! deserialized strictly: unknown keys are rejected and every error carries
//! the JSON path of the offending value.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::complexity::{ComplexityQuery, EstimateMode, HoeffdingForm};
use crate::costs::{ConvexObstacle, CostSpec};
use crate::dynamics::NoiseMode;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Uav,
    Ugv,
    ComplexityTable,
    VarianceSweep,
    CoverageTest,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Uav => "uav",
            ExperimentKind::Ugv => "ugv",
            ExperimentKind::ComplexityTable => "complexity-table",
            ExperimentKind::VarianceSweep => "variance-sweep",
            ExperimentKind::CoverageTest => "coverage-test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Self::Uav, Self::Ugv, Self::ComplexityTable, Self::VarianceSweep, Self::CoverageTest]
            .into_iter()
            .find(|k| k.as_str() == s)
    }
}

/// A weight matrix given either by its diagonal or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self, n: usize, name: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Diagonal(d) if d.len() == n => Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d))),
            MatrixSpec::Full(rows) if rows.len() == n && rows.iter().all(|r| r.len() == n) => {
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
            _ => Err(Error::dim(format!("{name} must be a length-{n} diagonal or an {n}x{n} matrix"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub vertices: Vec<[f64; 2]>,
    #[serde(default)]
    pub margin: f64,
    #[serde(default = "default_projection")]
    pub projection: [usize; 2],
}

fn default_projection() -> [usize; 2] {
    [0, 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringSetting {
    pub name: String,
    pub limits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Double-integrator stability parameters.
    pub a_values: Vec<f64>,
    pub wheelbase: f64,
    pub steering: Vec<SteeringSetting>,
    pub dt: f64,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q: MatrixSpec,
    pub q_terminal: MatrixSpec,
    pub target: Vec<f64>,
    pub omega_c: f64,
    pub obstacles: Vec<ObstacleConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiSection {
    pub num_samples: usize,
    pub lambda: f64,
    pub horizon: usize,
    pub zero_noise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosedLoopSection {
    pub runs: usize,
    pub outer_steps: usize,
    pub actuation_noise: bool,
    /// Trailing steps averaged in the dispersion summary.
    pub dispersion_window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComplexityModel {
    DoubleIntegrator,
    SimpleCar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexitySection {
    pub route: EstimateMode,
    pub model: ComplexityModel,
    pub horizons: Vec<usize>,
    pub pilot_samples: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub log10_cap: f64,
    pub include_indicator: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub horizons: Vec<usize>,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageSection {
    /// Scalar testbed `x' = a x + b (u + δ)`.
    pub a: f64,
    pub b: f64,
    pub horizon: usize,
    pub x0: f64,
    pub target: f64,
    pub lambda: f64,
    pub dt: f64,
    pub eps1: f64,
    pub rho1: f64,
    pub eps2: f64,
    pub rho2: f64,
    pub repetitions: usize,
    pub reference_samples: usize,
    /// Multiplies both sample counts.
    pub sample_scale: f64,
    pub zero_noise: bool,
}

/// A fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub delta_mode: NoiseMode,
    pub hoeffding_form: HoeffdingForm,
    pub model: ModelSection,
    pub cost: CostSection,
    pub pi: PiSection,
    pub closed_loop: ClosedLoopSection,
    pub complexity: ComplexitySection,
    pub sweep: SweepSection,
    pub coverage: CoverageSection,
}

fn base_defaults() -> Value {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let twelfth = std::f64::consts::PI / 12.0;
    json!({
        "version": SCHEMA_VERSION,
        "seed": 1,
        "output": null,
        "delta_mode": "folded",
        "hoeffding_form": "eq9",
        "model": {
            "a_values": [-0.5, -0.1, 0.0, 0.1],
            "wheelbase": 0.5,
            "steering": [
                {"name": "narrow", "limits": [-twelfth, twelfth]},
                {"name": "wide", "limits": [-half_pi + 0.01, half_pi - 0.01]}
            ],
            "dt": 0.1,
            "x0": [0.0, 0.0, 0.0, 0.0]
        },
        "cost": {
            "q": [1.0, 1.0, 1.0, 1.0],
            "q_terminal": [1.0, 1.0, 1.0, 1.0],
            "target": [8.0, 8.0, 0.0, 0.0],
            "omega_c": 100.0,
            "obstacles": [
                {"vertices": [[3.5, 3.5], [4.5, 3.5], [4.5, 4.5], [3.5, 4.5]], "margin": 0.2, "projection": [0, 1]}
            ]
        },
        "pi": {"num_samples": 10000, "lambda": 1.0, "horizon": 40, "zero_noise": false},
        "closed_loop": {"runs": 5, "outer_steps": 7000, "actuation_noise": true, "dispersion_window": 50},
        "complexity": {
            "route": "analytic",
            "model": "double-integrator",
            "horizons": [50, 100, 150],
            "pilot_samples": 50000,
            "eps1": 0.01,
            "eps2": 0.1,
            "rho1": 0.05,
            "rho2": 0.05,
            "log10_cap": 300.0,
            "include_indicator": true
        },
        "sweep": {"horizons": [10, 20, 30], "batches": 4},
        "coverage": {
            "a": 0.9,
            "b": 0.5,
            "horizon": 5,
            "x0": 0.0,
            "target": 1.0,
            "lambda": 1.0,
            "dt": 0.1,
            "eps1": 0.05,
            "rho1": 0.05,
            "eps2": 0.1,
            "rho2": 0.05,
            "repetitions": 1000,
            "reference_samples": 10_000_000,
            "sample_scale": 1.0,
            "zero_noise": false
        }
    })
}

fn car_weights() -> Value {
    json!([0.1, 0.1, 1e-4, 1e-4])
}

fn kind_defaults(kind: ExperimentKind) -> Value {
    match kind {
        ExperimentKind::Uav => json!({"delta_mode": "diffusion"}),
        ExperimentKind::Ugv => json!({
            "delta_mode": "diffusion",
            "cost": {"q": car_weights(), "q_terminal": car_weights(), "target": [4.0, 4.0, 0.0, 0.0], "obstacles": [], "omega_c": 0.0},
            "pi": {"lambda": 0.1},
            "closed_loop": {"outer_steps": 300, "actuation_noise": false}
        }),
        ExperimentKind::ComplexityTable => json!({"pi": {"lambda": 10.0}}),
        ExperimentKind::VarianceSweep => json!({"pi": {"lambda": 10.0}, "model": {"a_values": [-0.5, -0.1, 0.0]}}),
        ExperimentKind::CoverageTest => json!({}),
    }
}

/// Defaults of the UGV pilot-batch table (empirical route on the car).
pub fn ugv_complexity_overrides() -> Value {
    json!({
        "kind": "complexity-table",
        "cost": {"q": car_weights(), "q_terminal": car_weights(), "target": [1.0, 1.0, 0.0, 0.0], "obstacles": [], "omega_c": 0.0},
        "complexity": {"route": "empirical", "model": "simple-car", "horizons": [200]}
    })
}

/// Recursively overlays `patch` on `base`; objects merge, everything else
/// replaces.
pub fn deep_merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.to_string(), message: message.into() }
}

/// A merged document together with its parsed form.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// Canonical (sorted-key) JSON of the resolved document.
    pub canonical: String,
}

impl LoadedConfig {
    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Resolves a user document: checks `version`, merges the defaults of its
/// `kind` underneath and deserializes strictly.
pub fn resolve(user: &Value) -> Result<LoadedConfig> {
    let obj = user.as_object().ok_or_else(|| config_err("$", "configuration must be a JSON object"))?;
    match obj.get("version") {
        Some(Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        Some(other) => return Err(config_err("version", format!("unsupported schema version {other}, expected {SCHEMA_VERSION}"))),
        None => return Err(config_err("version", "missing schema version")),
    }
    let kind = match obj.get("kind") {
        Some(Value::String(s)) => ExperimentKind::parse(s).ok_or_else(|| {
            config_err("kind", format!("unknown experiment kind `{s}` (expected uav|ugv|complexity-table|variance-sweep|coverage-test)"))
        })?,
        _ => return Err(config_err("kind", "missing experiment kind")),
    };
    let mut merged = base_defaults();
    deep_merge(&mut merged, &kind_defaults(kind));
    deep_merge(&mut merged, user);
    let config: ExperimentConfig = serde_path_to_error::deserialize(&merged).map_err(|e| {
        let path = e.path().to_string();
        config_err(&path, e.into_inner().to_string())
    })?;
    config.validate()?;
    let canonical = serde_json::to_string(&merged).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(LoadedConfig { config, canonical })
}

/// Parses a configuration file into a JSON document.
pub fn read_document(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(&path.display().to_string(), format!("cannot read: {e}")))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| config_err(&e.path().to_string(), e.into_inner().to_string()))
}

/// Reads and resolves a configuration file.
pub fn load(path: &Path) -> Result<LoadedConfig> {
    resolve(&read_document(path)?)
}

/// Defaults for `kind` with no user overrides.
pub fn defaults(kind: ExperimentKind) -> LoadedConfig {
    resolve(&json!({"version": SCHEMA_VERSION, "kind": kind.as_str()})).expect("built-in defaults are valid")
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !(m.dt > 0.0) {
            return Err(config_err("model.dt", "must be positive"));
        }
        if !(m.wheelbase > 0.0) {
            return Err(config_err("model.wheelbase", "must be positive"));
        }
        if m.x0.len() != 4 {
            return Err(config_err("model.x0", "must have 4 entries"));
        }
        if let Some(i) = m.a_values.iter().position(|a| !(-0.5..=0.5).contains(a)) {
            return Err(config_err(&format!("model.a_values[{i}]"), "must lie in [-0.5, 0.5]"));
        }
        if let Some(i) = m.steering.iter().position(|s| !(s.limits[0] <= s.limits[1])) {
            return Err(config_err(&format!("model.steering[{i}].limits"), "lower limit exceeds upper limit"));
        }
        if self.cost.target.len() != 4 {
            return Err(config_err("cost.target", "must have 4 entries"));
        }
        if !(self.cost.omega_c >= 0.0) {
            return Err(config_err("cost.omega_c", "must be nonnegative"));
        }
        let p = &self.pi;
        if p.num_samples == 0 {
            return Err(config_err("pi.num_samples", "must be at least 1"));
        }
        if !(p.lambda > 0.0) {
            return Err(config_err("pi.lambda", "must be positive"));
        }
        if p.horizon == 0 {
            return Err(config_err("pi.horizon", "must be at least 1"));
        }
        if self.closed_loop.runs == 0 || self.closed_loop.outer_steps == 0 {
            return Err(config_err("closed_loop", "runs and outer_steps must be at least 1"));
        }
        let c = &self.complexity;
        if c.horizons.contains(&0) {
            return Err(config_err("complexity.horizons", "horizons must be at least 1"));
        }
        self.query().validate().map_err(|e| config_err("complexity", e.to_string()))?;
        if self.sweep.horizons.contains(&0) || self.sweep.batches == 0 {
            return Err(config_err("sweep", "horizons and batches must be at least 1"));
        }
        let cv = &self.coverage;
        if cv.repetitions == 0 || cv.reference_samples < 2 || cv.horizon == 0 || !(cv.sample_scale > 0.0) {
            return Err(config_err("coverage", "repetitions, horizon, sample_scale must be positive and reference_samples ≥ 2"));
        }
        self.cost_spec().map_err(|e| config_err("cost", e.to_string()))?;
        Ok(())
    }

    pub fn query(&self) -> ComplexityQuery {
        let c = &self.complexity;
        ComplexityQuery { eps1: c.eps1, eps2: c.eps2, rho1: c.rho1, rho2: c.rho2, lambda: self.pi.lambda }
    }

    pub fn obstacles(&self) -> Result<Vec<ConvexObstacle>> {
        self.cost
            .obstacles
            .iter()
            .map(|o| ConvexObstacle::new(o.vertices.clone(), o.margin, o.projection))
            .collect()
    }

    pub fn cost_spec(&self) -> Result<CostSpec> {
        CostSpec::new(
            self.cost.q.to_matrix(4, "cost.q")?,
            self.cost.q_terminal.to_matrix(4, "cost.q_terminal")?,
            DVector::from_column_slice(&self.cost.target),
            self.model.dt,
            self.pi.lambda,
            self.cost.omega_c,
            self.obstacles()?,
        )
    }
}
