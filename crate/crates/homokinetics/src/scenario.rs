//! Versioned JSON scenario files describing one full experiment: a flow, a
//! kernel, the simulation settings, and the analysis window used by reports.
//!
//! Unknown fields are rejected so published runs stay reproducible.

use crate::dsmc::{InitialDistribution, SimConfig};
use crate::flow::{classify, FlowCase, FlowClass, FlowPath};
use crate::kernel::KernelSpec;
use crate::Mat3;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA: &str = "homokinetics/scenario-v1";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unsupported schema {found:?}, expected {expected:?}")]
    Schema { found: String, expected: &'static str },
    #[error("flow: {0}")]
    Flow(String),
    #[error("config: {0}")]
    Config(String),
}

/// How the deformation is given in a scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowInput {
    /// No deformation; the gas at rest.
    Rest,
    /// A canonical class in its own basis.
    Class(FlowClass),
    /// A classified flow: class constants plus the realizing basis.
    Case(FlowCase),
    /// A raw generator (row-major); classified on load.
    Matrix(#[serde(with = "crate::flow::mat9")] Mat3),
}

fn default_dt_policy() -> f64 {
    0.1
}
fn default_stride() -> usize {
    1
}
fn default_replicas() -> usize {
    1
}
fn default_column() -> String {
    "beta".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    pub initial: InitialDistribution,
    pub n_particles: usize,
    /// Final intrinsic time tau.
    pub duration: f64,
    #[serde(default = "default_dt_policy")]
    pub dt_policy: f64,
    #[serde(default = "default_stride")]
    pub output_stride: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Column handed to the power-law fit.
    #[serde(default = "default_column")]
    pub column: String,
    /// Fit window in t; None means the last full decade.
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    /// Slope tolerance for reports; None means the scaled default.
    #[serde(default)]
    pub tolerance: Option<f64>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self { column: default_column(), window: None, tolerance: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub name: String,
    pub flow: FlowInput,
    pub kernel: KernelSpec,
    pub sim: SimSettings,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    /// Directory for artifacts; the command line's --out overrides it.
    #[serde(default)]
    pub outputs: Option<String>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Scenario, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != SCHEMA {
            return Err(ScenarioError::Schema { found: self.schema.clone(), expected: SCHEMA });
        }
        if self.name.is_empty()
            || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c))
        {
            return Err(ScenarioError::Config(format!(
                "name {:?} must be nonempty and filename-safe",
                self.name
            )));
        }
        self.resolve_flow()?;
        self.to_sim_config()?;
        Ok(())
    }

    /// The classified flow this scenario drives, or None for the gas at rest.
    pub fn resolve_flow(&self) -> Result<Option<FlowCase>, ScenarioError> {
        match &self.flow {
            FlowInput::Rest => Ok(None),
            FlowInput::Class(class) => {
                class.validate().map_err(ScenarioError::Flow)?;
                Ok(Some(FlowCase::canonical(class.clone())))
            }
            FlowInput::Case(case) => {
                case.class.validate().map_err(ScenarioError::Flow)?;
                let gram = case.basis.transpose() * case.basis;
                if (gram - Mat3::identity()).amax() > 1e-9 {
                    return Err(ScenarioError::Flow("basis is not orthonormal".into()));
                }
                Ok(Some(case.clone()))
            }
            FlowInput::Matrix(a) => {
                let path = FlowPath::new(*a).map_err(|e| ScenarioError::Flow(e.to_string()))?;
                classify(&path).map(Some).map_err(|e| ScenarioError::Flow(e.to_string()))
            }
        }
    }

    pub fn to_sim_config(&self) -> Result<SimConfig, ScenarioError> {
        let config = SimConfig {
            case: self.resolve_flow()?,
            kernel: self.kernel,
            initial: self.sim.initial,
            n_particles: self.sim.n_particles,
            dt_policy: self.sim.dt_policy,
            duration: self.sim.duration,
            output_stride: self.sim.output_stride,
            seed: self.sim.seed,
            replicas: self.sim.replicas,
        };
        config.validate().map_err(|e| ScenarioError::Config(e.to_string()))?;
        Ok(config)
    }

    /// Artifact directory, defaulting to `runs`.
    pub fn output_dir(&self) -> &str {
        self.outputs.as_deref().unwrap_or("runs")
    }
}
