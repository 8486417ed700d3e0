//! Flat key-value run specification (TOML). Every key is optional; unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::{AdmmInit, ConfigError, CriterionScope, EtaSchedule, SqpConfig, StallPolicy};
use crate::linalg;
use crate::problems::{BenchProblem, ProblemId};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid run file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown schedule {0:?} (expected constant, geometric or residual)")]
    Schedule(String),
    #[error("initial_point = \"given\" requires x0")]
    MissingX0,
    #[error("x0 has {got} entries, problem has {expected} variables")]
    X0Length { got: usize, expected: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialPoint {
    /// The problem's default start (flat start for net3).
    #[default]
    Flat,
    Given,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant,
    Geometric,
    Residual,
}

impl std::str::FromStr for ScheduleKind {
    type Err = SpecError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "constant" => Ok(ScheduleKind::Constant),
            "geometric" => Ok(ScheduleKind::Geometric),
            "residual" | "residual-proportional" | "residual_proportional" => Ok(ScheduleKind::Residual),
            _ => Err(SpecError::Schedule(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub problem: Option<ProblemId>,
    pub seed: Option<u64>,
    pub initial_point: Option<InitialPoint>,
    /// Stacked primal start, used with `initial_point = "given"`.
    pub x0: Option<Vec<f64>>,
    pub out_dir: Option<PathBuf>,
    pub eps: Option<f64>,
    pub eta0: Option<f64>,
    pub schedule: Option<ScheduleKind>,
    pub geometric_factor: Option<f64>,
    pub residual_scale: Option<f64>,
    pub rho: Option<f64>,
    pub delta: Option<f64>,
    pub k_max: Option<usize>,
    pub l_max: Option<usize>,
    pub admm_init: Option<AdmmInit>,
    pub stall_policy: Option<StallPolicy>,
    pub criterion_scope: Option<CriterionScope>,
    pub parallel: Option<bool>,
}

impl RunSpec {
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, SpecError> {
        let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Solver configuration; unset keys fall back to the defaults, `rho` to
    /// `default_rho`. The result is validated.
    pub fn sqp_config(&self, default_rho: f64) -> Result<SqpConfig, SpecError> {
        let d = SqpConfig::default();
        let schedule = match self.schedule {
            None => d.schedule,
            Some(ScheduleKind::Constant) => EtaSchedule::Constant,
            Some(ScheduleKind::Geometric) => EtaSchedule::Geometric {
                factor: self.geometric_factor.unwrap_or(0.9),
            },
            Some(ScheduleKind::Residual) => EtaSchedule::ResidualProportional {
                scale: self.residual_scale.unwrap_or(1.0),
            },
        };
        let cfg = SqpConfig {
            eps: self.eps.unwrap_or(d.eps),
            eta0: self.eta0.unwrap_or(d.eta0),
            schedule,
            rho: self.rho.unwrap_or(default_rho),
            delta: self.delta.unwrap_or(d.delta),
            k_max: self.k_max.unwrap_or(d.k_max),
            l_max: self.l_max.unwrap_or(d.l_max),
            admm_init: self.admm_init.unwrap_or(d.admm_init),
            stall_policy: self.stall_policy.unwrap_or(d.stall_policy),
            criterion_scope: self.criterion_scope.unwrap_or(d.criterion_scope),
            parallel: self.parallel.unwrap_or(d.parallel),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Primal start for `bench`.
    pub fn start(&self, bench: &BenchProblem) -> Result<Vec<DVector<f64>>, SpecError> {
        match self.initial_point.unwrap_or_default() {
            InitialPoint::Flat => Ok(bench.x0.clone()),
            InitialPoint::Given => {
                let x0 = self.x0.as_ref().ok_or(SpecError::MissingX0)?;
                let expected = bench.problem.n_vars_total();
                if x0.len() != expected {
                    return Err(SpecError::X0Length { got: x0.len(), expected });
                }
                Ok(linalg::split(&DVector::from_column_slice(x0), &bench.problem.var_dims()))
            }
        }
    }
}
