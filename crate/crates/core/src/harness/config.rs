use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asymptotics::{LambdaSchedule, PenaltyCase};
use crate::estimators::EstimatorOptions;
use crate::glm::ModelSpec;
use crate::penalties::{PenaltySpec, DEFAULT_SCAD_A};
use crate::{Error, Result};

pub const DEFAULT_MOMENT_SAMPLES: usize = 200_000;

fn default_scad_a() -> f64 {
    DEFAULT_SCAD_A
}

fn default_moment_samples() -> usize {
    DEFAULT_MOMENT_SAMPLES
}

fn default_true() -> bool {
    true
}

/// Penalty family without its level; the level follows the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum PenaltyFamily {
    #[serde(rename = "lgamma")]
    LGamma { gamma: f64 },
    Lasso,
    Scad {
        #[serde(default = "default_scad_a")]
        a: f64,
    },
}

impl PenaltyFamily {
    pub fn with_lambda(&self, lambda: f64) -> PenaltySpec {
        match *self {
            PenaltyFamily::LGamma { gamma } => PenaltySpec::LGamma { gamma, lambda },
            PenaltyFamily::Lasso => PenaltySpec::Lasso { lambda },
            PenaltyFamily::Scad { a } => PenaltySpec::Scad { lambda, a },
        }
    }

    pub fn case(&self) -> PenaltyCase {
        PenaltyCase::of(&self.with_lambda(1.0))
    }

    pub fn name(&self) -> &'static str {
        self.with_lambda(1.0).family_name()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub penalty: PenaltyFamily,
    pub lambda0: f64,
    /// Defaults to the exponent the penalty family requires.
    #[serde(default)]
    pub rate_exponent: Option<f64>,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    #[serde(default)]
    pub estimator_options: EstimatorOptions,
    pub limit_draws: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Monte Carlo budget for `M`, `V`, `E|eps|`.
    #[serde(default = "default_moment_samples")]
    pub moment_samples: usize,
    /// Also fit the penalized-likelihood baseline.
    #[serde(default = "default_true")]
    pub baseline: bool,
    #[serde(default)]
    pub threads: Option<usize>,
    /// Store measured wall times; off by default so records are reproducible byte for byte.
    #[serde(default)]
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn schedule(&self) -> LambdaSchedule {
        LambdaSchedule {
            lambda0: self.lambda0,
            exponent: self.rate_exponent.unwrap_or_else(|| self.penalty.case().rate_exponent()),
        }
    }

    pub fn penalty_at(&self, n: usize) -> PenaltySpec {
        self.penalty.with_lambda(self.schedule().at(n))
    }

    pub fn largest_n(&self) -> usize {
        *self.n_grid.last().expect("validated n_grid is nonempty")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.penalty.with_lambda(1.0).validate().map_err(|e| Error::Config(e.to_string()))?;
        self.estimator_options.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) {
            return bad("lambda0 must be finite and nonnegative".into());
        }
        if self.replications < 1 {
            return bad("replications must be >= 1".into());
        }
        if self.n_grid.is_empty() || self.n_grid[0] < 1 || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("n_grid must be nonempty, positive and strictly ascending".into());
        }
        let required = self.penalty.case().rate_exponent();
        if let Some(e) = self.rate_exponent {
            if (e - required).abs() > 1e-12 {
                return bad(format!("rate_exponent {e} does not match the {} penalty, which needs {required}", self.penalty.name()));
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1".into());
        }
        if self.limit_draws > 0 && self.moment_samples < crate::asymptotics::MIN_MC_SAMPLES {
            return bad(format!("moment_samples must be at least {}", crate::asymptotics::MIN_MC_SAMPLES));
        }
        Ok(())
    }
}
