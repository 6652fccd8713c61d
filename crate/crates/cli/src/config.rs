use serde::{Deserialize, Serialize};

use bdpre::env::{AtomConfig, EnvironmentLaw, LawConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

/// One experiment: the environment law plus every tuning parameter.
///
/// Missing keys take defaults; unknown keys are rejected. The serialized form
/// is the resolved config, which re-runs the experiment exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "L")]
    pub jump_bound: usize,
    pub atoms: Vec<AtomConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::steps")]
    pub steps: u64,
    #[serde(default = "defaults::replicas")]
    pub replicas: u64,
    #[serde(default = "defaults::burn_in")]
    pub burn_in: u64,
    #[serde(default = "defaults::tolerance")]
    pub tolerance: f64,
    #[serde(default = "defaults::horizon")]
    pub horizon: f64,
    #[serde(default = "defaults::n_paths")]
    pub n_paths: u64,
    #[serde(default = "defaults::n_samples")]
    pub n_samples: u64,
    #[serde(default = "defaults::n_env")]
    pub n_env: u64,
    #[serde(default = "defaults::max_terms")]
    pub max_terms: u64,
    #[serde(default = "defaults::rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "defaults::step_cap")]
    pub step_cap: u64,
    #[serde(default = "defaults::generation_cap")]
    pub generation_cap: u64,
    #[serde(default = "defaults::target")]
    pub target: i64,
    #[serde(default)]
    pub output_path: Option<String>,
    #[serde(default)]
    pub output_format: OutputFormat,
}

mod defaults {
    pub fn steps() -> u64 {
        100_000
    }
    pub fn replicas() -> u64 {
        8
    }
    pub fn burn_in() -> u64 {
        bdpre::matrices::DEFAULT_BURN_IN
    }
    pub fn tolerance() -> f64 {
        1e-3
    }
    pub fn horizon() -> f64 {
        1_000.0
    }
    pub fn n_paths() -> u64 {
        200
    }
    pub fn n_samples() -> u64 {
        10_000
    }
    pub fn n_env() -> u64 {
        100
    }
    pub fn max_terms() -> u64 {
        1_000_000
    }
    pub fn rel_tol() -> f64 {
        1e-10
    }
    pub fn step_cap() -> u64 {
        bdpre::simulate::DEFAULT_STEP_CAP
    }
    pub fn generation_cap() -> u64 {
        bdpre::branching::DEFAULT_GENERATION_CAP
    }
    pub fn target() -> i64 {
        1
    }
}

fn invalid(key: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("config key `{key}`: {reason}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let counts = [
            ("steps", self.steps),
            ("replicas", self.replicas),
            ("n_paths", self.n_paths),
            ("n_samples", self.n_samples),
            ("n_env", self.n_env),
            ("max_terms", self.max_terms),
            ("step_cap", self.step_cap),
            ("generation_cap", self.generation_cap),
        ];
        for (key, value) in counts {
            if value == 0 {
                return Err(invalid(key, "must be positive"));
            }
        }
        if self.target < 1 {
            return Err(invalid("target", "must be at least 1"));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(invalid("rel_tol", format!("{} is not in (0, 1)", self.rel_tol)));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(invalid("tolerance", format!("{} is not positive", self.tolerance)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", format!("{} is not a positive time", self.horizon)));
        }
        self.law()?;
        Ok(())
    }

    pub fn law(&self) -> Result<EnvironmentLaw, CliError> {
        let config = LawConfig { jump_bound: self.jump_bound, atoms: self.atoms.clone() };
        EnvironmentLaw::from_config(&config).map_err(|e| invalid("atoms", e))
    }
}
