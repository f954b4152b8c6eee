//! Config-file defaults and their layering under command-line flags.
//!
//! Every knob resolves as: explicit flag, else config-file value, else the
//! built-in default. The file is TOML with the fields below; unknown keys
//! are rejected so typos surface instead of silently falling back.

use std::path::Path;

use anyhow::Context;
use clap::Args;
use serde::Deserialize;
use splitfit::solve::SolverConfig;

/// Optional defaults read from `--config <FILE>`.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Model registry name.
    pub model: Option<String>,
    /// Sample size (simulate).
    pub n: Option<usize>,
    /// Number of splits (fit).
    pub b: Option<usize>,
    /// Largest split count (b-sweep).
    pub b_max: Option<usize>,
    /// Stage-1 inclusion probability.
    pub pi: Option<f64>,
    /// Confidence level.
    pub level: Option<f64>,
    /// Replications per coverage cell.
    pub replications: Option<usize>,
    /// Seed for anything randomized.
    pub seed: Option<u64>,
    /// Newton solver overrides.
    pub solver: Option<SolverFileConfig>,
}

/// Solver overrides as they appear in the config file.
#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverFileConfig {
    /// Maximum Newton steps.
    pub max_iterations: Option<usize>,
    /// Convergence threshold on the weighted mean score.
    pub residual_tolerance: Option<f64>,
    /// Minimum accepted step size before stopping.
    pub step_tolerance: Option<f64>,
}

impl FileConfig {
    /// Loads the file when a path was given, or empty defaults.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        toml::from_str(&text)
            .with_context(|| format!("cannot parse config file {}", path.display()))
    }
}

/// Solver flags shared by every fitting subcommand.
#[derive(Args, Clone, Copy, Debug, Default)]
pub struct SolverFlags {
    /// Maximum Newton steps per fit
    #[arg(long, value_name = "COUNT")]
    pub max_iterations: Option<usize>,
    /// Convergence threshold on the weighted mean score
    #[arg(long, value_name = "TOL")]
    pub residual_tolerance: Option<f64>,
    /// Minimum accepted step size before stopping
    #[arg(long, value_name = "TOL")]
    pub step_tolerance: Option<f64>,
}

impl SolverFlags {
    /// Resolves flags over file values over the library defaults.
    pub fn resolve(&self, file: &FileConfig) -> SolverConfig<f64> {
        let from_file = file.solver.unwrap_or_default();
        let mut config = SolverConfig::default();
        if let Some(v) = self.max_iterations.or(from_file.max_iterations) {
            config.max_iterations = v;
        }
        if let Some(v) = self.residual_tolerance.or(from_file.residual_tolerance) {
            config.residual_tolerance = v;
        }
        if let Some(v) = self.step_tolerance.or(from_file.step_tolerance) {
            config.step_tolerance = v;
        }
        config
    }
}

/// Picks the seed: flag, else config file, else fresh system entropy.
///
/// Callers print the returned seed so any run can be repeated exactly.
pub fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> u64 {
    flag.or(file.seed).unwrap_or_else(|| rand::random())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values_override_defaults() {
        let file: FileConfig = toml::from_str(
            "seed = 9\n[solver]\nmax_iterations = 7\nresidual_tolerance = 1e-6\n",
        )
        .unwrap();
        let flags = SolverFlags {
            max_iterations: Some(3),
            ..SolverFlags::default()
        };
        let solver = flags.resolve(&file);
        assert_eq!(solver.max_iterations, 3);
        assert_eq!(solver.residual_tolerance, 1e-6);
        assert_eq!(solver.step_tolerance, SolverConfig::<f64>::default().step_tolerance);
        assert_eq!(resolve_seed(None, &file), 9);
        assert_eq!(resolve_seed(Some(4), &file), 4);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = toml::from_str::<FileConfig>("repications = 10\n").unwrap_err();
        assert!(err.to_string().contains("repications"));
    }

    #[test]
    fn missing_config_path_means_empty_defaults() {
        let config = FileConfig::load(None).unwrap();
        assert!(config.model.is_none());
        assert!(config.seed.is_none());
    }
}
