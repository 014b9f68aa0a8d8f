//! Declarative run configuration.
//!
//! One TOML file describes a run; secrets come from the environment and
//! individual settings can be overridden by CLI flags, with precedence
//! CLI flag > environment > file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use icm_core::model::{default_labels, AnnealingConfig};
use icm_core::scorer::{ScorerBackend, SyntheticScorer};
use serde::{Deserialize, Serialize};

use crate::backend::{HttpBackend, HttpBackendConfig};

/// Environment variable supplying the HTTP backend auth token.
pub const TOKEN_ENV_VAR: &str = "ICM_BACKEND_TOKEN";

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub annealing: AnnealingSettings,
    pub backend: BackendConfig,
    pub evaluation: EvaluationConfig,
    pub pipeline: PipelineConfig,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    /// Source kind for `ingest`; omitted for the native JSONL format.
    pub source: Option<String>,
    pub sample_size: Option<usize>,
    pub sample_seed: u64,
}

/// Mirror of the core annealing schedule with file-level defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealingSettings {
    pub seed_count: usize,
    pub initial_temperature: f64,
    pub final_temperature: f64,
    pub cooling_rate: f64,
    pub max_iterations: usize,
    pub rng_seed: u64,
    pub alpha: f64,
    pub context_budget: usize,
}

impl Default for AnnealingSettings {
    fn default() -> Self {
        let core = AnnealingConfig::default();
        AnnealingSettings {
            seed_count: core.seed_count,
            initial_temperature: core.initial_temperature,
            final_temperature: core.final_temperature,
            cooling_rate: core.cooling_rate,
            max_iterations: core.max_iterations,
            rng_seed: core.rng_seed,
            alpha: core.alpha,
            context_budget: core.context_budget,
        }
    }
}

impl AnnealingSettings {
    pub fn to_core(&self) -> AnnealingConfig {
        AnnealingConfig {
            seed_count: self.seed_count,
            initial_temperature: self.initial_temperature,
            final_temperature: self.final_temperature,
            cooling_rate: self.cooling_rate,
            max_iterations: self.max_iterations,
            rng_seed: self.rng_seed,
            alpha: self.alpha,
            context_budget: self.context_budget,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenWeight {
    pub token: String,
    /// Label string, e.g. "True"; resolved against the default label set.
    pub label: String,
    pub weight: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Synthetic {
        #[serde(default)]
        coupling: f64,
        #[serde(default)]
        noise_seed: u64,
        #[serde(default)]
        noise_scale: f64,
        #[serde(default)]
        token_weights: Vec<TokenWeight>,
    },
    Http {
        endpoint: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
        #[serde(default = "default_max_context")]
        max_context: usize,
        /// File-level token; overridden by the environment and CLI.
        #[serde(default)]
        token: Option<String>,
    },
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_max_retries() -> u32 {
    3
}

fn default_max_context() -> usize {
    64
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Synthetic { coupling: 0.0, noise_seed: 0, noise_scale: 0.0, token_weights: Vec::new() }
    }
}

impl BackendConfig {
    pub fn name(&self) -> &'static str {
        match self {
            BackendConfig::Synthetic { .. } => "synthetic",
            BackendConfig::Http { .. } => "http",
        }
    }

    /// Builds the scorer, resolving the auth token with precedence
    /// `cli_token` > `ICM_BACKEND_TOKEN` > config file.
    pub fn build(&self, cli_token: Option<&str>) -> anyhow::Result<Box<dyn ScorerBackend>> {
        match self {
            BackendConfig::Synthetic { coupling, noise_seed, noise_scale, token_weights } => {
                let mut scorer = SyntheticScorer::new(*coupling, *noise_seed, *noise_scale);
                let labels = default_labels();
                for tw in token_weights {
                    let label = labels
                        .iter()
                        .position(|l| *l == tw.label)
                        .with_context(|| format!("unknown label {:?} in token_weights", tw.label))?;
                    scorer = scorer.with_token_weight(&tw.token, label, tw.weight);
                }
                Ok(Box::new(scorer))
            }
            BackendConfig::Http { endpoint, timeout_secs, max_retries, max_context, token } => {
                let token = cli_token
                    .map(str::to_owned)
                    .or_else(|| std::env::var(TOKEN_ENV_VAR).ok())
                    .or_else(|| token.clone());
                let backend = HttpBackend::new(HttpBackendConfig {
                    endpoint: endpoint.clone(),
                    token,
                    timeout: Duration::from_secs(*timeout_secs),
                    max_retries: *max_retries,
                    initial_backoff: Duration::from_millis(100),
                    max_context: *max_context,
                })?;
                Ok(Box::new(backend))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub shots: usize,
    pub instruction_path: Option<PathBuf>,
    pub seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { shots: 16, instruction_path: None, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// ICM seed set size for the scale-up pipeline.
    pub seed_size: usize,
    pub demo_pool_size: usize,
    pub pseudo_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { seed_size: 4000, demo_pool_size: 32, pseudo_seed: 0 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.annealing.to_core().validate().map_err(|e| anyhow::anyhow!("annealing config: {e}"))?;
        for path in [&self.dataset.path, &self.evaluation.instruction_path].into_iter().flatten() {
            if !path.exists() {
                bail!("configured path {} does not exist", path.display());
            }
        }
        Ok(())
    }

    /// The `config.echo` artifact: the resolved configuration plus the
    /// versions that produced it, written into every run directory.
    pub fn echo(&self) -> String {
        let body = toml::to_string_pretty(self).expect("config serializes");
        format!("# icm-pipeline {}\n# icm-core {}\n{body}", env!("CARGO_PKG_VERSION"), icm_core_version())
    }
}

fn icm_core_version() -> &'static str {
    // Workspace-internal dependency; versions move together.
    env!("CARGO_PKG_VERSION")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let config = RunConfig::default();
        let text = toml::to_string_pretty(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.pipeline.seed_size, 4000);
        assert_eq!(back.annealing.alpha, AnnealingConfig::default().alpha);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[annealing]\nalfa = 3.0\n").unwrap_err();
        assert!(err.to_string().contains("alfa"));
    }

    #[test]
    fn synthetic_backend_builds_with_token_weights() {
        let config: RunConfig = toml::from_str(
            "[backend]\nkind = \"synthetic\"\ncoupling = 1.0\n\
             token_weights = [{ token = \"alpha\", label = \"True\", weight = 0.5 }]\n",
        )
        .unwrap();
        assert_eq!(config.backend.name(), "synthetic");
        assert!(config.backend.build(None).is_ok());
    }

    #[test]
    fn bad_token_weight_label_is_an_error() {
        let config: RunConfig = toml::from_str(
            "[backend]\nkind = \"synthetic\"\n\
             token_weights = [{ token = \"alpha\", label = \"Maybe\", weight = 0.5 }]\n",
        )
        .unwrap();
        let err = match config.backend.build(None) {
            Err(err) => err,
            Ok(_) => panic!("unknown label accepted"),
        };
        assert!(err.to_string().contains("Maybe"));
    }

    #[test]
    fn missing_dataset_path_fails_validation() {
        let mut config = RunConfig::default();
        config.dataset.path = Some(PathBuf::from("/nonexistent/dataset.jsonl"));
        assert!(config.validate().is_err());
    }

    #[test]
    fn echo_names_the_versions() {
        let echo = RunConfig::default().echo();
        assert!(echo.starts_with("# icm-pipeline "));
        assert!(echo.contains("[pipeline]"));
    }
}
