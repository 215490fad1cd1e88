//! Run configuration: one TOML file covering context policy, budgets,
//! sampling, verification, endpoints, tool settings, and harness knobs.
//!
//! Every field has a production default, so an empty file (or a file with
//! only the overrides that matter) is valid. Unknown keys are rejected —
//! a typo'd knob should fail loudly, not silently fall back to a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::EpisodeConfig;
use crate::backend::SamplingParams;
use crate::context::{ContextPolicy, TokenCounter};
use crate::verifier::{ComputeBudget, GlobalVerifyConfig, RunnerMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextSection {
    pub window: usize,
    pub obs_limit: usize,
    pub tokenizer: TokenCounter,
}

impl Default for ContextSection {
    fn default() -> Self {
        let policy = ContextPolicy::default();
        ContextSection {
            window: policy.window,
            obs_limit: policy.obs_limit,
            tokenizer: policy.tokenizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSection {
    pub max_turns: usize,
    pub max_retries: u32,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        EpisodeSection {
            max_turns: 200,
            max_retries: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
    pub context_limit: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let params = SamplingParams::default();
        SamplingSection {
            temperature: params.temperature,
            top_p: params.top_p,
            max_output_tokens: params.max_output_tokens,
            context_limit: params.context_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Review proposed tool calls before dispatch.
    pub local: bool,
    /// Review every n-th step (1 = every step).
    pub every_n: usize,
    /// Run budgeted answer verification after the agent finishes.
    pub global: bool,
    pub threshold: f64,
    pub budget_multiplier: u32,
    pub mode: RunnerMode,
}

impl Default for VerifySection {
    fn default() -> Self {
        let global = GlobalVerifyConfig::default();
        VerifySection {
            local: false,
            every_n: 1,
            global: false,
            threshold: global.threshold,
            budget_multiplier: global.budget.multiplier,
            mode: global.mode,
        }
    }
}

/// Where live runs talk to. All optional: scripted/offline runs need none.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointsSection {
    /// Chat-completions URL for the policy model.
    pub model: Option<String>,
    pub model_name: Option<String>,
    /// Search API URL; absent means a local corpus must be supplied.
    pub search: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolsSection {
    /// Newline-separated domain blocklist file.
    pub blocklist: Option<PathBuf>,
    pub sandbox_timeout_secs: u64,
}

impl Default for ToolsSection {
    fn default() -> Self {
        ToolsSection {
            blocklist: None,
            sandbox_timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessSection {
    pub workers: usize,
}

impl Default for HarnessSection {
    fn default() -> Self {
        HarnessSection { workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub context: ContextSection,
    pub episode: EpisodeSection,
    pub sampling: SamplingSection,
    pub verify: VerifySection,
    pub endpoints: EndpointsSection,
    pub tools: ToolsSection,
    pub harness: HarnessSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn context_policy(&self) -> Result<ContextPolicy, ConfigError> {
        ContextPolicy::new(
            self.context.window,
            self.context.obs_limit,
            self.context.tokenizer,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn sampling_params(&self) -> Result<SamplingParams, ConfigError> {
        let params = SamplingParams {
            temperature: self.sampling.temperature,
            top_p: self.sampling.top_p,
            max_output_tokens: self.sampling.max_output_tokens,
            context_limit: self.sampling.context_limit,
        };
        params
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(params)
    }

    /// Budgets plus context policy plus sampling, ready for the agent loop.
    pub fn episode_config(&self) -> Result<EpisodeConfig, ConfigError> {
        let policy = self.context_policy()?;
        let mut config = EpisodeConfig::new(self.episode.max_turns, self.episode.max_retries, policy)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config.sampling = self.sampling_params()?;
        Ok(config)
    }

    pub fn global_verify_config(&self) -> Result<GlobalVerifyConfig, ConfigError> {
        let budget = ComputeBudget::from_multiplier(self.verify.budget_multiplier)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        GlobalVerifyConfig::new(self.verify.threshold, budget, self.verify.mode)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
