//! Settings file. Command-line flags and `ARROWRL_*` environment variables
//! override anything read here.

use std::path::{Path, PathBuf};

use arrowrl_core::classify::{CategorySource, EndpointConfig};
use arrowrl_core::policysim::SimConfig;
use arrowrl_core::reward::DEFAULT_LAMBDA;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_MAX_BATCH: usize = 1024;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub score: ScoreSettings,
    pub server: ServerSettings,
    pub classify: ClassifySettings,
    pub simulation: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSettings {
    pub lambda: f64,
}

impl Default for ScoreSettings {
    fn default() -> Self {
        ScoreSettings { lambda: DEFAULT_LAMBDA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSettings {
    pub bind: String,
    pub max_batch: usize,
}

impl Default for ServerSettings {
    fn default() -> Self {
        ServerSettings {
            bind: DEFAULT_BIND.into(),
            max_batch: DEFAULT_MAX_BATCH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySettings {
    /// Replaces the bundled verb lexicon.
    pub lexicon: Option<PathBuf>,
    /// JSONL cache for LLM answers.
    pub cache: Option<PathBuf>,
    /// Chat-completion endpoint; the LLM classifier is disabled when absent.
    pub llm: Option<EndpointConfig>,
    pub precedence: Vec<CategorySource>,
}

impl Default for ClassifySettings {
    fn default() -> Self {
        ClassifySettings {
            lexicon: None,
            cache: None,
            llm: None,
            precedence: vec![
                CategorySource::ManualLabel,
                CategorySource::ExternalLlm,
                CategorySource::RuleBased,
            ],
        }
    }
}

impl AppConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))
    }

    /// Loads `path` when given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map_or_else(|| Ok(AppConfig::default()), AppConfig::load)
    }
}
