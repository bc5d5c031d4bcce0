//! TOML configuration shared by the CLI and the service.

use std::path::{Path, PathBuf};

use chrono::FixedOffset;
use pulse_core::ecg::QrsConfig;
use pulse_core::hr::{IbiAggregate, PipelineConfig, WindowConfig};
use pulse_core::metrics::{OUTLIER_HI_BPM, OUTLIER_LO_BPM};
use pulse_core::peaks::PeakConfig;
use pulse_core::quality::QualityConfig;
use pulse_core::reconstruct::ReconstructConfig;
use serde::{Deserialize, Serialize};

/// Environment variable holding the remote backend's API key.
pub const LLM_KEY_ENV: &str = "PULSE_AGENT_LLM_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub backend: BackendKind,
    /// Chat-completion URL for the remote backend.
    pub endpoint: String,
    pub model: String,
    pub timeout_s: f64,
    /// Transcript fixture for the mock backend.
    pub fixtures: Option<PathBuf>,
    /// When set, prompts missing from the fixtures are answered by the
    /// built-in rule-based responder instead of failing.
    pub mock_fallback: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            timeout_s: 30.0,
            fixtures: None,
            mock_fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrchestratorConfig {
    /// Tree-of-thought breadth.
    pub candidates: usize,
    pub max_replans: usize,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            candidates: 3,
            max_replans: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    pub session_idle_s: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            session_idle_s: 1800,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub data_root: PathBuf,
    /// UTC offset for user-facing date-times, e.g. `+02:00`.
    pub timezone: String,
    pub trim_s: f64,
    pub window_len_s: f64,
    pub hop_s: f64,
    pub ibi_aggregate: IbiAggregate,
    pub min_clean_coverage: f64,
    pub highpass_cutoff_hz: f64,
    pub outlier_lo: f64,
    pub outlier_hi: f64,
    pub quality: QualityConfig,
    pub reconstruction: ReconstructConfig,
    pub peaks: PeakConfig,
    pub qrs: QrsConfig,
    pub llm: LlmConfig,
    pub orchestrator: OrchestratorConfig,
    pub service: ServiceConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        Self {
            data_root: PathBuf::from("data"),
            timezone: "+00:00".into(),
            trim_s: 60.0,
            window_len_s: pipeline.window.window_len_s,
            hop_s: pipeline.window.hop_s,
            ibi_aggregate: pipeline.window.aggregate,
            min_clean_coverage: pipeline.window.min_clean_coverage,
            highpass_cutoff_hz: pipeline.highpass_cutoff_hz,
            outlier_lo: OUTLIER_LO_BPM,
            outlier_hi: OUTLIER_HI_BPM,
            quality: pipeline.quality,
            reconstruction: pipeline.reconstruction,
            peaks: pipeline.peaks,
            qrs: QrsConfig::default(),
            llm: LlmConfig::default(),
            orchestrator: OrchestratorConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("timezone {0:?} is not an offset like +02:00")]
    Timezone(String),
}

impl AgentConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        Self::from_toml(&text).map_err(|source| ConfigError::Parse {
            path: path.into(),
            source,
        })
    }

    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            window_len_s: self.window_len_s,
            hop_s: self.hop_s,
            min_clean_coverage: self.min_clean_coverage,
            aggregate: self.ibi_aggregate,
            ..WindowConfig::default()
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            highpass_cutoff_hz: self.highpass_cutoff_hz,
            quality: self.quality,
            reconstruction: self.reconstruction,
            peaks: self.peaks,
            window: self.window(),
        }
    }

    pub fn tz(&self) -> Result<FixedOffset, ConfigError> {
        parse_offset(&self.timezone).ok_or_else(|| ConfigError::Timezone(self.timezone.clone()))
    }
}

fn parse_offset(s: &str) -> Option<FixedOffset> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("utc") || s == "Z" {
        return FixedOffset::east_opt(0);
    }
    let (sign, rest) = match s.as_bytes().first()? {
        b'+' => (1, &s[1..]),
        b'-' => (-1, &s[1..]),
        _ => return None,
    };
    let (h, m) = rest.split_once(':').unwrap_or((rest, "0"));
    let seconds = h.parse::<i32>().ok()? * 3600 + m.parse::<i32>().ok()? * 60;
    FixedOffset::east_opt(sign * seconds)
}
