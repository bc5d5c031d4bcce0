//! Shared fixtures for the agent integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use pulse_agent::config::AgentConfig;
use pulse_agent::datastore::{IngestRequest, Store};
use pulse_agent::llm::{LlmBackend, RecordingBackend, ScriptedBackend};
use pulse_agent::orchestrator::registry::Registry;
use pulse_agent::orchestrator::rules::RuleResponder;
use pulse_agent::orchestrator::Orchestrator;
use pulse_agent::synth::{seed_store, CorpusSpec};
use pulse_core::Channel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// 2019-07-25T14:00:00Z
pub const FIXTURE_START: f64 = 1_564_063_200.0;

/// Ten 6-minute PPG/ECG pairs. Users p01..p05 each have one pair starting
/// at 14:00 and one at 14:30.
pub fn fixture_spec() -> CorpusSpec {
    CorpusSpec {
        recordings: 10,
        duration_s: 360.0,
        ecg_rate_hz: 250.0,
        start_epoch_s: FIXTURE_START,
        seed: 11,
        ..CorpusSpec::default()
    }
}

/// Seeds `dir` with the fixture corpus plus a pure-noise PPG recording for
/// user p09 at 16:00.
pub fn fixture_store(dir: &Path) -> (Store, AgentConfig) {
    let config = AgentConfig {
        data_root: dir.to_path_buf(),
        ..AgentConfig::default()
    };
    let store = Store::open(dir, config.trim_s).unwrap();
    seed_store(&store, &fixture_spec()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let noise: Vec<f64> = (0..360 * 20).map(|_| normal.sample(&mut rng)).collect();
    store
        .insert(
            &IngestRequest {
                user_id: "p09".into(),
                modality: Channel::Ppg,
                start_epoch_s: FIXTURE_START + 7_200.0,
                sample_rate_hz: 20.0,
            },
            &noise,
        )
        .unwrap();
    (store, config)
}

pub fn orchestrator(store: &Store, config: &AgentConfig, llm: Arc<dyn LlmBackend>) -> Orchestrator {
    Orchestrator::new(Registry::builtin(), store.clone(), config.clone(), llm)
}

/// Count of numeric literals (integers, decimals, exponents, NaN) in
/// `text`, after removing date-times and recording ids, which name data
/// rather than carry sample values.
pub fn numeric_literals(text: &str) -> usize {
    let names = regex::Regex::new(
        r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}(?::\d{2})?|\b\w+-(?:ppg|ecg_lead_ii)-\d+\b",
    )
    .unwrap();
    let stripped = names.replace_all(text, " ");
    let number = regex::Regex::new(r"(?i)\bnan\b|\d+(?:\.\d+)?(?:e[-+]?\d+)?").unwrap();
    number.find_iter(&stripped).count()
}

/// A recorded transcript under `tests/fixtures/`.
///
/// Normally replayed strictly: a prompt missing from the transcript fails
/// with BackendUnavailable. With `PULSE_AGENT_BLESS=1` the rule responder
/// answers instead and `finish` rewrites the file.
pub struct Transcript {
    path: std::path::PathBuf,
    bless: bool,
    pub backend: Arc<RecordingBackend<Arc<dyn LlmBackend>>>,
}

impl Transcript {
    pub fn open(name: &str) -> Self {
        let path = Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/fixtures")
            .join(name);
        let bless = std::env::var_os("PULSE_AGENT_BLESS").is_some();
        let inner: Arc<dyn LlmBackend> = if bless {
            Arc::new(RuleResponder)
        } else {
            let scripted = ScriptedBackend::load(&path).unwrap_or_else(|e| {
                panic!(
                    "{}: {e} (run with PULSE_AGENT_BLESS=1 to record)",
                    path.display()
                )
            });
            Arc::new(scripted)
        };
        Self {
            path,
            bless,
            backend: Arc::new(RecordingBackend::new(inner)),
        }
    }

    pub fn llm(&self) -> Arc<dyn LlmBackend> {
        self.backend.clone()
    }

    /// Writes the transcript when blessing.
    pub fn finish(&self) {
        if self.bless {
            let entries = self.backend.transcript();
            std::fs::create_dir_all(self.path.parent().unwrap()).unwrap();
            std::fs::write(
                &self.path,
                serde_json::to_string_pretty(&entries).unwrap() + "\n",
            )
            .unwrap();
        }
    }
}
