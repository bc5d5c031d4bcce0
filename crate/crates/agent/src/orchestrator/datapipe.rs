//! Session-scoped store of intermediate results.
//!
//! Large payloads (sample arrays, HR series) live here and are referred to
//! by key; prompts only ever carry compact summaries.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use pulse_core::{HrSeries, TimeSeries};
use serde::{Deserialize, Serialize};

use crate::datastore::RecordingMeta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ValueKind {
    TimeseriesRef,
    HrSeries,
    Scalar,
    Text,
    Error,
}

impl ValueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::TimeseriesRef => "TIMESERIES_REF",
            ValueKind::HrSeries => "HR_SERIES",
            ValueKind::Scalar => "SCALAR",
            ValueKind::Text => "TEXT",
            ValueKind::Error => "ERROR",
        }
    }
}

#[derive(Debug, Clone)]
pub enum DataValue {
    TimeseriesRef {
        meta: RecordingMeta,
        series: Arc<TimeSeries>,
    },
    HrSeries {
        hr: Arc<HrSeries>,
        /// Recording the series was computed from.
        recording_id: String,
    },
    Scalar {
        value: f64,
        unit: String,
    },
    Text(String),
    Error {
        code: String,
        message: String,
    },
}

impl DataValue {
    pub fn kind(&self) -> ValueKind {
        match self {
            DataValue::TimeseriesRef { .. } => ValueKind::TimeseriesRef,
            DataValue::HrSeries { .. } => ValueKind::HrSeries,
            DataValue::Scalar { .. } => ValueKind::Scalar,
            DataValue::Text(_) => ValueKind::Text,
            DataValue::Error { .. } => ValueKind::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Planning attempt (0 for the first plan).
    pub attempt: usize,
    pub step: usize,
    pub task: String,
    /// Datapipe keys this value was computed from.
    pub inputs: Vec<String>,
    /// Recordings at the root of the chain.
    pub recording_ids: Vec<String>,
    pub created_unix_ms: u128,
}

#[derive(Debug, Clone)]
pub struct DataPipeEntry {
    pub key: String,
    pub value: DataValue,
    pub meta: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("datapipe key {0} already written")]
pub struct KeyTaken(pub String);

#[derive(Debug, Default, Clone)]
pub struct DataPipe {
    entries: BTreeMap<String, DataPipeEntry>,
    attempts: usize,
}

impl DataPipe {
    pub fn new() -> Self {
        Self::default()
    }

    /// Key for `output` of `step` in planning attempt `attempt`.
    pub fn key_for(attempt: usize, step: usize, output: &str) -> String {
        format!("a{attempt}.s{step}.{output}")
    }

    /// Number for a new planning attempt, unique within this pipe.
    pub fn begin_attempt(&mut self) -> usize {
        self.attempts += 1;
        self.attempts - 1
    }

    /// Stores a value; keys are write-once.
    pub fn put(
        &mut self,
        key: String,
        value: DataValue,
        mut meta: Provenance,
    ) -> Result<(), KeyTaken> {
        if self.entries.contains_key(&key) {
            return Err(KeyTaken(key));
        }
        meta.created_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis());
        self.entries
            .insert(key.clone(), DataPipeEntry { key, value, meta });
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&DataPipeEntry> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &DataPipeEntry> {
        self.entries.values()
    }
}
