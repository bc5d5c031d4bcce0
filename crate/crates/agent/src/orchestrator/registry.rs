//! Task specifications and the built-in analysis tasks.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, FixedOffset};
use pulse_core::ecg::reference_hr_with;
use pulse_core::hr::analyze_ppg;
use pulse_core::Channel;
use serde::Serialize;
use serde_json::Value;

use super::datapipe::{DataPipeEntry, DataValue, ValueKind};
use crate::config::AgentConfig;
use crate::datastore::{parse_instant, Store, StoreError};

/// Semantic type of a task parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "kind")]
pub enum ParamType {
    UserId,
    Modality,
    /// ISO-8601 local date-time or Unix seconds.
    Instant,
    Number,
    Text,
    /// A datapipe reference to a value of the given kind.
    Ref(ValueKind),
}

impl ParamType {
    pub fn describe(self) -> String {
        match self {
            ParamType::UserId => "user id string".into(),
            ParamType::Modality => "\"PPG\" or \"ECG_LEAD_II\"".into(),
            ParamType::Instant => "date-time \"YYYY-MM-DDTHH:MM\" or Unix seconds".into(),
            ParamType::Number => "number".into(),
            ParamType::Text => "string".into(),
            ParamType::Ref(kind) => {
                format!("{{\"ref\": <output of an earlier {} step>}}", kind.as_str())
            }
        }
    }

    /// Whether a JSON literal is acceptable for this type.
    pub fn accepts_literal(self, v: &Value) -> bool {
        match self {
            ParamType::UserId => v.as_str().is_some_and(|s| !s.is_empty()),
            ParamType::Modality => v.as_str().is_some_and(|s| s.parse::<Channel>().is_ok()),
            ParamType::Instant => v.is_number() || v.as_str().is_some_and(|s| !s.trim().is_empty()),
            ParamType::Number => v.is_number(),
            ParamType::Text => v.is_string(),
            ParamType::Ref(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub ty: ParamType,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
    pub produces: ValueKind,
}

impl TaskSpec {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// One-line signature used in planner prompts.
    pub fn signature(&self) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| format!("{}: {}", p.name, p.ty.describe()))
            .collect();
        format!(
            "{}({}) -> {}: {}",
            self.name,
            params.join(", "),
            self.produces.as_str(),
            self.description
        )
    }
}

/// A task failure, carried back to the planner on replanning.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskError {
    pub code: String,
    pub message: String,
    /// Machine-readable context for replanning, e.g. the nearest recording.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hint: Option<Value>,
}

impl TaskError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
            hint: None,
        }
    }
}

/// Resolved arguments of one step.
pub struct Args<'a> {
    pub(crate) values: BTreeMap<String, ArgValue<'a>>,
}

pub enum ArgValue<'a> {
    Literal(&'a Value),
    Entry(&'a DataPipeEntry),
}

impl<'a> Args<'a> {
    fn literal(&self, name: &str) -> Result<&'a Value, TaskError> {
        match self.values.get(name) {
            Some(ArgValue::Literal(v)) => Ok(v),
            _ => Err(TaskError::new(
                "InvalidArgument",
                format!("missing literal {name}"),
            )),
        }
    }

    pub fn str(&self, name: &str) -> Result<&'a str, TaskError> {
        self.literal(name)?
            .as_str()
            .ok_or_else(|| TaskError::new("InvalidArgument", format!("{name} must be a string")))
    }

    pub fn instant(&self, name: &str, tz: FixedOffset) -> Result<f64, TaskError> {
        let v = self.literal(name)?;
        if let Some(x) = v.as_f64() {
            return Ok(x);
        }
        let text = v.as_str().unwrap_or_default();
        parse_instant(text, tz).map_err(|e| TaskError::new(e.code(), e.to_string()))
    }

    pub fn entry(&self, name: &str) -> Result<&'a DataPipeEntry, TaskError> {
        match self.values.get(name) {
            Some(ArgValue::Entry(e)) => Ok(e),
            _ => Err(TaskError::new(
                "InvalidArgument",
                format!("missing reference {name}"),
            )),
        }
    }

    /// Datapipe keys among the arguments.
    pub fn input_keys(&self) -> Vec<String> {
        self.values
            .values()
            .filter_map(|v| match v {
                ArgValue::Entry(e) => Some(e.key.clone()),
                ArgValue::Literal(_) => None,
            })
            .collect()
    }
}

pub struct TaskContext<'a> {
    pub store: &'a Store,
    pub config: &'a AgentConfig,
    pub tz: FixedOffset,
}

pub trait Task: Send + Sync {
    fn spec(&self) -> &TaskSpec;
    fn run(&self, args: &Args<'_>, ctx: &TaskContext<'_>) -> Result<DataValue, TaskError>;
}

#[derive(Clone, Default)]
pub struct Registry {
    tasks: BTreeMap<String, Arc<dyn Task>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry with the four built-in tasks.
    pub fn builtin() -> Self {
        let mut r = Self::new();
        r.register(LookupRecording::new()).expect("unique");
        r.register(EstimateHrPpg::new()).expect("unique");
        r.register(ReferenceHrEcg::new()).expect("unique");
        r.register(SummarizeHr::new()).expect("unique");
        r
    }

    /// Adds a task; names must be unique.
    pub fn register(&mut self, task: impl Task + 'static) -> Result<(), String> {
        let name = task.spec().name.clone();
        if self.tasks.contains_key(&name) {
            return Err(name);
        }
        self.tasks.insert(name, Arc::new(task));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Task>> {
        self.tasks.get(name)
    }

    pub fn specs(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.values().map(|t| t.spec())
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }
}

fn param(name: &str, ty: ParamType) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        ty,
    }
}

fn rfc3339(epoch_s: f64, tz: FixedOffset) -> String {
    DateTime::from_timestamp(epoch_s.floor() as i64, 0)
        .map(|t| t.with_timezone(&tz).format("%Y-%m-%dT%H:%M:%S").to_string())
        .unwrap_or_else(|| epoch_s.to_string())
}

fn store_error(e: StoreError, tz: FixedOffset) -> TaskError {
    let mut err = TaskError::new(e.code(), e.to_string());
    if let StoreError::NoRecordingAtTime {
        nearest: Some(n),
        requested_epoch_s,
        ..
    } = &e
    {
        err.message = format!(
            "no recording at {}; nearest recording {} spans {} to {}",
            rfc3339(*requested_epoch_s, tz),
            n.recording_id,
            rfc3339(n.start_epoch_s, tz),
            rfc3339(n.end_epoch_s, tz)
        );
        err.hint = Some(serde_json::json!({
            "nearest_recording_id": n.recording_id,
            "nearest_start": rfc3339(n.start_epoch_s, tz),
            "nearest_end": rfc3339(n.end_epoch_s, tz),
        }));
    }
    err
}

pub struct LookupRecording(TaskSpec);

impl LookupRecording {
    pub fn new() -> Self {
        Self(TaskSpec {
            name: "lookup_recording".into(),
            description: "load the user's recording that contains the given instant".into(),
            params: vec![
                param("user_id", ParamType::UserId),
                param("modality", ParamType::Modality),
                param("at", ParamType::Instant),
            ],
            produces: ValueKind::TimeseriesRef,
        })
    }
}

impl Default for LookupRecording {
    fn default() -> Self {
        Self::new()
    }
}

impl Task for LookupRecording {
    fn spec(&self) -> &TaskSpec {
        &self.0
    }

    fn run(&self, args: &Args<'_>, ctx: &TaskContext<'_>) -> Result<DataValue, TaskError> {
        let user = args.str("user_id")?;
        let modality: Channel = args
            .str("modality")?
            .parse()
            .map_err(|_| TaskError::new("InvalidArgument", "unknown modality"))?;
        let at = args.instant("at", ctx.tz)?;
        let (series, meta) = ctx
            .store
            .lookup(user, modality, at)
            .map_err(|e| store_error(e, ctx.tz))?;
        Ok(DataValue::TimeseriesRef {
            meta,
            series: Arc::new(series),
        })
    }
}

fn recording_arg<'a>(
    args: &Args<'a>,
    channel: Channel,
) -> Result<
    (
        &'a crate::datastore::RecordingMeta,
        &'a Arc<pulse_core::TimeSeries>,
    ),
    TaskError,
> {
    match &args.entry("recording")?.value {
        DataValue::TimeseriesRef { meta, series } if series.channel() == channel => {
            Ok((meta, series))
        }
        DataValue::TimeseriesRef { .. } => Err(TaskError::new(
            "WrongChannel",
            format!("recording is not {}", channel.as_str()),
        )),
        _ => Err(TaskError::new(
            "InvalidArgument",
            "recording must be a TIMESERIES_REF",
        )),
    }
}

pub struct EstimateHrPpg(TaskSpec);

impl EstimateHrPpg {
    pub fn new() -> Self {
        Self(TaskSpec {
            name: "estimate_hr_ppg".into(),
            description: "windowed heart rate from a PPG recording; NaN windows are too noisy"
                .into(),
            params: vec![param("recording", ParamType::Ref(ValueKind::TimeseriesRef))],
            produces: ValueKind::HrSeries,
        })
    }
}

impl Default for EstimateHrPpg {
    fn default() -> Self {
        Self::new()
    }
}

impl Task for EstimateHrPpg {
    fn spec(&self) -> &TaskSpec {
        &self.0
    }

    fn run(&self, args: &Args<'_>, ctx: &TaskContext<'_>) -> Result<DataValue, TaskError> {
        let (meta, series) = recording_arg(args, Channel::Ppg)?;
        let analysis = analyze_ppg(series, &ctx.config.pipeline())
            .map_err(|e| TaskError::new(e.code(), e.to_string()))?;
        Ok(DataValue::HrSeries {
            hr: Arc::new(analysis.hr),
            recording_id: meta.recording_id.clone(),
        })
    }
}

pub struct ReferenceHrEcg(TaskSpec);

impl ReferenceHrEcg {
    pub fn new() -> Self {
        Self(TaskSpec {
            name: "reference_hr_ecg".into(),
            description: "reference heart rate from a Lead-II ECG recording".into(),
            params: vec![param("recording", ParamType::Ref(ValueKind::TimeseriesRef))],
            produces: ValueKind::HrSeries,
        })
    }
}

impl Default for ReferenceHrEcg {
    fn default() -> Self {
        Self::new()
    }
}

impl Task for ReferenceHrEcg {
    fn spec(&self) -> &TaskSpec {
        &self.0
    }

    fn run(&self, args: &Args<'_>, ctx: &TaskContext<'_>) -> Result<DataValue, TaskError> {
        let (meta, series) = recording_arg(args, Channel::EcgLeadII)?;
        let hr = reference_hr_with(series, &ctx.config.qrs, &ctx.config.window())
            .map_err(|e| TaskError::new(e.code(), e.to_string()))?;
        Ok(DataValue::HrSeries {
            hr: Arc::new(hr),
            recording_id: meta.recording_id.clone(),
        })
    }
}

pub struct SummarizeHr(TaskSpec);

impl SummarizeHr {
    pub fn new() -> Self {
        Self(TaskSpec {
            name: "summarize_hr".into(),
            description: "mean heart rate over the valid windows of an HR series (NaN if none)"
                .into(),
            params: vec![param("hr", ParamType::Ref(ValueKind::HrSeries))],
            produces: ValueKind::Scalar,
        })
    }
}

impl Default for SummarizeHr {
    fn default() -> Self {
        Self::new()
    }
}

impl Task for SummarizeHr {
    fn spec(&self) -> &TaskSpec {
        &self.0
    }

    fn run(&self, args: &Args<'_>, _ctx: &TaskContext<'_>) -> Result<DataValue, TaskError> {
        match &args.entry("hr")?.value {
            DataValue::HrSeries { hr, .. } => Ok(DataValue::Scalar {
                value: hr.mean_bpm(),
                unit: "BPM".into(),
            }),
            _ => Err(TaskError::new("InvalidArgument", "hr must be an HR_SERIES")),
        }
    }
}
