//! Task planning, execution and response generation around an LLM backend.
//!
//! A session turn runs plan -> execute -> respond. Planning asks the backend
//! for several candidate plans, has it score them, and takes the best one
//! that validates. A failed step sends its error back to the planner; after
//! `max_replans` such rounds the turn ends in a clarification request.

pub mod datapipe;
pub mod plan;
pub mod prompts;
pub mod registry;
pub mod rules;
pub mod tags;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use crate::config::{AgentConfig, BackendKind, LlmConfig, LLM_KEY_ENV};
use crate::datastore::Store;
use crate::llm::{LlmBackend, LlmError, RemoteBackend, ScriptedBackend};
use datapipe::{DataPipe, DataValue, Provenance};
use plan::{parse_reply, Arg, Plan, PlannerReply};
use prompts::Feedback;
use registry::{ArgValue, Args, Registry, TaskContext, TaskError};
use tags::{ensure_tagged, extract_tagged_values, format_hr, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskResult {
    pub step: usize,
    pub task: String,
    pub status: TaskStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_key: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<TaskError>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanningError {
    #[error("no candidate plan validated: {}", reasons.join("; "))]
    PlanningFailed { reasons: Vec<String> },
    #[error("clarification needed: {0}")]
    NeedsClarification(String),
    #[error(transparent)]
    Backend(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ResponseError {
    #[error("no analysis result to report")]
    NoResults,
    #[error("backend reply mentions none of the result values")]
    ResponseMalformed,
    #[error(transparent)]
    Backend(#[from] LlmError),
}

impl ResponseError {
    pub fn code(&self) -> &'static str {
        match self {
            ResponseError::NoResults => "NoResults",
            ResponseError::ResponseMalformed => "ResponseMalformed",
            ResponseError::Backend(e) => e.code(),
        }
    }
}

/// Scores and choice made during one planning call.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanTrace {
    pub candidates: usize,
    pub scores: Vec<f64>,
    /// Index of the chosen candidate.
    pub chosen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractedValue {
    pub name: String,
    /// `None` encodes NaN (too noisy to analyse).
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HrPoint {
    pub window_start_s: f64,
    pub bpm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentResponse {
    pub session_id: String,
    pub text: String,
    pub extracted_values: Vec<ExtractedValue>,
    /// Per-window HR of the first HR series computed, for plotting.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hr_series: Option<Vec<HrPoint>>,
    /// Recordings the reported values derive from.
    pub recording_ids: Vec<String>,
    pub plan: Plan,
    pub replans: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttemptSummary {
    pub attempt: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClarificationRequest {
    pub session_id: String,
    pub message: String,
    pub attempts: Vec<AttemptSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionFailure {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionOutcome {
    Response(AgentResponse),
    Clarification(ClarificationRequest),
    Failed(SessionFailure),
}

/// One value the response must report.
struct Reported {
    name: String,
    text: String,
    value: f64,
}

pub struct Orchestrator {
    pub registry: Registry,
    pub store: Store,
    pub config: AgentConfig,
    llm: Arc<dyn LlmBackend>,
}

impl Orchestrator {
    pub fn new(
        registry: Registry,
        store: Store,
        config: AgentConfig,
        llm: Arc<dyn LlmBackend>,
    ) -> Self {
        Self {
            registry,
            store,
            config,
            llm,
        }
    }

    pub fn llm(&self) -> &Arc<dyn LlmBackend> {
        &self.llm
    }

    /// Tree-of-thought planning: `k` candidates, one scoring round, then
    /// the best-scored candidate that validates.
    pub fn plan(
        &self,
        query: &str,
        history: &[String],
        feedback: &[Feedback],
    ) -> Result<(Plan, PlanTrace), PlanningError> {
        let k = self.config.orchestrator.candidates.max(1);
        let mut plans: Vec<(usize, Plan)> = Vec::new();
        let mut clarifications = Vec::new();
        let mut reasons = Vec::new();
        for i in 0..k {
            let reply = self.llm.complete(&prompts::planner(
                query,
                history,
                &self.registry,
                feedback,
                i,
                k,
            ))?;
            match parse_reply(&reply) {
                Ok(PlannerReply::Plan(p)) => plans.push((i, p)),
                Ok(PlannerReply::Clarify(q)) => clarifications.push(q),
                Err(e) => reasons.push(format!("candidate {}: {e}", i + 1)),
            }
        }
        if plans.is_empty() {
            if let Some(q) = clarifications.into_iter().next() {
                return Err(PlanningError::NeedsClarification(q));
            }
            return Err(PlanningError::PlanningFailed { reasons });
        }
        let listed: Vec<(usize, &Plan)> = plans.iter().map(|(i, p)| (*i, p)).collect();
        let verdict = self.llm.complete(&prompts::critic(query, &listed))?;
        let scores = parse_scores(&verdict, plans.len());
        let mut order: Vec<usize> = (0..plans.len()).collect();
        order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
        for idx in order {
            let (i, plan) = &plans[idx];
            match plan.validate(&self.registry) {
                Ok(()) => {
                    return Ok((
                        plan.clone(),
                        PlanTrace {
                            candidates: k,
                            scores,
                            chosen: *i,
                        },
                    ))
                }
                Err(e) => reasons.push(format!("candidate {}: {e}", i + 1)),
            }
        }
        Err(PlanningError::PlanningFailed { reasons })
    }

    /// Runs the steps in order, stopping at the first failure.
    pub fn execute(&self, plan: &Plan, attempt: usize, pipe: &mut DataPipe) -> Vec<TaskResult> {
        let tz = match self.config.tz() {
            Ok(tz) => tz,
            Err(e) => {
                return plan
                    .steps
                    .first()
                    .map(|s| TaskResult {
                        step: 0,
                        task: s.task.clone(),
                        status: TaskStatus::Failed,
                        output_key: None,
                        error: Some(TaskError::new("ConfigError", e.to_string())),
                    })
                    .into_iter()
                    .collect()
            }
        };
        let ctx = TaskContext {
            store: &self.store,
            config: &self.config,
            tz,
        };
        let mut keys: BTreeMap<&str, String> = BTreeMap::new();
        let mut results = Vec::with_capacity(plan.steps.len());
        for (i, step) in plan.steps.iter().enumerate() {
            let outcome = self.run_step(step, i, attempt, &keys, pipe, &ctx);
            match outcome {
                Ok(key) => {
                    keys.insert(step.output.as_str(), key.clone());
                    results.push(TaskResult {
                        step: i,
                        task: step.task.clone(),
                        status: TaskStatus::Ok,
                        output_key: Some(key),
                        error: None,
                    });
                }
                Err(error) => {
                    results.push(TaskResult {
                        step: i,
                        task: step.task.clone(),
                        status: TaskStatus::Failed,
                        output_key: None,
                        error: Some(error),
                    });
                    break;
                }
            }
        }
        results
    }

    fn run_step(
        &self,
        step: &plan::Step,
        index: usize,
        attempt: usize,
        keys: &BTreeMap<&str, String>,
        pipe: &mut DataPipe,
        ctx: &TaskContext<'_>,
    ) -> Result<String, TaskError> {
        let task = self
            .registry
            .get(&step.task)
            .ok_or_else(|| TaskError::new("UnknownTask", step.task.clone()))?;
        let mut values = BTreeMap::new();
        let mut recording_ids = Vec::new();
        for (name, arg) in &step.args {
            let v = match arg {
                Arg::Literal(v) => ArgValue::Literal(v),
                Arg::Ref { key } => {
                    let entry = keys
                        .get(key.as_str())
                        .and_then(|k| pipe.get(k))
                        .ok_or_else(|| TaskError::new("UnboundReference", key.clone()))?;
                    recording_ids.extend(entry.meta.recording_ids.iter().cloned());
                    ArgValue::Entry(entry)
                }
            };
            values.insert(name.clone(), v);
        }
        let args = Args { values };
        let value = task.run(&args, ctx)?;
        if let DataValue::TimeseriesRef { meta, .. } = &value {
            recording_ids.push(meta.recording_id.clone());
        }
        recording_ids.dedup();
        let inputs = args.input_keys();
        let key = DataPipe::key_for(attempt, index, &step.output);
        pipe.put(
            key.clone(),
            value,
            Provenance {
                attempt,
                step: index,
                task: step.task.clone(),
                inputs,
                recording_ids,
                created_unix_ms: 0,
            },
        )
        .map_err(|e| TaskError::new("KeyTaken", e.to_string()))?;
        Ok(key)
    }

    /// Asks the backend to phrase the results, then makes sure every
    /// reported HR value appears tagged.
    pub fn generate_response(
        &self,
        session_id: &str,
        query: &str,
        plan: &Plan,
        results: &[TaskResult],
        pipe: &DataPipe,
        replans: usize,
    ) -> Result<AgentResponse, ResponseError> {
        let ok: Vec<&TaskResult> = results
            .iter()
            .filter(|r| r.status == TaskStatus::Ok)
            .collect();
        if ok.is_empty() {
            return Err(ResponseError::NoResults);
        }
        let entries: Vec<(&str, &datapipe::DataPipeEntry)> = ok
            .iter()
            .filter_map(|r| {
                let key = r.output_key.as_deref()?;
                Some((plan.steps[r.step].output.as_str(), pipe.get(key)?))
            })
            .collect();
        let summarized: Vec<&str> = entries
            .iter()
            .flat_map(|(_, e)| e.meta.inputs.iter().map(String::as_str))
            .collect();

        let mut lines = Vec::new();
        let mut reported: Vec<Reported> = Vec::new();
        let mut hr_series = None;
        let mut recording_ids: Vec<String> = Vec::new();
        for (name, entry) in &entries {
            recording_ids.extend(entry.meta.recording_ids.iter().cloned());
            match &entry.value {
                DataValue::TimeseriesRef { meta, series } => lines.push(format!(
                    "{name}: {} recording {} of user {}, {:.0} s analysed",
                    meta.modality,
                    meta.recording_id,
                    meta.user_id,
                    series.duration_s()
                )),
                DataValue::HrSeries { hr, recording_id } => {
                    let text = format_hr(hr.mean_bpm());
                    lines.push(format!(
                        "{name}: heart-rate series of {recording_id}, {} windows of {:.0} s, {} valid, {} NaN (too noisy), mean {text} BPM",
                        hr.len(),
                        hr.window_len_s,
                        hr.valid_count(),
                        hr.nan_count()
                    ));
                    if !summarized.contains(&entry.key.as_str()) {
                        reported.push(Reported {
                            name: name.to_string(),
                            text,
                            value: hr.mean_bpm(),
                        });
                    }
                    if hr_series.is_none() {
                        hr_series = Some(
                            hr.window_start_s
                                .iter()
                                .zip(&hr.bpm)
                                .map(|(t, b)| HrPoint {
                                    window_start_s: *t,
                                    bpm: (!b.is_nan()).then_some(*b),
                                })
                                .collect(),
                        );
                    }
                }
                DataValue::Scalar { value, unit } => {
                    let text = format_hr(*value);
                    lines.push(format!("{name}: {text} {unit}"));
                    reported.push(Reported {
                        name: name.to_string(),
                        text,
                        value: *value,
                    });
                }
                DataValue::Text(t) => lines.push(format!("{name}: {t}")),
                DataValue::Error { code, message } => {
                    lines.push(format!("{name}: error {code}: {message}"))
                }
            }
        }
        recording_ids.sort();
        recording_ids.dedup();

        let reply = self.llm.complete(&prompts::responder(query, &lines))?;
        let text = tag_values(&reply, &reported)?;
        let extracted = extract_tagged_values(&text, "hr");
        let mut unused: Vec<&Reported> = reported.iter().collect();
        let extracted_values = extracted
            .values
            .iter()
            .map(|v| {
                let shown = format_hr(*v);
                let name = unused
                    .iter()
                    .position(|r| r.text == shown)
                    .map(|i| unused.remove(i).name.clone())
                    .unwrap_or_else(|| "hr".to_string());
                ExtractedValue {
                    name,
                    value: (!v.is_nan()).then_some(*v),
                }
            })
            .collect();
        Ok(AgentResponse {
            session_id: session_id.to_string(),
            text,
            extracted_values,
            hr_series,
            recording_ids,
            plan: plan.clone(),
            replans,
        })
    }

    /// One query turn: plan, execute, replan on failure, respond.
    pub fn run_session(
        &self,
        session_id: &str,
        query: &str,
        history: &[String],
        pipe: &mut DataPipe,
    ) -> SessionOutcome {
        let max_replans = self.config.orchestrator.max_replans;
        let mut feedback: Vec<Feedback> = Vec::new();
        let mut attempts = Vec::new();
        for attempt in 0..=max_replans {
            let plan = match self.plan(query, history, &feedback) {
                Ok((plan, _)) => plan,
                Err(PlanningError::NeedsClarification(q)) => {
                    return SessionOutcome::Clarification(ClarificationRequest {
                        session_id: session_id.to_string(),
                        message: q,
                        attempts,
                    })
                }
                Err(PlanningError::Backend(e)) => return backend_failure(&e),
                Err(e @ PlanningError::PlanningFailed { .. }) => {
                    let summary = e.to_string();
                    attempts.push(AttemptSummary {
                        attempt,
                        plan: None,
                        error: summary.clone(),
                    });
                    feedback.push(Feedback {
                        attempt,
                        summary,
                        hint: None,
                    });
                    continue;
                }
            };
            let results = self.execute(&plan, pipe.begin_attempt(), pipe);
            match results.iter().find(|r| r.status == TaskStatus::Failed) {
                None if !results.is_empty() => {
                    return match self
                        .generate_response(session_id, query, &plan, &results, pipe, attempt)
                    {
                        Ok(r) => SessionOutcome::Response(r),
                        Err(ResponseError::Backend(e)) => backend_failure(&e),
                        Err(e) => SessionOutcome::Failed(SessionFailure {
                            code: e.code().into(),
                            message: e.to_string(),
                        }),
                    };
                }
                None => {
                    attempts.push(AttemptSummary {
                        attempt,
                        plan: Some(plan.outline()),
                        error: "plan has no steps".into(),
                    });
                    feedback.push(Feedback {
                        attempt,
                        summary: "the plan had no steps".into(),
                        hint: None,
                    });
                }
                Some(failed) => {
                    let err = failed
                        .error
                        .clone()
                        .unwrap_or_else(|| TaskError::new("Unknown", ""));
                    let summary = format!(
                        "step {} ({}) failed with {}: {}",
                        failed.step + 1,
                        failed.task,
                        err.code,
                        err.message
                    );
                    attempts.push(AttemptSummary {
                        attempt,
                        plan: Some(plan.outline()),
                        error: summary.clone(),
                    });
                    feedback.push(Feedback {
                        attempt,
                        summary,
                        hint: err.hint.as_ref().map(Value::to_string),
                    });
                }
            }
        }
        let last = attempts.last().map(|a| a.error.clone()).unwrap_or_default();
        SessionOutcome::Clarification(ClarificationRequest {
            session_id: session_id.to_string(),
            message: format!(
                "I could not complete this after {} attempts. Last problem: {last}. \
                 Could you check the user id and the date and time?",
                attempts.len()
            ),
            attempts,
        })
    }
}

/// Backend selected by `config`: the remote client, or the mock (fixture
/// transcript, optionally falling back to [`rules::RuleResponder`]).
pub fn build_backend(config: &LlmConfig) -> Result<Arc<dyn LlmBackend>, LlmError> {
    match config.backend {
        BackendKind::Remote => {
            let key = std::env::var(LLM_KEY_ENV).ok();
            let timeout = Duration::from_secs_f64(config.timeout_s.max(0.001));
            Ok(Arc::new(RemoteBackend::new(
                &config.endpoint,
                &config.model,
                key,
                timeout,
            )?))
        }
        BackendKind::Mock => match &config.fixtures {
            Some(path) => {
                let scripted = ScriptedBackend::load(path).map_err(|e| {
                    LlmError::Unavailable(format!("fixtures {}: {e}", path.display()))
                })?;
                Ok(if config.mock_fallback {
                    Arc::new(scripted.with_fallback(rules::RuleResponder))
                } else {
                    Arc::new(scripted)
                })
            }
            None => Ok(Arc::new(rules::RuleResponder)),
        },
    }
}

fn backend_failure(e: &LlmError) -> SessionOutcome {
    SessionOutcome::Failed(SessionFailure {
        code: e.code().into(),
        message: e.to_string(),
    })
}

/// `{"scores": [...]}` with exactly `n` numbers; anything else scores all
/// candidates 0, which keeps them in proposal order.
fn parse_scores(text: &str, n: usize) -> Vec<f64> {
    let parsed = text
        .find('{')
        .zip(text.rfind('}'))
        .and_then(|(a, b)| serde_json::from_str::<Value>(&text[a..=b]).ok())
        .and_then(|v| {
            v.get("scores")?
                .as_array()?
                .iter()
                .map(Value::as_f64)
                .collect::<Option<Vec<f64>>>()
        });
    match parsed {
        Some(s) if s.len() == n && s.iter().all(|x| x.is_finite()) => s,
        _ => vec![0.0; n],
    }
}

/// Tags every reported value in `reply`; values the reply omits are
/// appended. Fails when the reply mentions none of them.
fn tag_values(reply: &str, reported: &[Reported]) -> Result<String, ResponseError> {
    if reported.is_empty() {
        return Ok(reply.to_string());
    }
    let mut text = reply.to_string();
    let mut missing = Vec::new();
    for r in reported {
        match ensure_tagged(&text, &r.text) {
            Some(t) => text = t,
            None => missing.push(r),
        }
    }
    if missing.len() == reported.len() {
        return Err(ResponseError::ResponseMalformed);
    }
    for r in missing {
        let note = if r.value.is_nan() {
            " (too noisy to analyse)"
        } else {
            " BPM"
        };
        text.push_str(&format!("\n{}: {}{note}", r.name, tag(&r.text)));
    }
    Ok(text)
}
