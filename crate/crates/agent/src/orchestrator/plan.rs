//! Plan wire format, parsing and validation.
//!
//! The planner replies with one JSON object, either a plan
//!
//! ```json
//! {"rationale": "...",
//!  "steps": [{"task": "lookup_recording", "output": "rec",
//!             "args": {"user_id": "p01", "modality": "PPG", "at": "2019-07-25T14:00"}},
//!            {"task": "estimate_hr_ppg", "output": "hr", "args": {"recording": {"ref": "rec"}}}]}
//! ```
//!
//! or a clarification request `{"clarify": "Which user?"}`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::datapipe::ValueKind;
use super::registry::{ParamType, Registry};

/// JSON schema of a planner reply, quoted in the planner prompt.
pub const PLAN_SCHEMA: &str = r#"{"type":"object","oneOf":[{"required":["steps"],"properties":{"rationale":{"type":"string"},"steps":{"type":"array","items":{"type":"object","required":["task","output","args"],"properties":{"task":{"type":"string"},"output":{"type":"string"},"args":{"type":"object"}}}}}},{"required":["clarify"],"properties":{"clarify":{"type":"string"}}}]}"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Arg {
    Ref {
        #[serde(rename = "ref")]
        key: String,
    },
    Literal(Value),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub task: String,
    pub output: String,
    #[serde(default)]
    pub args: BTreeMap<String, Arg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    #[serde(default)]
    pub rationale: String,
    pub steps: Vec<Step>,
}

/// A parsed planner reply.
#[derive(Debug, Clone, PartialEq)]
pub enum PlannerReply {
    Plan(Plan),
    Clarify(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("no JSON object in reply")]
    NoJson,
    #[error("malformed plan: {0}")]
    Malformed(String),
    #[error("step {step}: unknown task {task}")]
    UnknownTask { step: usize, task: String },
    #[error("step {step}: missing argument {param}")]
    MissingArgument { step: usize, param: String },
    #[error("step {step}: unexpected argument {param}")]
    UnexpectedArgument { step: usize, param: String },
    #[error("step {step}: argument {param} has the wrong type")]
    WrongType { step: usize, param: String },
    #[error("step {step}: {key} is not produced by an earlier step")]
    UnboundReference { step: usize, key: String },
    #[error("step {step}: output {output} is already defined")]
    DuplicateOutput { step: usize, output: String },
    #[error("plan has no steps")]
    Empty,
}

/// The outermost `{...}` of `text`, tolerating prose or code fences
/// around it.
fn json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

pub fn parse_reply(text: &str) -> Result<PlannerReply, PlanError> {
    let body = json_object(text).ok_or(PlanError::NoJson)?;
    let value: Value =
        serde_json::from_str(body).map_err(|e| PlanError::Malformed(e.to_string()))?;
    if let Some(q) = value.get("clarify").and_then(Value::as_str) {
        return Ok(PlannerReply::Clarify(q.to_string()));
    }
    let plan: Plan =
        serde_json::from_value(value).map_err(|e| PlanError::Malformed(e.to_string()))?;
    Ok(PlannerReply::Plan(plan))
}

impl Plan {
    /// Checks task names, argument presence and types, and that every
    /// reference names the output of an earlier step of the right kind.
    pub fn validate(&self, registry: &Registry) -> Result<(), PlanError> {
        if self.steps.is_empty() {
            return Err(PlanError::Empty);
        }
        let mut produced: HashMap<&str, ValueKind> = HashMap::new();
        for (i, step) in self.steps.iter().enumerate() {
            let task = registry
                .get(&step.task)
                .ok_or_else(|| PlanError::UnknownTask {
                    step: i,
                    task: step.task.clone(),
                })?;
            let spec = task.spec();
            for p in &spec.params {
                if !step.args.contains_key(&p.name) {
                    return Err(PlanError::MissingArgument {
                        step: i,
                        param: p.name.clone(),
                    });
                }
            }
            for (name, arg) in &step.args {
                let p = spec
                    .param(name)
                    .ok_or_else(|| PlanError::UnexpectedArgument {
                        step: i,
                        param: name.clone(),
                    })?;
                let ok = match (arg, p.ty) {
                    (Arg::Ref { key }, ParamType::Ref(kind)) => match produced.get(key.as_str()) {
                        Some(k) => *k == kind,
                        None => {
                            return Err(PlanError::UnboundReference {
                                step: i,
                                key: key.clone(),
                            })
                        }
                    },
                    (Arg::Literal(v), ty) => ty.accepts_literal(v),
                    (Arg::Ref { .. }, _) => false,
                };
                if !ok {
                    return Err(PlanError::WrongType {
                        step: i,
                        param: name.clone(),
                    });
                }
            }
            if produced
                .insert(step.output.as_str(), spec.produces)
                .is_some()
            {
                return Err(PlanError::DuplicateOutput {
                    step: i,
                    output: step.output.clone(),
                });
            }
        }
        Ok(())
    }

    /// Task names in order, e.g. `lookup_recording -> estimate_hr_ppg`.
    pub fn outline(&self) -> String {
        self.steps
            .iter()
            .map(|s| s.task.as_str())
            .collect::<Vec<_>>()
            .join(" -> ")
    }
}
