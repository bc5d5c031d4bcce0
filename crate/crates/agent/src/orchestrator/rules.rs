//! Deterministic rule-based stand-in for an LLM.
//!
//! Understands the three prompt kinds built in [`super::prompts`]. It is the
//! offline default backend and the source of recorded test transcripts.

use std::sync::LazyLock;

use regex::Regex;
use serde_json::{json, Value};

use super::prompts::{field, CRITIC_MARKER, PLANNER_MARKER, RESPONDER_MARKER};
use crate::llm::{LlmBackend, LlmError};

static USER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(p\d+)\b").expect("regex"));
static DATETIME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(\d{4}-\d{2}-\d{2})(?:[T ]|\s+at\s+)(\d{1,2}):(\d{2})").expect("regex")
});
static STRATEGY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Propose strategy (\d+) of (\d+)").expect("regex"));
static SCALAR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\w+): (\S+) BPM$").expect("regex"));
static SERIES: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(\w+): heart-rate series of (\S+), (\d+) windows .*, (\d+) valid, (\d+) NaN .*mean (\S+) BPM$")
        .expect("regex")
});

#[derive(Debug, Default, Clone, Copy)]
pub struct RuleResponder;

impl LlmBackend for RuleResponder {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let first = prompt.lines().next().unwrap_or_default().trim();
        match first {
            PLANNER_MARKER => Ok(plan_reply(prompt)),
            CRITIC_MARKER => Ok(critic_reply(prompt)),
            RESPONDER_MARKER => Ok(response_reply(prompt)),
            _ => Err(LlmError::Unavailable(
                "rule responder: unrecognised prompt".into(),
            )),
        }
    }
}

/// Earlier queries listed in a planner prompt, oldest first.
fn history(prompt: &str) -> Vec<&str> {
    prompt
        .lines()
        .skip_while(|l| !l.starts_with("Earlier queries"))
        .skip(1)
        .map_while(|l| l.strip_prefix("- "))
        .collect()
}

/// `nearest_start` from the latest failure hint, if any.
fn nearest_hint(prompt: &str) -> Option<String> {
    prompt
        .lines()
        .rev()
        .filter_map(|l| l.split_once(" Hint: ").map(|(_, h)| h))
        .filter_map(|h| serde_json::from_str::<Value>(h).ok())
        .filter_map(|v| v.get("nearest_start")?.as_str().map(str::to_string))
        .next()
}

fn find_user(text: &str) -> Option<String> {
    USER.captures(text).map(|c| c[1].to_lowercase())
}

fn find_datetime(text: &str) -> Option<String> {
    DATETIME
        .captures(text)
        .map(|c| format!("{}T{:0>2}:{}", &c[1], &c[2], &c[3]))
}

fn plan_reply(prompt: &str) -> String {
    let query = field(prompt, "Query:").unwrap_or_default();
    let earlier = history(prompt);
    let recall = |f: fn(&str) -> Option<String>| {
        f(query).or_else(|| earlier.iter().rev().find_map(|h| f(h)))
    };
    let Some(user) = recall(find_user) else {
        return json!({"clarify": "Which user's recordings should I analyse? Please give a user id such as p01."})
            .to_string();
    };
    let Some(at) = nearest_hint(prompt).or_else(|| recall(find_datetime)) else {
        return json!({"clarify": format!("At what date and time (YYYY-MM-DD HH:MM) should I look at {user}'s recordings?")})
            .to_string();
    };
    let lower = query.to_lowercase();
    let ecg = lower.contains("ecg");
    let ppg = !ecg || lower.contains("ppg");
    let candidate = STRATEGY
        .captures(prompt)
        .and_then(|c| c[1].parse::<usize>().ok())
        .unwrap_or(1);

    let mut steps = Vec::new();
    let mut sources = Vec::new();
    if ppg {
        sources.push(("PPG", "ppg", "estimate_hr_ppg"));
    }
    if ecg {
        sources.push(("ECG_LEAD_II", "ecg", "reference_hr_ecg"));
    }
    for (modality, tag, task) in sources {
        steps.push(
            json!({"task": "lookup_recording", "output": format!("{tag}_rec"),
            "args": {"user_id": user, "modality": modality, "at": at}}),
        );
        steps.push(json!({"task": task, "output": format!("{tag}_hr"),
            "args": {"recording": {"ref": format!("{tag}_rec")}}}));
        // Strategy 1 summarises; the others report the series as is.
        if candidate == 1 {
            steps.push(
                json!({"task": "summarize_hr", "output": format!("{tag}_mean"),
                "args": {"hr": {"ref": format!("{tag}_hr")}}}),
            );
        }
    }
    let rationale = if candidate == 1 {
        "look up the recording, estimate windowed heart rate, then average the valid windows"
    } else {
        "look up the recording and report the windowed heart-rate series directly"
    };
    json!({"rationale": rationale, "steps": steps}).to_string()
}

fn critic_reply(prompt: &str) -> String {
    let scores: Vec<u32> = prompt
        .lines()
        .filter_map(|l| l.strip_prefix("Strategy "))
        .map(|l| if l.contains("\"summarize_hr\"") { 8 } else { 6 })
        .collect();
    json!({ "scores": scores }).to_string()
}

fn response_reply(prompt: &str) -> String {
    let query = field(prompt, "Query:").unwrap_or_default();
    let results: Vec<&str> = prompt
        .lines()
        .skip_while(|l| *l != "Results:")
        .skip(1)
        .filter_map(|l| l.strip_prefix("- "))
        .collect();
    let mut sentences = Vec::new();
    for r in &results {
        if let Some(c) = SCALAR.captures(r) {
            let label = if c[1].starts_with("ecg") {
                "reference (ECG)"
            } else {
                "estimated"
            };
            sentences.push(if c[2].eq_ignore_ascii_case("nan") {
                format!("The {label} heart rate is NaN: the signal was too noisy to analyse.")
            } else {
                format!("The {label} mean heart rate is {} BPM.", &c[2])
            });
        }
    }
    for r in &results {
        if let Some(c) = SERIES.captures(r) {
            let windows = &c[3];
            let valid = &c[4];
            if sentences.is_empty() {
                sentences.push(if c[6].eq_ignore_ascii_case("nan") {
                    format!(
                        "Heart rate for {} is NaN: every window was too noisy to analyse.",
                        &c[2]
                    )
                } else {
                    format!("Heart rate for {} averaged {} BPM.", &c[2], &c[6])
                });
            }
            sentences.push(format!(
                "{valid} of {windows} windows passed the quality checks."
            ));
        }
    }
    if sentences.is_empty() {
        return format!("I could not find a heart-rate result for: {query}");
    }
    sentences.join(" ")
}
