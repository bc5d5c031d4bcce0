//! Prompt templates. Each begins with a versioned marker line so backends
//! and transcripts can tell the prompt kinds apart.

use std::fmt::Write as _;

use super::plan::{Plan, PLAN_SCHEMA};
use super::registry::Registry;

pub const PLANNER_MARKER: &str = "[pulse-agent planner v1]";
pub const CRITIC_MARKER: &str = "[pulse-agent critic v1]";
pub const RESPONDER_MARKER: &str = "[pulse-agent responder v1]";

/// Why an earlier attempt failed, as shown to the planner.
#[derive(Debug, Clone, PartialEq)]
pub struct Feedback {
    pub attempt: usize,
    pub summary: String,
    /// Compact JSON hint, if the failure carried one.
    pub hint: Option<String>,
}

pub fn planner(
    query: &str,
    history: &[String],
    registry: &Registry,
    feedback: &[Feedback],
    candidate: usize,
    of: usize,
) -> String {
    let mut p = String::new();
    let _ = writeln!(p, "{PLANNER_MARKER}");
    p.push_str("You plan heart-rate analyses over a user's wearable recordings.\n");
    p.push_str("Decompose the query into steps that use only these tasks:\n");
    for spec in registry.specs() {
        let _ = writeln!(p, "- {}", spec.signature());
    }
    let _ = writeln!(
        p,
        "Reply with one JSON object matching this schema:\n{PLAN_SCHEMA}"
    );
    p.push_str(
        "Every step names its output; a later step refers to it as {\"ref\": \"<output>\"}.\n",
    );
    p.push_str("If the query lacks something you need, such as which user, reply {\"clarify\": \"<question>\"}.\n");
    if !history.is_empty() {
        p.push_str("Earlier queries in this conversation:\n");
        for h in history {
            let _ = writeln!(p, "- {h}");
        }
    }
    let _ = writeln!(p, "Query: {query}");
    if !feedback.is_empty() {
        p.push_str("Earlier attempts failed:\n");
        for f in feedback {
            let _ = write!(p, "- attempt {}: {}", f.attempt + 1, f.summary);
            if let Some(h) = &f.hint {
                let _ = write!(p, " Hint: {h}");
            }
            p.push('\n');
        }
        p.push_str("Revise the plan to avoid these failures.\n");
    }
    let _ = writeln!(
        p,
        "Propose strategy {} of {}, distinct from the others.",
        candidate + 1,
        of
    );
    p
}

pub fn critic(query: &str, candidates: &[(usize, &Plan)]) -> String {
    let mut p = String::new();
    let _ = writeln!(p, "{CRITIC_MARKER}");
    let _ = writeln!(p, "Query: {query}");
    p.push_str("Candidate strategies:\n");
    for (i, plan) in candidates {
        let json = serde_json::to_string(plan).expect("plan serializes");
        let _ = writeln!(p, "Strategy {}: {json}", i + 1);
    }
    p.push_str(
        "Weigh each strategy's advantages and limitations for answering the query, \
         then score it from 0 to 10.\n",
    );
    p.push_str("Reply with JSON only: {\"scores\": [<one score per strategy, in order>]}\n");
    p
}

pub fn responder(query: &str, results: &[String]) -> String {
    let mut p = String::new();
    let _ = writeln!(p, "{RESPONDER_MARKER}");
    p.push_str("Answer the query from the analysis results below. ");
    p.push_str("Quote each heart-rate value exactly as given, wrapped as <hr>value</hr>. ");
    p.push_str("NaN means the signal was too noisy to analyse; report it as <hr>NaN</hr>.\n");
    let _ = writeln!(p, "Query: {query}");
    p.push_str("Results:\n");
    for r in results {
        let _ = writeln!(p, "- {r}");
    }
    p
}

/// The text after `label` on the first line that starts with it.
pub fn field<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(label))
        .map(str::trim)
}
