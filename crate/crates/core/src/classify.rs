//! Feasibility classification of tasks and parsing of verdict replies.

use std::sync::LazyLock;

use regex::Regex;

use crate::domain::{Feasibility, FeasibilityVerdict, ParseStatus, ProviderParams, Task, TaskId};
use crate::prompt::{render_data, PromptSet, TemplateError};
use crate::providers::{ChatProvider, ChatRequest, ProviderError};

static MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)verdict\s*:\s*\**\s*(in)?feasible\b").expect("valid marker pattern"));

pub fn classification_request(
    task: &Task,
    prompts: &PromptSet,
    params: &ProviderParams,
) -> Result<ChatRequest, TemplateError> {
    let data = render_data(&task.data);
    let user_text = prompts
        .classify
        .render(&[("instructions", &task.instructions.text), ("data", &data)])?;
    Ok(ChatRequest::new(None, user_text, params.clone()))
}

/// Asks the model to solve or decline `task`. Provider failures are returned
/// to the caller; unreadable replies become `Failed` verdicts.
pub fn classify_task(
    task: &Task,
    provider: &dyn ChatProvider,
    prompts: &PromptSet,
    params: &ProviderParams,
) -> Result<FeasibilityVerdict, ProviderError> {
    let request = classification_request(task, prompts, params)
        .map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
    let reply = provider.complete(&request)?;
    Ok(parse_verdict(task.id.clone(), &reply.text))
}

/// `Clean` when the first non-empty line is exactly the marker. Otherwise one
/// recovery pass looks for the marker anywhere, ignoring case; all matches
/// must agree.
pub fn parse_verdict(task_id: TaskId, raw: &str) -> FeasibilityVerdict {
    let verdict = |label, body: &str, parse_status| FeasibilityVerdict {
        task_id: task_id.clone(),
        label,
        body: body.trim().to_string(),
        raw_response: raw.to_string(),
        parse_status,
    };

    let mut lines = raw.lines().skip_while(|l| l.trim().is_empty());
    if let Some(first) = lines.next() {
        let label = match first.trim() {
            "VERDICT: FEASIBLE" => Some(Feasibility::Feasible),
            "VERDICT: INFEASIBLE" => Some(Feasibility::Infeasible),
            _ => None,
        };
        if let Some(label) = label {
            let body = lines.collect::<Vec<_>>().join("\n");
            return verdict(Some(label), &body, ParseStatus::Clean);
        }
    }

    let mut found = None;
    for caps in MARKER.captures_iter(raw) {
        let label = if caps.get(1).is_some() {
            Feasibility::Infeasible
        } else {
            Feasibility::Feasible
        };
        if found.is_some_and(|f| f != label) {
            return verdict(None, "", ParseStatus::Failed);
        }
        found = Some(label);
    }
    match found {
        Some(label) => {
            let body = MARKER.replace_all(raw, "");
            verdict(Some(label), &body, ParseStatus::Recovered)
        }
        None => verdict(None, "", ParseStatus::Failed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::providers::ScriptedProvider;
    use serde_json::json;

    fn parse(raw: &str) -> FeasibilityVerdict {
        parse_verdict("t".into(), raw)
    }

    #[test]
    fn clean_marker_line() {
        let v = parse("VERDICT: FEASIBLE\nAnswer: 42");
        assert_eq!(v.label, Some(Feasibility::Feasible));
        assert_eq!(v.body, "Answer: 42");
        assert_eq!(v.parse_status, ParseStatus::Clean);
        let v = parse("\n  VERDICT: INFEASIBLE  \nNeeds lab data.");
        assert_eq!(v.label, Some(Feasibility::Infeasible));
        assert_eq!(v.parse_status, ParseStatus::Clean);
    }

    #[test]
    fn marker_elsewhere_is_recovered() {
        let v = parse("Hmm, this lies beyond my capabilities. VERDICT: INFEASIBLE");
        assert_eq!(v.label, Some(Feasibility::Infeasible));
        assert_eq!(v.parse_status, ParseStatus::Recovered);
        assert_eq!(v.body, "Hmm, this lies beyond my capabilities.");
        let v = parse("**Verdict:** feasible\nThe answer is 3.");
        assert_eq!(v.label, Some(Feasibility::Feasible));
        assert_eq!(v.parse_status, ParseStatus::Recovered);
    }

    #[test]
    fn missing_or_conflicting_marker_fails() {
        for raw in ["The answer is 42.", "", "verdict: feasible ... VERDICT: INFEASIBLE", "VERDICT: FEASIBLENESS"] {
            let v = parse(raw);
            assert_eq!(v.parse_status, ParseStatus::Failed, "{raw:?}");
            assert_eq!(v.label, None);
            assert_eq!(v.usable_label(), None);
        }
    }

    #[test]
    fn classification_uses_the_given_params() {
        let task = Task::original("t".into(), Domain::Medicine, "Dose?", json!({"kg": 70})).unwrap();
        let provider = ScriptedProvider::new("c", vec!["VERDICT: FEASIBLE\n5 mg".into()]);
        let prompts = PromptSet::defaults();
        let params = ProviderParams::classification();
        let req = classification_request(&task, &prompts, &params).unwrap();
        assert_eq!(req.params.temperature, 0.0);
        assert!(req.user_text.contains("{\"kg\":70}"));
        let v = classify_task(&task, &provider, &prompts, &params).unwrap();
        assert_eq!(v.body, "5 mg");
    }
}
