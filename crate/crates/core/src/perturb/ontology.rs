//! Ontology replacement: a model swaps domain terms for same-domain
//! equivalents in the instructions and the data's text values.

use serde_json::Value;

use super::lexer::scan_text;
use super::PerturbError;
use crate::domain::{DataPath, ProviderParams, StringEdit, Substitution, Task};
use crate::prompt::{extract_json_object, render_data, PromptSet};
use crate::providers::{ChatProvider, ChatRequest};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct OntologyRewrite {
    pub instructions: String,
    pub data: Value,
    pub substitutions: Vec<Substitution>,
    pub string_edits: Vec<StringEdit>,
}

pub fn ontology_request(
    task: &Task,
    prompts: &PromptSet,
    params: &ProviderParams,
    seed: u64,
) -> Result<ChatRequest, PerturbError> {
    let data = render_data(&task.data);
    let user_text = prompts.ontology.render(&[
        ("domain", task.domain.title()),
        ("instructions", &task.instructions.text),
        ("data", &data),
    ])?;
    Ok(ChatRequest::new(None, user_text, params.with_seed(seed)))
}

/// Rewrites `task` through `provider`. A reply that hands the task back
/// unchanged is retried once with a derived seed before giving up.
pub fn ontology_replace(
    task: &Task,
    provider: &dyn ChatProvider,
    prompts: &PromptSet,
    params: &ProviderParams,
    seed: u64,
) -> Result<OntologyRewrite, PerturbError> {
    if !task.is_original() {
        return Err(PerturbError::NotOriginal(task.id.clone()));
    }
    for retry in 0..2 {
        let seed = if retry == 0 { seed } else { seed::mix(seed, &["verbatim"]) };
        let reply = provider.complete(&ontology_request(task, prompts, params, seed)?)?;
        let rewrite = parse_rewrite(task, &reply.text)?;
        if !is_verbatim(task, &rewrite) {
            return Ok(rewrite);
        }
        tracing::debug!(task = %task.id, retry, "ontology reply repeated the input");
    }
    Err(PerturbError::EmptyRewrite(task.id.clone()))
}

fn is_verbatim(task: &Task, rewrite: &OntologyRewrite) -> bool {
    collapse(&rewrite.instructions) == collapse(&task.instructions.text) && rewrite.string_edits.is_empty()
}

fn collapse(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses a rewrite reply and reconciles its data against the original.
pub fn parse_rewrite(task: &Task, reply: &str) -> Result<OntologyRewrite, PerturbError> {
    let parse_err = |msg: &str| PerturbError::RewriteParse(format!("{}: {msg}", task.id));
    let obj = extract_json_object(reply).ok_or_else(|| parse_err("no JSON object"))?;
    let instructions = obj
        .get("instructions")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| parse_err("missing `instructions`"))?
        .to_string();
    let substitutions: Vec<Substitution> = obj
        .get("substitutions")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| parse_err(&format!("bad `substitutions`: {e}")))?
        .unwrap_or_default();
    let substitutions: Vec<Substitution> = substitutions
        .into_iter()
        .filter(|s| !s.original.trim().is_empty() && s.original != s.replacement)
        .collect();
    if substitutions.is_empty() {
        return Err(parse_err("no substitutions listed"));
    }

    let mut string_edits = Vec::new();
    let reconciled = match obj.get("data") {
        Some(proposed) if same_skeleton(&task.data, proposed) => {
            diff_strings(&task.data, proposed, DataPath::root(), &mut string_edits);
            true
        }
        _ => false,
    };
    if !reconciled {
        tracing::debug!(task = %task.id, "rewritten data changed structure; substituting text values instead");
        string_edits.clear();
        substitute_strings(&task.data, DataPath::root(), &substitutions, &mut string_edits);
    }
    let data = apply_string_edits(&task.data, &string_edits)?;
    Ok(OntologyRewrite {
        instructions,
        data,
        substitutions,
        string_edits,
    })
}

/// Whether `b` differs from `a` only in string values.
fn same_skeleton(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len()
                && x.iter()
                    .all(|(k, v)| y.get(k).is_some_and(|w| same_skeleton(v, w)))
        }
        (Value::Array(x), Value::Array(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(v, w)| same_skeleton(v, w))
        }
        (Value::String(_), Value::String(_)) => true,
        (Value::Number(x), Value::Number(y)) => x.to_string() == y.to_string(),
        _ => a == b,
    }
}

fn numerals(text: &str) -> Vec<&str> {
    scan_text(text).into_iter().map(|s| &text[s.start..s.end]).collect()
}

/// Records changed string leaves. Leaves whose embedded numerals changed are
/// kept as they were, since numbers belong to the numeric step.
fn diff_strings(a: &Value, b: &Value, path: DataPath, out: &mut Vec<StringEdit>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for (k, v) in x {
                diff_strings(v, &y[k], path.key(k), out);
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            for (i, (v, w)) in x.iter().zip(y).enumerate() {
                diff_strings(v, w, path.index(i), out);
            }
        }
        (Value::String(old), Value::String(new)) if old != new => {
            if numerals(old) == numerals(new) {
                out.push(StringEdit {
                    path,
                    old: old.clone(),
                    new: new.clone(),
                });
            } else {
                tracing::debug!(%path, "rewrite altered numerals in a text value; kept original");
            }
        }
        _ => {}
    }
}

fn substitute_strings(node: &Value, path: DataPath, subs: &[Substitution], out: &mut Vec<StringEdit>) {
    match node {
        Value::Object(map) => {
            for (k, v) in map {
                substitute_strings(v, path.key(k), subs, out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                substitute_strings(v, path.index(i), subs, out);
            }
        }
        Value::String(old) => {
            let new = substitute_text(old, subs);
            if &new != old && numerals(old) == numerals(&new) {
                out.push(StringEdit {
                    path,
                    old: old.clone(),
                    new,
                });
            }
        }
        _ => {}
    }
}

/// Single left-to-right pass; at each position the longest matching term
/// wins, and replaced text is never matched again.
pub fn substitute_text(text: &str, subs: &[Substitution]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        let hit = subs
            .iter()
            .filter(|s| rest.starts_with(s.original.as_str()))
            .max_by_key(|s| s.original.len());
        match hit {
            Some(s) => {
                out.push_str(&s.replacement);
                i += s.original.len();
            }
            None => {
                let ch = rest.chars().next().expect("non-empty remainder");
                out.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    out
}

/// Applies recorded string edits, checking each leaf still holds the old text.
pub fn apply_string_edits(data: &Value, edits: &[StringEdit]) -> Result<Value, PerturbError> {
    let mut out = data.clone();
    for edit in edits {
        match edit.path.get_mut(&mut out) {
            Some(Value::String(s)) if *s == edit.old => *s = edit.new.clone(),
            _ => {
                return Err(PerturbError::Replay(format!(
                    "no text value {:?} at {}",
                    edit.old, edit.path
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::providers::ScriptedProvider;
    use serde_json::json;

    fn salt_task() -> Task {
        Task::original(
            "sci-000".into(),
            Domain::Science,
            "Compute the molar mass of sodium chloride.",
            json!({"compound": "sodium chloride", "mass_g": 5.85, "note": "dissolve 2 g"}),
        )
        .unwrap()
    }

    fn run(script: Vec<String>) -> (Result<OntologyRewrite, PerturbError>, usize) {
        let provider = ScriptedProvider::new("o", script);
        let out = ontology_replace(
            &salt_task(),
            &provider,
            &PromptSet::defaults(),
            &ProviderParams::generation(),
            1,
        );
        (out, provider.calls())
    }

    #[test]
    fn rewrite_with_matching_structure() {
        let reply = r#"{"instructions": "Compute the molar mass of potassium bromide.",
            "data": {"compound": "potassium bromide", "mass_g": 5.85, "note": "dissolve 2 g"},
            "substitutions": [{"original": "sodium chloride", "replacement": "potassium bromide"}]}"#;
        let (out, _) = run(vec![reply.into()]);
        let out = out.unwrap();
        assert_eq!(out.data["compound"], "potassium bromide");
        assert_eq!(out.data["mass_g"].to_string(), "5.85");
        assert_eq!(out.string_edits.len(), 1);
        assert_eq!(out.substitutions[0].replacement, "potassium bromide");
    }

    #[test]
    fn changed_structure_falls_back_to_substitution() {
        let reply = r#"{"instructions": "Compute the molar mass of potassium bromide.",
            "data": {"compound": "potassium bromide", "mass_g": 11.9},
            "substitutions": [{"original": "sodium chloride", "replacement": "potassium bromide"}]}"#;
        let out = run(vec![reply.into()]).0.unwrap();
        assert_eq!(out.data["compound"], "potassium bromide");
        assert_eq!(out.data["mass_g"].to_string(), "5.85");
        assert_eq!(out.data["note"], "dissolve 2 g");
    }

    #[test]
    fn numerals_inside_text_values_are_protected() {
        let reply = r#"{"instructions": "Compute the molar mass of potassium bromide.",
            "data": {"compound": "potassium bromide", "mass_g": 5.85, "note": "dissolve 3 g"},
            "substitutions": [{"original": "sodium chloride", "replacement": "potassium bromide"}]}"#;
        let out = run(vec![reply.into()]).0.unwrap();
        assert_eq!(out.data["note"], "dissolve 2 g");
    }

    #[test]
    fn verbatim_twice_is_an_empty_rewrite() {
        let verbatim = r#"{"instructions": "Compute the molar mass of sodium chloride.",
            "data": {"compound": "sodium chloride", "mass_g": 5.85, "note": "dissolve 2 g"},
            "substitutions": [{"original": "sodium chloride", "replacement": "sodium chloride "}]}"#;
        let (out, calls) = run(vec![verbatim.into()]);
        assert!(matches!(out, Err(PerturbError::EmptyRewrite(_))));
        assert_eq!(calls, 2);
    }

    #[test]
    fn missing_substitutions_is_a_parse_error() {
        let reply = r#"{"instructions": "Something else.", "data": {}, "substitutions": []}"#;
        assert!(matches!(run(vec![reply.into()]).0, Err(PerturbError::RewriteParse(_))));
        assert!(matches!(run(vec!["no json".into()]).0, Err(PerturbError::RewriteParse(_))));
    }

    #[test]
    fn substitution_is_single_pass_and_longest_first() {
        let subs = vec![
            Substitution { original: "iron".into(), replacement: "copper".into() },
            Substitution { original: "iron oxide".into(), replacement: "zinc oxide".into() },
            Substitution { original: "copper".into(), replacement: "tin".into() },
        ];
        assert_eq!(substitute_text("iron oxide and iron", &subs), "zinc oxide and copper");
    }
}
