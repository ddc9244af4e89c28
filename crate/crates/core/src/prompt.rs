//! Prompt templates with `{placeholder}` substitution, and helpers for
//! pulling structured output back out of model replies.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
    #[error("template `{template}` lacks required placeholder {{{placeholder}}}")]
    MissingPlaceholder {
        template: String,
        placeholder: String,
    },
    #[error("no value supplied for {{{0}}}")]
    MissingValue(String),
}

/// Placeholders a template may use. Anything else in braces is literal text,
/// so JSON examples in templates need no escaping.
pub const PLACEHOLDERS: [&str; 3] = ["domain", "instructions", "data"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    text: String,
}

impl PromptTemplate {
    pub fn new(name: &str, text: impl Into<String>, required: &[&str]) -> Result<Self, TemplateError> {
        let tpl = PromptTemplate {
            name: name.to_string(),
            text: text.into(),
        };
        let present = tpl.placeholders();
        for req in required {
            if !present.contains(*req) {
                return Err(TemplateError::MissingPlaceholder {
                    template: name.to_string(),
                    placeholder: req.to_string(),
                });
            }
        }
        Ok(tpl)
    }

    pub fn load(name: &str, path: &Path, required: &[&str]) -> Result<Self, TemplateError> {
        let text = fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::new(name, text, required)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn placeholders(&self) -> BTreeSet<&'static str> {
        PLACEHOLDERS
            .into_iter()
            .filter(|p| self.text.contains(&format!("{{{p}}}")))
            .collect()
    }

    /// Substitutes every known placeholder in a single left-to-right pass,
    /// so substituted values are never re-expanded.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open..];
            let hit = PLACEHOLDERS
                .iter()
                .find(|p| after.starts_with(&format!("{{{p}}}")));
            match hit {
                Some(p) => {
                    let value = values
                        .iter()
                        .find(|(k, _)| k == p)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| TemplateError::MissingValue(p.to_string()))?;
                    out.push_str(value);
                    rest = &after[p.len() + 2..];
                }
                None => {
                    out.push('{');
                    rest = &after[1..];
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// The four prompts the pipeline sends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub generate: PromptTemplate,
    pub validate: PromptTemplate,
    pub ontology: PromptTemplate,
    pub classify: PromptTemplate,
}

/// Optional per-prompt overrides, as paths to template files.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplatePaths {
    pub generate: Option<std::path::PathBuf>,
    pub validate: Option<std::path::PathBuf>,
    pub ontology: Option<std::path::PathBuf>,
    pub classify: Option<std::path::PathBuf>,
}

const GENERATE_REQUIRED: &[&str] = &["domain"];
const VALIDATE_REQUIRED: &[&str] = &["instructions", "data"];
const ONTOLOGY_REQUIRED: &[&str] = &["domain", "instructions", "data"];
const CLASSIFY_REQUIRED: &[&str] = &["instructions", "data"];

impl PromptSet {
    /// The templates shipped with the crate.
    pub fn defaults() -> Self {
        let t = |name, text: &str, req| PromptTemplate::new(name, text, req).expect("shipped template is valid");
        PromptSet {
            generate: t("generate", include_str!("../templates/generate.txt"), GENERATE_REQUIRED),
            validate: t("validate", include_str!("../templates/validate.txt"), VALIDATE_REQUIRED),
            ontology: t("ontology", include_str!("../templates/ontology.txt"), ONTOLOGY_REQUIRED),
            classify: t("classify", include_str!("../templates/classify.txt"), CLASSIFY_REQUIRED),
        }
    }

    /// Defaults with any configured files swapped in. Relative paths resolve
    /// against `base`.
    pub fn load(paths: &TemplatePaths, base: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::defaults();
        let resolve = |p: &std::path::PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        if let Some(p) = &paths.generate {
            set.generate = PromptTemplate::load("generate", &resolve(p), GENERATE_REQUIRED)?;
        }
        if let Some(p) = &paths.validate {
            set.validate = PromptTemplate::load("validate", &resolve(p), VALIDATE_REQUIRED)?;
        }
        if let Some(p) = &paths.ontology {
            set.ontology = PromptTemplate::load("ontology", &resolve(p), ONTOLOGY_REQUIRED)?;
        }
        if let Some(p) = &paths.classify {
            set.classify = PromptTemplate::load("classify", &resolve(p), CLASSIFY_REQUIRED)?;
        }
        Ok(set)
    }
}

/// Data as it appears inside prompts: compact canonical JSON.
pub fn render_data(data: &Value) -> String {
    match data {
        Value::Null => "{}".to_string(),
        other => serde_json::to_string(other).expect("Value serialization is infallible"),
    }
}

/// Finds the first JSON object in a model reply, looking inside fenced code
/// blocks first and then at any balanced `{...}` span.
pub fn extract_json_object(reply: &str) -> Option<Value> {
    for block in fenced_blocks(reply) {
        if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(block.trim()) {
            return Some(v);
        }
    }
    let bytes = reply.as_bytes();
    let mut start = 0;
    while let Some(offset) = reply[start..].find('{') {
        let open = start + offset;
        if let Some(close) = matching_brace(bytes, open) {
            if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(&reply[open..=close]) {
                return Some(v);
            }
        }
        start = open + 1;
    }
    None
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                out.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    out
}

fn matching_brace(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn render_substitutes_known_placeholders_only() {
        let t = PromptTemplate::new("t", r#"In {domain}: {instructions} -> {"a": {x}}"#, &["domain"]).unwrap();
        let out = t
            .render(&[("domain", "physics"), ("instructions", "use {domain} literally")])
            .unwrap();
        assert_eq!(out, r#"In physics: use {domain} literally -> {"a": {x}}"#);
    }

    #[test]
    fn missing_value_and_placeholder_are_errors() {
        let t = PromptTemplate::new("t", "{data}", &[]).unwrap();
        assert_eq!(t.render(&[]), Err(TemplateError::MissingValue("data".into())));
        assert!(matches!(
            PromptTemplate::new("t", "no slots", &["domain"]),
            Err(TemplateError::MissingPlaceholder { .. })
        ));
    }

    #[test]
    fn shipped_templates_have_their_placeholders() {
        let set = PromptSet::defaults();
        assert!(set.generate.placeholders().contains("domain"));
        assert_eq!(set.ontology.placeholders().len(), 3);
        assert!(set.classify.text().contains("VERDICT: FEASIBLE"));
    }

    #[test]
    fn template_override_from_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c.txt"), "Solve {instructions} with {data}").unwrap();
        let paths = TemplatePaths {
            classify: Some("c.txt".into()),
            ..Default::default()
        };
        let set = PromptSet::load(&paths, dir.path()).unwrap();
        assert_eq!(set.classify.text(), "Solve {instructions} with {data}");
        let bad = TemplatePaths {
            classify: Some("missing.txt".into()),
            ..Default::default()
        };
        assert!(PromptSet::load(&bad, dir.path()).is_err());
    }

    #[test]
    fn json_extraction() {
        let fenced = "Sure!\n```json\n{\"instructions\": \"x\", \"data\": {}}\n```\nDone";
        assert_eq!(extract_json_object(fenced).unwrap()["instructions"], "x");
        let bare = "Here: {\"a\": \"}{\", \"b\": [1, {\"c\": 2}]} trailing";
        assert_eq!(extract_json_object(bare).unwrap()["b"][1]["c"], json!(2));
        let skip_junk = "{not json} then {\"ok\": true}";
        assert_eq!(extract_json_object(skip_junk).unwrap()["ok"], json!(true));
        assert!(extract_json_object("no object here").is_none());
    }
}
