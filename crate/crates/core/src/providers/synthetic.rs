//! A deterministic stand-in model for offline runs and fixture recording.
//!
//! It recognises the shipped prompt templates and answers each with content
//! drawn from a small built-in corpus, keyed by a digest of the request.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{request_digest, ChatProvider, ChatRequest, ChatResponse, ProviderError};
use crate::domain::{Domain, Substitution};
use crate::perturb::substitute_text;

pub struct SyntheticModel {
    model: String,
}

impl SyntheticModel {
    pub fn new(model: &str) -> Self {
        SyntheticModel {
            model: model.to_string(),
        }
    }
}

struct Draw([u8; 32]);

impl Draw {
    fn of(model: &str, request: &ChatRequest) -> Self {
        let hex = request_digest(model, request);
        Draw(Sha256::digest(hex.as_bytes()).into())
    }

    /// Uniform-ish integer in `0..n` from byte pair `i`.
    fn pick(&self, i: usize, n: usize) -> usize {
        let v = u16::from_le_bytes([self.0[2 * i % 32], self.0[(2 * i + 1) % 32]]) as usize;
        v % n
    }

    fn percent(&self, i: usize) -> usize {
        self.pick(i, 100)
    }
}

impl ChatProvider for SyntheticModel {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let text = &request.user_text;
        let draw = Draw::of(&self.model, request);
        let reply = if text.contains("expert problem setter") {
            generate(text, &draw)
        } else if text.contains("Decide whether you are highly confident") {
            validate(&draw)
        } else if text.contains("robustness study") {
            rewrite(text)
        } else if text.contains("Attempt the following task") {
            classify(text, &draw)
        } else {
            return Err(ProviderError::InvalidRequest(
                "synthetic model only answers the shipped prompt templates".into(),
            ));
        };
        Ok(ChatResponse::stop(reply))
    }
}

struct Corpus {
    domain: Domain,
    items: [(&'static str, &'static str); 8],
    templates: [&'static str; 3],
}

const CORPORA: [Corpus; 4] = [
    Corpus {
        domain: Domain::Science,
        items: [
            ("sodium chloride", "potassium bromide"),
            ("potassium nitrate", "sodium nitrate"),
            ("calcium carbonate", "barium carbonate"),
            ("magnesium sulfate", "zinc sulfate"),
            ("ammonium chloride", "ammonium bromide"),
            ("copper sulfate", "nickel sulfate"),
            ("sodium bicarbonate", "potassium bicarbonate"),
            ("lithium fluoride", "sodium fluoride"),
        ],
        templates: [
            "Compute the number of moles of {item} in the sample, using its mass and molar mass.",
            "Report the mean and the sample standard deviation of the {item} concentrations measured in the trials.",
            "A solution of {item} is diluted from the initial volume to the final volume. Find its final concentration.",
        ],
    },
    Corpus {
        domain: Domain::Technology,
        items: [
            ("web server", "application server"),
            ("database server", "storage server"),
            ("router", "network switch"),
            ("load balancer", "reverse proxy"),
            ("cache node", "key-value store"),
            ("message broker", "event queue"),
            ("file server", "object store"),
            ("mail server", "name server"),
        ],
        templates: [
            "A {item} sends a file of the given size over a link with the given bandwidth. Compute the transfer time in seconds.",
            "Report the median of the response times recorded for the {item}.",
            "A {item} stores records of a fixed size. How many whole records fit into its free storage?",
        ],
    },
    Corpus {
        domain: Domain::Engineering,
        items: [
            ("steel", "wrought iron"),
            ("aluminium", "magnesium alloy"),
            ("timber", "bamboo"),
            ("concrete", "masonry"),
            ("titanium", "nickel alloy"),
            ("brass", "bronze"),
            ("cast iron", "ductile iron"),
            ("copper", "zinc"),
        ],
        templates: [
            "A simply supported {item} beam carries a uniform load over its span. Compute the maximum bending moment.",
            "A {item} rod is heated by the given temperature rise. Compute its thermal elongation from the expansion coefficient.",
            "The listed axial loads act together on a {item} column. Compute the total load and the resulting stress over the cross-section area.",
        ],
    },
    Corpus {
        domain: Domain::Medicine,
        items: [
            ("amoxicillin", "ampicillin"),
            ("ibuprofen", "naproxen"),
            ("paracetamol", "aspirin"),
            ("metformin", "glipizide"),
            ("lisinopril", "enalapril"),
            ("atorvastatin", "simvastatin"),
            ("omeprazole", "pantoprazole"),
            ("warfarin", "apixaban"),
        ],
        templates: [
            "A patient is prescribed {item} at the stated dose per kilogram of body mass. Compute the total dose in milligrams.",
            "Plasma concentrations of {item} were measured at the listed times. Estimate the elimination half-life assuming first-order kinetics.",
            "Compute the infusion rate in millilitres per hour needed to deliver the given volume of {item} solution over the stated duration.",
        ],
    },
];

fn corpus_for(text: &str, marker: &str) -> &'static Corpus {
    CORPORA
        .iter()
        .find(|c| text.contains(&format!("{marker}{}", c.domain.title())))
        .unwrap_or(&CORPORA[0])
}

/// A decimal with one fractional digit in `lo..hi`.
fn tenths(draw: &Draw, i: usize, lo: usize, hi: usize) -> f64 {
    (lo * 10 + draw.pick(i, (hi - lo) * 10)) as f64 / 10.0
}

fn generate(text: &str, draw: &Draw) -> String {
    if draw.percent(0) < 4 {
        return "Here is a problem I can solve: compute the area of a circle.".into();
    }
    let corpus = corpus_for(text, "field of ");
    let t = draw.pick(1, 3);
    let (item, _) = corpus.items[draw.pick(2, 8)];
    let instructions = corpus.templates[t].replace("{item}", item);
    let key = match corpus.domain {
        Domain::Science => "compound",
        Domain::Technology => "device",
        Domain::Engineering => "material",
        Domain::Medicine => "drug",
    };
    let mut data = serde_json::Map::new();
    data.insert(key.into(), json!(item));
    let n = |i, lo, hi| json!(tenths(draw, i, lo, hi));
    let int = |i, lo, hi: usize| json!(lo + draw.pick(i, hi - lo));
    let extra: Value = match (corpus.domain, t) {
        (Domain::Science, 0) => json!({"mass_g": n(3, 1, 90), "molar_mass_g_per_mol": n(4, 20, 200)}),
        (Domain::Science, 1) => json!({"concentrations_mol_per_l": [n(3, 1, 9), n(4, 1, 9), n(5, 1, 9), n(6, 1, 9)], "note": "each trial used 25 ml"}),
        (Domain::Science, _) => json!({"initial_concentration_mol_per_l": n(3, 1, 5), "initial_volume_ml": int(4, 10, 90), "final_volume_ml": int(5, 100, 900)}),
        (Domain::Technology, 0) => json!({"file_size_mb": int(3, 10, 900), "bandwidth_mbps": int(4, 5, 100)}),
        (Domain::Technology, 1) => json!({"latencies_ms": [int(3, 5, 90), int(4, 5, 90), int(5, 5, 90), int(6, 5, 90), int(7, 5, 90)]}),
        (Domain::Technology, _) => json!({"record_size_kb": int(3, 2, 64), "free_storage_gb": n(4, 1, 50)}),
        (Domain::Engineering, 0) => json!({"span_m": n(3, 2, 12), "load_kn_per_m": n(4, 1, 30)}),
        (Domain::Engineering, 1) => json!({"length_m": n(3, 1, 9), "delta_t_k": int(4, 10, 200), "alpha_per_k": 1.2e-5}),
        (Domain::Engineering, _) => json!({"loads_kn": [int(3, 10, 99), int(4, 10, 99), int(5, 10, 99)], "area_cm2": int(6, 50, 400), "note": "loads act on axis 1"}),
        (Domain::Medicine, 0) => json!({"body_mass_kg": n(3, 40, 110), "dose_mg_per_kg": n(4, 1, 20)}),
        (Domain::Medicine, 1) => json!({"samples": {"ordered": true, "times_h": [1, 2, 4, 8], "concentrations_mg_per_l": [n(3, 20, 40), n(4, 12, 19), n(5, 6, 11), n(6, 1, 5)]}}),
        (Domain::Medicine, _) => json!({"volume_ml": int(3, 100, 1000), "duration_h": n(4, 1, 12)}),
    };
    if let Value::Object(extra) = extra {
        data.extend(extra);
    }
    let body = json!({"instructions": instructions, "data": data});
    format!("Reasoning about answerability: this is a standard exercise.\n```json\n{body}\n```")
}

fn validate(draw: &Draw) -> String {
    if draw.percent(0) < 8 {
        "CONFIDENT: NO".into()
    } else {
        "CONFIDENT: YES".into()
    }
}

fn field<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(label))
}

fn rewrite(text: &str) -> String {
    let corpus = corpus_for(text, "rewriting a ");
    let instructions = field(text, "Task: ").unwrap_or_default();
    let data: Value = field(text, "Data: ")
        .and_then(|d| serde_json::from_str(d).ok())
        .unwrap_or(Value::Null);
    let subs: Vec<Substitution> = corpus
        .items
        .iter()
        .filter(|(from, _)| instructions.contains(from) || data.to_string().contains(from))
        .map(|(from, to)| Substitution {
            original: from.to_string(),
            replacement: to.to_string(),
        })
        .collect();
    let data = map_strings(&data, &subs);
    json!({
        "instructions": substitute_text(instructions, &subs),
        "data": data,
        "substitutions": subs,
    })
    .to_string()
}

fn map_strings(v: &Value, subs: &[Substitution]) -> Value {
    match v {
        Value::String(s) => Value::String(substitute_text(s, subs)),
        Value::Array(a) => Value::Array(a.iter().map(|x| map_strings(x, subs)).collect()),
        Value::Object(m) => Value::Object(m.iter().map(|(k, x)| (k.clone(), map_strings(x, subs))).collect()),
        other => other.clone(),
    }
}

fn classify(text: &str, draw: &Draw) -> String {
    let task = field(text, "Task: ").unwrap_or_default();
    let translated = ["[de]", "[es]", "[fr]"].iter().any(|t| task.starts_with(t));
    let threshold = if translated { 45 } else { 5 };
    let infeasible = draw.percent(0) < threshold;
    match (draw.percent(1), infeasible) {
        (0..=2, _) => "I would approach this step by step.".into(),
        (3..=7, true) => "This needs information I do not have. VERDICT: INFEASIBLE".into(),
        (3..=7, false) => "Working through it gives a definite result. Verdict: feasible".into(),
        (_, true) => "VERDICT: INFEASIBLE\nThe task depends on quantities I cannot determine reliably.".into(),
        (_, false) => format!("VERDICT: FEASIBLE\nAnswer: {}", draw.pick(2, 1000)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ProviderParams, Task};
    use crate::prompt::PromptSet;
    use crate::taskgen::{original_id, TaskGenerator};
    use std::sync::Arc;

    #[test]
    fn generates_distinct_validated_tasks() {
        let model: Arc<dyn ChatProvider> = Arc::new(SyntheticModel::new("synthetic"));
        let gen = TaskGenerator {
            generator: model.clone(),
            validator: model,
            prompts: Arc::new(PromptSet::defaults()),
            params: ProviderParams::generation(),
        };
        for domain in Domain::ALL {
            let tasks = gen
                .generate_validated_batch(domain, 12, 5, Vec::new(), |_, _| Ok(()))
                .unwrap();
            assert_eq!(tasks.len(), 12);
            assert_eq!(tasks[3].id, original_id(domain, 3));
        }
    }

    #[test]
    fn rewrite_swaps_listed_terms() {
        let task = Task::original(
            "med-000".into(),
            Domain::Medicine,
            "A patient is prescribed warfarin.",
            json!({"drug": "warfarin", "dose_mg": 5}),
        )
        .unwrap();
        let req = crate::perturb::ontology_request(&task, &PromptSet::defaults(), &ProviderParams::generation(), 1).unwrap();
        let reply = SyntheticModel::new("s").complete(&req).unwrap().text;
        let v: Value = serde_json::from_str(&reply).unwrap();
        assert_eq!(v["data"]["drug"], "apixaban");
        assert_eq!(v["substitutions"][0]["original"], "warfarin");
    }
}
