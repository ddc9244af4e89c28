//! Assembly of one perturbed variant from the three sequential steps.

use serde_json::Value;

use super::ontology::{apply_string_edits, ontology_replace};
use super::{apply_numeric_edits, apply_reorder_edits, perturb_numbers, reorder_collections, PerturbError};
use crate::domain::{Instructions, Language, PerturbationRecord, ProviderParams, Task, TaskId, TranslationTarget};
use crate::prompt::PromptSet;
use crate::providers::{translate_to, ChatProvider, ProviderError, Translator};
use crate::seed;

/// Attempts per variant before the slot is reported as failed.
pub const VARIANT_ATTEMPTS: u32 = 3;

/// Services a variant is built with.
pub struct PerturbContext<'a> {
    pub rewriter: &'a dyn ChatProvider,
    pub translator: &'a dyn Translator,
    pub prompts: &'a PromptSet,
    pub params: &'a ProviderParams,
    pub root_seed: u64,
}

/// `{parent}.p{j}` for the first generation of a slot, `{parent}.p{j}r{g}`
/// for review replacements.
pub fn variant_id(parent: &TaskId, j: u32, generation: u32) -> TaskId {
    if generation == 0 {
        TaskId(format!("{parent}.p{j}"))
    } else {
        TaskId(format!("{parent}.p{j}r{generation}"))
    }
}

/// Seed for variant `j` of `parent`. Replacement generations and retries
/// extend the mix so each draw is fresh yet reproducible.
pub fn variant_seed(root: u64, parent: &TaskId, j: u32, generation: u32, attempt: u32) -> u64 {
    let j = j.to_string();
    let mut parts = vec!["variant", parent.as_str(), j.as_str()];
    let extra = format!("{generation}/{attempt}");
    if generation != 0 || attempt != 0 {
        parts.push(&extra);
    }
    seed::mix(root, &parts)
}

/// Translates English instructions; the data is not involved.
pub fn translate_instructions(
    instructions: &Instructions,
    translator: &dyn Translator,
    target: Language,
) -> Result<Instructions, PerturbError> {
    if instructions.language != Language::En {
        return Err(PerturbError::Provider(ProviderError::InvalidRequest(format!(
            "instructions must be English, found {}",
            instructions.language
        ))));
    }
    let text = translate_to(translator, &instructions.text, target)?;
    Ok(Instructions { text, language: target })
}

/// Builds variant `j` of `task`: ontology replacement, then translation of
/// the instructions, then numeric perturbation and reordering of the data.
pub fn perturb_task(
    task: &Task,
    j: u32,
    generation: u32,
    ctx: &PerturbContext<'_>,
) -> Result<Task, PerturbError> {
    let mut last = None;
    for attempt in 0..VARIANT_ATTEMPTS {
        match perturb_once(task, j, generation, attempt, ctx) {
            Ok(t) => return Ok(t),
            Err(e) if e.is_retryable() => {
                tracing::debug!(task = %task.id, j, attempt, error = %e, "variant attempt failed");
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(PerturbError::VariantFailed {
        parent: task.id.clone(),
        j,
        attempts: VARIANT_ATTEMPTS,
        last: last.map(|e| e.to_string()).unwrap_or_default(),
    })
}

fn perturb_once(
    task: &Task,
    j: u32,
    generation: u32,
    attempt: u32,
    ctx: &PerturbContext<'_>,
) -> Result<Task, PerturbError> {
    if !task.is_original() {
        return Err(PerturbError::NotOriginal(task.id.clone()));
    }
    if j == 0 {
        return Err(PerturbError::Replay("variant indices start at 1".into()));
    }
    let seed = variant_seed(ctx.root_seed, &task.id, j, generation, attempt);
    let rewrite = ontology_replace(task, ctx.rewriter, ctx.prompts, ctx.params, seed)?;

    let target = TranslationTarget::for_variant(j);
    let rewritten = Instructions {
        text: rewrite.instructions.clone(),
        language: Language::En,
    };
    let translated = translate_instructions(&rewritten, ctx.translator, target.language())?;

    let (data, numeric_edits) = perturb_numbers(&rewrite.data, seed::mix(seed, &["numbers"]));
    let (data, reorder_edits) = reorder_collections(&data, seed::mix(seed, &["reorder"]));

    let record = PerturbationRecord {
        variant_index: j,
        ontology_substitutions: rewrite.substitutions,
        rewritten_instructions: rewrite.instructions,
        data_string_edits: rewrite.string_edits,
        translation_target: target,
        translated_instructions: translated.text.clone(),
        numeric_edits,
        reorder_edits,
        seed,
    };
    Ok(Task::perturbed(
        variant_id(&task.id, j, generation),
        task,
        translated.text,
        data,
        record,
    )?)
}

/// Re-applies a record to its parent and returns the variant's
/// instructions and data.
pub fn replay_record(parent: &Task, record: &PerturbationRecord) -> Result<(String, Value), PerturbError> {
    let data = apply_string_edits(&parent.data, &record.data_string_edits)?;
    let data = apply_numeric_edits(&data, &record.numeric_edits)?;
    let data = apply_reorder_edits(&data, &record.reorder_edits)?;
    Ok((record.translated_instructions.clone(), data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::providers::{MockTranslator, ScriptedProvider};
    use serde_json::json;

    fn parent() -> Task {
        Task::original(
            "sci-000".into(),
            Domain::Science,
            "Compute the molar mass of sodium chloride.",
            json!({"compound": "sodium chloride", "samples_g": [5.85, 11.7, 2.5], "note": "dissolve 2 g"}),
        )
        .unwrap()
    }

    fn rewriter() -> ScriptedProvider {
        ScriptedProvider::new(
            "o",
            vec![r#"{"instructions": "Compute the molar mass of potassium bromide.",
                "data": {"compound": "potassium bromide", "samples_g": [5.85, 11.7, 2.5], "note": "dissolve 2 g"},
                "substitutions": [{"original": "sodium chloride", "replacement": "potassium bromide"}]}"#
                .into()],
        )
    }

    fn build(j: u32) -> Task {
        let r = rewriter();
        let prompts = PromptSet::defaults();
        let params = ProviderParams::generation();
        let ctx = PerturbContext {
            rewriter: &r,
            translator: &MockTranslator::default(),
            prompts: &prompts,
            params: &params,
            root_seed: 42,
        };
        perturb_task(&parent(), j, 0, &ctx).unwrap()
    }

    #[test]
    fn composition_and_language_rotation() {
        let v1 = build(1);
        assert_eq!(v1.id.as_str(), "sci-000.p1");
        assert_eq!(v1.instructions.language, Language::De);
        assert_eq!(v1.instructions.text, "[de] Compute the molar mass of potassium bromide.");
        let rec = v1.record().unwrap();
        assert_eq!(rec.ontology_substitutions.len(), 1);
        assert_eq!(rec.numeric_edits.len(), 4);
        assert_eq!(rec.reorder_edits.len(), 1);
        assert_eq!(build(2).instructions.language, Language::Es);
        assert_eq!(build(3).instructions.language, Language::Fr);
    }

    #[test]
    fn same_inputs_same_variant() {
        assert_eq!(build(1), build(1));
        assert_ne!(build(1).data, build(2).data);
    }

    #[test]
    fn record_replays_onto_parent() {
        let p = parent();
        for j in 1..=3 {
            let v = build(j);
            let (text, data) = replay_record(&p, v.record().unwrap()).unwrap();
            assert_eq!(text, v.instructions.text);
            assert_eq!(data, v.data);
        }
    }

    #[test]
    fn translation_leaves_data_alone_and_refuses_english() {
        let p = parent();
        let before = serde_json::to_string(&p.data).unwrap();
        let out = translate_instructions(&p.instructions, &MockTranslator::default(), Language::Fr).unwrap();
        assert_eq!(out.language, Language::Fr);
        assert_eq!(serde_json::to_string(&p.data).unwrap(), before);
        assert!(matches!(
            translate_instructions(&p.instructions, &MockTranslator::default(), Language::En),
            Err(PerturbError::Provider(ProviderError::UnsupportedLanguage(Language::En)))
        ));
    }

    #[test]
    fn persistent_rewrite_failure_exhausts_the_slot() {
        let r = ScriptedProvider::new("o", vec!["nothing useful".into()]);
        let prompts = PromptSet::defaults();
        let params = ProviderParams::generation();
        let ctx = PerturbContext {
            rewriter: &r,
            translator: &MockTranslator::default(),
            prompts: &prompts,
            params: &params,
            root_seed: 42,
        };
        let err = perturb_task(&parent(), 1, 0, &ctx).unwrap_err();
        assert!(matches!(err, PerturbError::VariantFailed { attempts: 3, .. }));
        assert_eq!(r.calls(), 3);
    }

    #[test]
    fn perturbing_a_variant_is_refused() {
        let v = build(1);
        let r = rewriter();
        let prompts = PromptSet::defaults();
        let params = ProviderParams::generation();
        let ctx = PerturbContext {
            rewriter: &r,
            translator: &MockTranslator::default(),
            prompts: &prompts,
            params: &params,
            root_seed: 42,
        };
        assert!(matches!(perturb_task(&v, 1, 0, &ctx), Err(PerturbError::NotOriginal(_))));
    }
}
