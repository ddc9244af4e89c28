mod lexer;
mod numbers;
mod ontology;
mod reorder;
mod variant;

use thiserror::Error;

use crate::domain::{DomainError, TaskId};
use crate::prompt::TemplateError;
use crate::providers::ProviderError;

pub use lexer::{scan_numeric_literals, scan_text, Decimal, NumericLiteral};
pub use numbers::{apply_numeric_edits, perturb_numbers, within_band, MAX_FRACTION, MIN_FRACTION};
pub use ontology::{apply_string_edits, ontology_replace, ontology_request, parse_rewrite, substitute_text, OntologyRewrite};
pub use reorder::{apply_reorder_edits, reorder_collections, ORDERED_MARKER};
pub use variant::{
    perturb_task, replay_record, translate_instructions, variant_id, variant_seed, PerturbContext,
    VARIANT_ATTEMPTS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbError {
    #[error("record does not replay: {0}")]
    Replay(String),
    #[error("cannot parse ontology rewrite for {0}")]
    RewriteParse(String),
    #[error("ontology rewrite of {0} returned the task unchanged")]
    EmptyRewrite(TaskId),
    #[error("{0} is a perturbed task; only originals are perturbed")]
    NotOriginal(TaskId),
    #[error("variant {j} of {parent} failed after {attempts} attempts: {last}")]
    VariantFailed {
        parent: TaskId,
        j: u32,
        attempts: u32,
        last: String,
    },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl PerturbError {
    /// Failures that a fresh seed may fix.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            PerturbError::RewriteParse(_)
                | PerturbError::EmptyRewrite(_)
                | PerturbError::Provider(ProviderError::MalformedResponse(_))
        )
    }
}
