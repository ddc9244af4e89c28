use serde::{Deserialize, Serialize};

use super::{DataPath, Span, TranslationTarget};

/// A domain term swapped for a same-domain equivalent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub original: String,
    pub replacement: String,
}

/// Replacement of one string leaf in the data tree by ontology rewriting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StringEdit {
    pub path: DataPath,
    pub old: String,
    pub new: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericRule {
    /// `v * (1 ± f)` rounded to source precision.
    Scaled,
    /// Rounding gave back `v`; shifted by one unit in the last source digit.
    MinimumShift,
}

/// One numeric literal rewritten by data perturbation.
///
/// Values are kept in their source text form so that replay is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericEdit {
    pub path: DataPath,
    /// Byte range inside a string leaf; `None` for number nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    pub old_value: String,
    pub new_value: String,
    /// Signed drawn fraction: `+0.15` means the value was scaled by 1.15.
    pub applied_fraction: f64,
    pub rule: NumericRule,
}

/// A permutation applied to one sequence: `new[i] = old[permutation[i]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorderEdit {
    pub path: DataPath,
    pub permutation: Vec<usize>,
}

impl ReorderEdit {
    pub fn is_valid_permutation(&self, len: usize) -> bool {
        if self.permutation.len() != len {
            return false;
        }
        let mut seen = vec![false; len];
        for &i in &self.permutation {
            if i >= len || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        true
    }
}

/// Everything applied to a parent task to produce one perturbed variant,
/// in application order: ontology rewrite, translation, numbers, reordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub variant_index: u32,
    pub ontology_substitutions: Vec<Substitution>,
    /// English instructions after ontology replacement, before translation.
    pub rewritten_instructions: String,
    #[serde(default)]
    pub data_string_edits: Vec<StringEdit>,
    pub translation_target: TranslationTarget,
    pub translated_instructions: String,
    #[serde(default)]
    pub numeric_edits: Vec<NumericEdit>,
    #[serde(default)]
    pub reorder_edits: Vec<ReorderEdit>,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_validity() {
        let edit = |p: Vec<usize>| ReorderEdit {
            path: DataPath::root(),
            permutation: p,
        };
        assert!(edit(vec![2, 0, 1]).is_valid_permutation(3));
        assert!(!edit(vec![0, 0, 1]).is_valid_permutation(3));
        assert!(!edit(vec![0, 3, 1]).is_valid_permutation(3));
        assert!(!edit(vec![0, 1]).is_valid_permutation(3));
    }
}
