//! Seeded reordering of unordered sequences in task data.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::PerturbError;
use crate::domain::{DataPath, ReorderEdit};

/// Key that marks an object's array-valued fields as order-sensitive.
pub const ORDERED_MARKER: &str = "ordered";

fn marks_ordered(map: &serde_json::Map<String, Value>) -> bool {
    matches!(map.get(ORDERED_MARKER), Some(Value::Bool(true)))
}

/// Permutes every sequence of length ≥ 2 with a non-identity permutation.
///
/// Arrays held directly by an object carrying `"ordered": true` keep their
/// order (their elements are still visited). Sequences are handled
/// children-first, so every recorded path is valid in the coordinates of
/// the input document at the moment it is applied.
pub fn reorder_collections(data: &Value, seed: u64) -> (Value, Vec<ReorderEdit>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edits = Vec::new();
    plan(data, DataPath::root(), false, &mut rng, &mut edits);
    let out = apply_reorder_edits(data, &edits).expect("planned edits always apply");
    (out, edits)
}

fn plan(
    node: &Value,
    path: DataPath,
    order_sensitive: bool,
    rng: &mut ChaCha8Rng,
    edits: &mut Vec<ReorderEdit>,
) {
    match node {
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                plan(item, path.index(i), false, rng, edits);
            }
            if items.len() >= 2 && !order_sensitive {
                let mut permutation: Vec<usize> = (0..items.len()).collect();
                permutation.shuffle(rng);
                if permutation.iter().enumerate().all(|(i, &p)| i == p) {
                    permutation.swap(0, 1);
                }
                edits.push(ReorderEdit { path, permutation });
            }
        }
        Value::Object(map) => {
            let ordered = marks_ordered(map);
            for (k, v) in map {
                plan(v, path.key(k), ordered, rng, edits);
            }
        }
        _ => {}
    }
}

/// Applies recorded permutations in order.
pub fn apply_reorder_edits(data: &Value, edits: &[ReorderEdit]) -> Result<Value, PerturbError> {
    let mut out = data.clone();
    for edit in edits {
        let node = edit
            .path
            .get_mut(&mut out)
            .ok_or_else(|| PerturbError::Replay(format!("no sequence at {}", edit.path)))?;
        let Value::Array(items) = node else {
            return Err(PerturbError::Replay(format!("{} is not a sequence", edit.path)));
        };
        if !edit.is_valid_permutation(items.len()) {
            return Err(PerturbError::Replay(format!(
                "invalid permutation {:?} for sequence of length {} at {}",
                edit.permutation,
                items.len(),
                edit.path
            )));
        }
        let reordered: Vec<Value> = edit.permutation.iter().map(|&i| items[i].clone()).collect();
        *items = reordered;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flat_sequence_is_permuted_not_lost() {
        let data = json!([1, 2, 3]);
        for seed in 0..50 {
            let (out, edits) = reorder_collections(&data, seed);
            assert_ne!(out, data, "seed {seed} produced identity");
            let mut sorted: Vec<i64> = out.as_array().unwrap().iter().map(|v| v.as_i64().unwrap()).collect();
            sorted.sort();
            assert_eq!(sorted, vec![1, 2, 3]);
            assert_eq!(edits.len(), 1);
        }
    }

    #[test]
    fn ordered_marker_is_respected() {
        let data = json!({"ordered": true, "steps": ["heat", "stir", "cool"], "tags": {"x": [1, 2]}});
        let (out, edits) = reorder_collections(&data, 4);
        assert_eq!(out["steps"], data["steps"]);
        // the marker only covers direct array fields
        assert_eq!(edits.len(), 1);
        assert_eq!(edits[0].path.to_string(), "tags.x");
    }

    #[test]
    fn short_sequences_untouched() {
        let data = json!({"a": [1], "b": []});
        let (out, edits) = reorder_collections(&data, 1);
        assert_eq!(out, data);
        assert!(edits.is_empty());
    }

    #[test]
    fn replay_matches_and_rejects_bad_permutations() {
        let data = json!({"m": [[1, 2], [3, 4, 5]], "n": ["a", "b"]});
        let (out, edits) = reorder_collections(&data, 8);
        assert_eq!(apply_reorder_edits(&data, &edits).unwrap(), out);
        let bad = vec![ReorderEdit {
            path: DataPath::root().key("n"),
            permutation: vec![0, 0],
        }];
        assert!(apply_reorder_edits(&data, &bad).is_err());
    }
}
