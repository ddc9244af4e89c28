//! Rule-based numeric perturbation of task data.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::lexer::{scan_numeric_literals, Decimal};
use super::PerturbError;
use crate::domain::{DataPath, NumericEdit, NumericRule};

/// Lower edge of the relative change band.
pub const MIN_FRACTION: f64 = 0.10;
/// Upper edge of the relative change band.
pub const MAX_FRACTION: f64 = 0.20;

/// Scales every non-zero numeric literal by `1 ± f`, `f ~ U[0.10, 0.20]`.
///
/// The result is rounded to the literal's source precision. When rounding
/// hands back the original value the literal moves by one unit in its last
/// digit instead, away from zero if moving toward it would reach zero.
/// Zeros are left alone.
pub fn perturb_numbers(data: &Value, seed: u64) -> (Value, Vec<NumericEdit>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edits = Vec::new();
    for lit in scan_numeric_literals(data) {
        if lit.value.is_zero() {
            tracing::debug!(path = %lit.path, "zero literal left unchanged");
            continue;
        }
        let fraction: f64 = rng.random_range(MIN_FRACTION..=MAX_FRACTION);
        let upward = rng.random_bool(0.5);
        let signed = if upward { fraction } else { -fraction };
        let (units, rule) = scale_units(lit.value.units, signed);
        let new_value = lit.value.with_units(units).render();
        edits.push(NumericEdit {
            path: lit.path,
            span: lit.span,
            old_value: lit.text,
            new_value,
            applied_fraction: signed,
            rule,
        });
    }
    let perturbed = apply_numeric_edits(data, &edits)
        .expect("edits derived from a fresh scan always apply");
    (perturbed, edits)
}

/// New magnitude for `units` scaled by `1 + signed_fraction`.
fn scale_units(units: u128, signed_fraction: f64) -> (u128, NumericRule) {
    let scaled = (units as f64 * (1.0 + signed_fraction)).round();
    let scaled = if scaled < 0.0 { 0 } else { scaled as u128 };
    if scaled != units && scaled != 0 {
        return (scaled, NumericRule::Scaled);
    }
    let shifted = if signed_fraction < 0.0 && units > 1 {
        units - 1
    } else {
        units + 1
    };
    (shifted, NumericRule::MinimumShift)
}

/// Applies recorded numeric edits to `data`.
///
/// Fails if an edit's recorded old value does not match the document, so a
/// record can only replay against the data it was produced from.
pub fn apply_numeric_edits(data: &Value, edits: &[NumericEdit]) -> Result<Value, PerturbError> {
    let mut out = data.clone();
    let mut by_string: BTreeMap<&DataPath, Vec<&NumericEdit>> = BTreeMap::new();
    for edit in edits {
        match edit.span {
            None => {
                let node = edit
                    .path
                    .get_mut(&mut out)
                    .ok_or_else(|| PerturbError::Replay(format!("no node at {}", edit.path)))?;
                let current = match node {
                    Value::Number(n) => n.to_string(),
                    other => {
                        return Err(PerturbError::Replay(format!(
                            "expected a number at {}, found {other}",
                            edit.path
                        )))
                    }
                };
                if current != edit.old_value {
                    return Err(PerturbError::Replay(format!(
                        "number at {} is {current}, record expects {}",
                        edit.path, edit.old_value
                    )));
                }
                *node = number_value(&edit.new_value)?;
            }
            Some(_) => by_string.entry(&edit.path).or_default().push(edit),
        }
    }
    for (path, mut string_edits) in by_string {
        let node = path
            .get_mut(&mut out)
            .ok_or_else(|| PerturbError::Replay(format!("no node at {path}")))?;
        let Value::String(text) = node else {
            return Err(PerturbError::Replay(format!("expected a string at {path}")));
        };
        string_edits.sort_by_key(|e| e.span.map(|s| s.start));
        let mut rebuilt = String::with_capacity(text.len());
        let mut cursor = 0;
        for edit in string_edits {
            let span = edit.span.expect("grouped by span");
            let found = text.get(span.start..span.end);
            if span.start < cursor || found != Some(edit.old_value.as_str()) {
                return Err(PerturbError::Replay(format!(
                    "string at {path} does not contain {} at {}..{}",
                    edit.old_value, span.start, span.end
                )));
            }
            rebuilt.push_str(&text[cursor..span.start]);
            rebuilt.push_str(&edit.new_value);
            cursor = span.end;
        }
        rebuilt.push_str(&text[cursor..]);
        *text = rebuilt;
    }
    Ok(out)
}

fn number_value(text: &str) -> Result<Value, PerturbError> {
    match serde_json::from_str::<Value>(text) {
        Ok(v @ Value::Number(_)) => Ok(v),
        _ => {
            // JSON has no leading `+`; drop it for number nodes.
            let trimmed = text.strip_prefix('+').unwrap_or(text);
            match serde_json::from_str::<Value>(trimmed) {
                Ok(v @ Value::Number(_)) => Ok(v),
                _ => Err(PerturbError::Replay(format!("`{text}` is not a JSON number"))),
            }
        }
    }
}

/// Whether `new` is an admissible perturbation of `old` under the rule set.
///
/// Kept next to the implementation for use in error reporting; tests carry
/// their own independent recomputation.
pub fn within_band(old: &Decimal, new: &Decimal) -> bool {
    if old.is_zero() {
        return new == old;
    }
    if old.negative != new.negative || new.is_zero() {
        return false;
    }
    let diff = old.units.abs_diff(new.units);
    if diff == 1 {
        return true;
    }
    // Rounding to the source precision moves the value by at most half a unit.
    let lo = MIN_FRACTION * old.units as f64 - 0.5;
    let hi = MAX_FRACTION * old.units as f64 + 0.5;
    let diff = diff as f64;
    diff >= lo - 1e-9 && diff <= hi + 1e-9
}
