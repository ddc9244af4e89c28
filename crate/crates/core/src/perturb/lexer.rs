//! Decimal-literal scanning over structured task data.

use serde_json::Value;

use crate::domain::{DataPath, Span};

/// A decimal literal in source form: `[sign] digits [. digits] [exponent]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decimal {
    pub negative: bool,
    /// Whether the source spelled out a leading `+`.
    pub explicit_plus: bool,
    /// Absolute value scaled by `10^scale`.
    pub units: u128,
    /// Fractional digits in the source form.
    pub scale: u32,
    pub has_point: bool,
    /// Exponent suffix kept verbatim (`e-3`), empty if absent.
    pub exponent: String,
}

impl Decimal {
    pub fn parse(text: &str) -> Option<Decimal> {
        let (negative, explicit_plus, rest) = match text.as_bytes().first()? {
            b'-' => (true, false, &text[1..]),
            b'+' => (false, true, &text[1..]),
            _ => (false, false, text),
        };
        let (mantissa, exponent) = match rest.find(['e', 'E']) {
            Some(pos) => (&rest[..pos], rest[pos..].to_string()),
            None => (rest, String::new()),
        };
        let (int_part, frac_part, has_point) = match mantissa.split_once('.') {
            Some((i, f)) => (i, f, true),
            None => (mantissa, "", false),
        };
        if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        if has_point && (frac_part.is_empty() || !frac_part.bytes().all(|b| b.is_ascii_digit())) {
            return None;
        }
        let units: u128 = format!("{int_part}{frac_part}").parse().ok()?;
        Some(Decimal {
            negative,
            explicit_plus,
            units,
            scale: frac_part.len() as u32,
            has_point,
            exponent,
        })
    }

    pub fn is_zero(&self) -> bool {
        self.units == 0
    }

    pub fn to_f64(&self) -> f64 {
        let text = self.render();
        text.parse().unwrap_or(f64::NAN)
    }

    /// Same literal with different units, formatted at the source precision.
    pub fn with_units(&self, units: u128) -> Decimal {
        Decimal {
            units,
            ..self.clone()
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if self.negative {
            out.push('-');
        } else if self.explicit_plus {
            out.push('+');
        }
        let digits = self.units.to_string();
        if self.scale == 0 {
            out.push_str(&digits);
        } else {
            let scale = self.scale as usize;
            let padded = format!("{digits:0>width$}", width = scale + 1);
            let (int_part, frac_part) = padded.split_at(padded.len() - scale);
            out.push_str(int_part);
            out.push('.');
            out.push_str(frac_part);
        }
        out.push_str(&self.exponent);
        out
    }
}

/// A numeric value found in task data.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericLiteral {
    pub path: DataPath,
    /// Position inside a string leaf; `None` for number nodes.
    pub span: Option<Span>,
    pub text: String,
    pub value: Decimal,
    pub precision: u32,
    pub is_integer: bool,
}

impl NumericLiteral {
    fn new(path: DataPath, span: Option<Span>, text: &str) -> Option<NumericLiteral> {
        let value = Decimal::parse(text)?;
        Some(NumericLiteral {
            path,
            span,
            text: text.to_string(),
            precision: value.scale,
            is_integer: value.scale == 0 && !value.has_point,
            value,
        })
    }
}

/// Every number node in `data` plus every numeral embedded in string leaves,
/// in deterministic document order (object keys sorted).
pub fn scan_numeric_literals(data: &Value) -> Vec<NumericLiteral> {
    let mut out = Vec::new();
    walk(data, DataPath::root(), &mut out);
    out
}

fn walk(node: &Value, path: DataPath, out: &mut Vec<NumericLiteral>) {
    match node {
        Value::Number(n) => {
            if let Some(lit) = NumericLiteral::new(path, None, &n.to_string()) {
                out.push(lit);
            }
        }
        Value::String(s) => {
            for span in scan_text(s) {
                if let Some(lit) = NumericLiteral::new(path.clone(), Some(span), &s[span.start..span.end]) {
                    out.push(lit);
                }
            }
        }
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                walk(item, path.index(i), out);
            }
        }
        Value::Object(map) => {
            for (k, v) in map {
                walk(v, path.key(k), out);
            }
        }
        Value::Null | Value::Bool(_) => {}
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b >= 0x80
}

/// Characters after which a `+`/`-` reads as a sign rather than an operator.
fn opens_signed(b: u8) -> bool {
    b.is_ascii_whitespace() || matches!(b, b'(' | b'[' | b'{' | b'=' | b',' | b':' | b';')
}

const ORDINAL_SUFFIXES: [&str; 4] = ["st", "nd", "rd", "th"];

/// Byte spans of standalone decimal literals in free text.
///
/// Numerals glued to a preceding word character (`H2O`, `CO2`, `x1`) belong
/// to identifiers and are skipped, as are dotted sequences (`1.2.3`) and
/// ordinals (`2nd`). Trailing unit letters (`230V`) do not disqualify.
pub fn scan_text(text: &str) -> Vec<Span> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let digits_start = i;
        let mut end = i;
        while end < bytes.len() && bytes[end].is_ascii_digit() {
            end += 1;
        }
        let mut dotted_groups = 0;
        while end + 1 < bytes.len() && bytes[end] == b'.' && bytes[end + 1].is_ascii_digit() {
            end += 1;
            while end < bytes.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
            dotted_groups += 1;
        }
        i = end;

        let prev = digits_start.checked_sub(1).map(|p| bytes[p]);
        if matches!(prev, Some(b) if is_word_byte(b) || b == b'.') {
            continue;
        }
        if dotted_groups > 1 {
            continue;
        }
        let rest = &text[end..];
        let is_ordinal = ORDINAL_SUFFIXES.iter().any(|suf| {
            rest.len() >= suf.len()
                && rest[..suf.len()].eq_ignore_ascii_case(suf)
                && !rest.as_bytes().get(suf.len()).is_some_and(|&b| is_word_byte(b))
        });
        if is_ordinal {
            continue;
        }
        let mut start = digits_start;
        if let Some(b'+' | b'-') = prev {
            let before_sign = digits_start.checked_sub(2).map(|p| bytes[p]);
            if before_sign.is_none_or(opens_signed) {
                start = digits_start - 1;
            }
        }
        spans.push(Span { start, end });
    }
    spans
}
