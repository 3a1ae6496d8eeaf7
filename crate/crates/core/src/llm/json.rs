//! Recovering a JSON value from free-form model output.
//!
//! Repairs are bounded: strip Markdown fences, skip prose around the value,
//! drop trailing commas. Anything else is a parse failure.

use serde_json::Value;

#[derive(Debug, thiserror::Error)]
#[error("no recoverable JSON payload in model output")]
pub struct JsonPayloadError {
    pub raw: String,
}

pub fn parse_json_payload(raw: &str) -> Result<Value, JsonPayloadError> {
    let trimmed = raw.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Ok(v);
    }
    if let Some(inner) = fenced_block(trimmed) {
        if let Some(v) = extract_value(inner) {
            return Ok(v);
        }
    }
    extract_value(trimmed).ok_or_else(|| JsonPayloadError { raw: raw.to_string() })
}

/// Contents of the first ``` fenced block, without the info string.
fn fenced_block(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let close = body.find("```").unwrap_or(body.len());
    Some(&body[..close])
}

/// Try every `[` / `{` and return the longest balanced segment that parses,
/// so a bracketed aside in prose does not shadow the real payload.
fn extract_value(text: &str) -> Option<Value> {
    let mut best: Option<(usize, Value)> = None;
    for (start, c) in text.char_indices() {
        if c != '[' && c != '{' {
            continue;
        }
        let Some(end) = balanced_end(text, start) else { continue };
        if best.as_ref().is_some_and(|(len, _)| *len >= end - start) {
            continue;
        }
        let candidate = &text[start..end];
        let parsed =
            serde_json::from_str(candidate).or_else(|_| serde_json::from_str(&strip_trailing_commas(candidate)));
        if let Ok(v) = parsed {
            best = Some((end - start, v));
        }
    }
    best.map(|(_, v)| v)
}

/// Byte offset one past the bracket closing the one at `start`.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut stack = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '[' | '{' => stack.push(c),
            ']' | '}' => {
                let open = stack.pop()?;
                if (open == '[') != (c == ']') {
                    return None;
                }
                if stack.is_empty() {
                    return Some(start + i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn strip_trailing_commas(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            out.push(c);
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_string = false,
                _ => {}
            }
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|ch| !ch.is_whitespace());
            if matches!(next, Some(']') | Some('}')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn strips_fences() {
        let v = parse_json_payload("```json\n[{\"fact\":\"A.\"}]\n```").unwrap();
        assert_eq!(v, json!([{"fact": "A."}]));
    }

    #[test]
    fn skips_prose_prefix() {
        assert_eq!(parse_json_payload("Sure! [1,2,3]").unwrap(), json!([1, 2, 3]));
    }

    #[test]
    fn repairs_trailing_comma() {
        assert_eq!(parse_json_payload("[{\"a\":1,}]").unwrap(), json!([{"a": 1}]));
        // commas inside strings are untouched
        assert_eq!(parse_json_payload("[\"x,]\",]").unwrap(), json!(["x,]"]));
    }

    #[test]
    fn skips_bracketed_reasoning() {
        let raw = "The token [1972] conflicts with the page.\nFinal: [{\"id\":0,\"word\":\"a\",\"prediction\":0.5}]";
        assert_eq!(parse_json_payload(raw).unwrap(), json!([{"id": 0, "word": "a", "prediction": 0.5}]));
    }

    #[test]
    fn refuses_garbage() {
        let err = parse_json_payload("no json here {oops").unwrap_err();
        assert!(err.raw.contains("oops"));
    }

    fn json_value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::Bool),
            any::<i64>().prop_map(|i| json!(i)),
            (-1e6f64..1e6).prop_map(|f| json!(f)),
            "[a-zA-Z0-9 ,\\[\\]{}\"\\\\é]{0,12}".prop_map(Value::String),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                proptest::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
                proptest::collection::btree_map("[a-z]{1,5}", inner, 0..4)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        })
    }

    proptest! {
        #[test]
        fn serialized_values_round_trip(v in json_value()) {
            let text = serde_json::to_string(&v).unwrap();
            prop_assert_eq!(parse_json_payload(&text).unwrap(), v);
        }
    }
}
