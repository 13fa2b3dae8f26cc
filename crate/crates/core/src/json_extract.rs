//! Lenient recovery of a JSON object from free-form model output.

use serde_json::{Map, Value};

/// Returns the first balanced `{…}` region of `raw` that parses as a JSON
/// object. Code fences and surrounding prose are ignored.
pub fn extract_object(raw: &str) -> Option<Map<String, Value>> {
    let text = strip_fences(raw);
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(rel) = text[from..].find('{') {
        let start = from + rel;
        if let Some(end) = balanced_end(bytes, start) {
            if let Ok(Value::Object(map)) = serde_json::from_str(&text[start..=end]) {
                return Some(map);
            }
        }
        from = start + 1;
    }
    None
}

fn strip_fences(raw: &str) -> &str {
    let mut t = raw.trim();
    if let Some(rest) = t.strip_prefix("```") {
        // Drop the info string (e.g. `json`) on the opening fence line.
        t = rest.split_once('\n').map_or("", |(_, body)| body);
    }
    if let Some(body) = t.trim_end().strip_suffix("```") {
        t = body;
    }
    t
}

/// Index of the `}` closing the object opened at `start`, honoring strings.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
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

    #[test]
    fn plain_fenced_and_embedded() {
        assert_eq!(extract_object(r#"{"a":1}"#).unwrap()["a"], 1);
        assert_eq!(extract_object("```json\n{\"a\":2}\n```").unwrap()["a"], 2);
        assert_eq!(extract_object("Sure! Here you go: {\"a\":{\"b\":\"}\"}} hope it helps").unwrap()["a"]["b"], "}");
        assert_eq!(extract_object("{not json} then {\"a\":3}").unwrap()["a"], 3);
    }

    #[test]
    fn nothing_to_extract() {
        for raw in ["", "handler=find", "{\"a\":", "[1,2]", "```\n```", "}{"] {
            assert!(extract_object(raw).is_none(), "{raw}");
        }
    }
}
