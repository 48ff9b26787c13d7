//! Locating JSON objects inside free-form model output.

use serde_json::{Map, Value};

/// Every top-level JSON object embedded in `text`, in order of appearance.
///
/// Handles the usual noise around a structured answer: leading prose,
/// markdown fences, trailing remarks.
pub fn json_objects(text: &str) -> Vec<Map<String, Value>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(offset) = text[pos..].find('{') {
        let start = pos + offset;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => {
                pos = start + stream.byte_offset();
                out.push(map);
            }
            _ => pos = start + 1,
        }
    }
    out
}

/// Collapse runs of whitespace to single spaces and trim.
pub fn squash_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
