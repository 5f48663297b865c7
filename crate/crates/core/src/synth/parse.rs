use serde::Serialize;
use serde_json::{Map, Value};

use super::{value_as_text, SynthError, SyntheticRecord};

const FIELDS: [&str; 6] = ["request", "api_call", "description", "method", "operation", "parameters"];

/// An object from a model reply that could not become a record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MalformedEntry {
    pub index: usize,
    pub reason: String,
    pub raw: Value,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SeedParse {
    pub records: Vec<SyntheticRecord>,
    pub malformed: Vec<MalformedEntry>,
}

/// Extract records from a generation reply.
///
/// The reply may wrap the data in prose or a fenced code block. The first
/// JSON array found is used; a run of bare comma-separated objects is also
/// accepted, as is a single object wrapping the array.
pub fn parse_seed_response(text: &str) -> Result<SeedParse, SynthError> {
    let items = extract_items(text).ok_or(SynthError::NoArrayFound)?;
    let mut out = SeedParse::default();
    for (index, raw) in items.into_iter().enumerate() {
        match record_from_value(&raw) {
            Ok(rec) => out.records.push(rec),
            Err(reason) => out.malformed.push(MalformedEntry { index, reason, raw }),
        }
    }
    Ok(out)
}

/// Extract request variations from a scaling reply.
///
/// Accepts a JSON array of strings (or of objects carrying `request`). When
/// no JSON parses, falls back to the bracketed or numbered lines of the reply.
pub fn parse_variations(text: &str) -> Result<Vec<String>, SynthError> {
    let body = strip_fences(text);
    if let Some(items) = first_array(body) {
        let out: Vec<String> = items
            .iter()
            .filter_map(|v| match v {
                Value::String(s) => Some(s.trim().to_string()),
                Value::Object(m) => m.get("request").and_then(Value::as_str).map(|s| s.trim().to_string()),
                Value::Null => None,
                other => Some(other.to_string()),
            })
            .filter(|s| !s.is_empty())
            .collect();
        return Ok(out);
    }
    let loose = loose_items(body);
    if loose.is_empty() {
        return Err(SynthError::NoArrayFound);
    }
    Ok(loose)
}

fn strip_fences(text: &str) -> &str {
    let Some(open) = text.find("```") else {
        return text;
    };
    let after = &text[open + 3..];
    // skip the info string (e.g. `json`) up to the end of the line
    let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
    let body = &after[body_start..];
    match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    }
}

/// Parse one JSON value at the start of `s`, returning it and the bytes consumed.
fn value_at(s: &str) -> Option<(Value, usize)> {
    let mut stream = serde_json::Deserializer::from_str(s).into_iter::<Value>();
    match stream.next() {
        Some(Ok(v)) => Some((v, stream.byte_offset())),
        _ => None,
    }
}

fn first_array(body: &str) -> Option<Vec<Value>> {
    body.char_indices()
        .filter(|(_, c)| *c == '[')
        .find_map(|(i, _)| match value_at(&body[i..]) {
            Some((Value::Array(items), _)) => Some(items),
            _ => None,
        })
}

fn extract_items(text: &str) -> Option<Vec<Value>> {
    let body = strip_fences(text);
    for (i, c) in body.char_indices() {
        match c {
            '[' => {
                if let Some((Value::Array(items), _)) = value_at(&body[i..]) {
                    return Some(items);
                }
            }
            '{' => {
                let objects = object_run(&body[i..]);
                if objects.is_empty() {
                    continue;
                }
                if objects.len() == 1 {
                    if let Some(inner) = wrapped_array(&objects[0]) {
                        return Some(inner);
                    }
                }
                return Some(objects);
            }
            _ => {}
        }
    }
    None
}

/// Consecutive JSON objects separated by optional commas.
fn object_run(s: &str) -> Vec<Value> {
    let mut out = Vec::new();
    let mut rest = s;
    while let Some((v @ Value::Object(_), used)) = value_at(rest) {
        out.push(v);
        rest = rest[used..].trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
        if !rest.starts_with('{') {
            break;
        }
    }
    out
}

/// `{"records": [ {...}, ... ]}` style wrappers around the real array.
fn wrapped_array(v: &Value) -> Option<Vec<Value>> {
    let m = v.as_object()?;
    if m.contains_key("request") {
        return None;
    }
    m.values().find_map(|field| match field {
        Value::Array(items) if items.iter().any(Value::is_object) => Some(items.clone()),
        _ => None,
    })
}

fn record_from_value(v: &Value) -> Result<SyntheticRecord, String> {
    let m = v.as_object().ok_or_else(|| "entry is not a JSON object".to_string())?;
    let missing: Vec<&str> = FIELDS.iter().copied().filter(|f| !m.contains_key(*f)).collect();
    if !missing.is_empty() {
        return Err(format!("missing field(s): {}", missing.join(", ")));
    }
    let text = |m: &Map<String, Value>, k: &str| -> Result<String, String> {
        match &m[k] {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err(format!("field `{k}` is not text")),
        }
    };
    let parameters = match &m["parameters"] {
        Value::Object(p) => p.iter().map(|(k, v)| (k.clone(), value_as_text(v))).collect(),
        Value::Null => Default::default(),
        _ => return Err("field `parameters` is not an object".to_string()),
    };
    let rec = SyntheticRecord {
        request: text(m, "request")?,
        api_call: text(m, "api_call")?.trim().to_string(),
        description: text(m, "description")?,
        method: text(m, "method")?.trim().to_ascii_lowercase(),
        operation: text(m, "operation")?.trim().to_string(),
        parameters,
    };
    match rec.shape_problems().first() {
        Some(p) => Err(p.clone()),
        None => Ok(rec),
    }
}

/// Bracketed or line-per-item lists that are not valid JSON.
fn loose_items(body: &str) -> Vec<String> {
    let inner = match (body.find('['), body.rfind(']')) {
        (Some(a), Some(b)) if a < b => &body[a + 1..b],
        _ => body,
    };
    let pieces: Vec<&str> = if inner.contains('\n') {
        inner.lines().collect()
    } else {
        inner.split(',').collect()
    };
    pieces
        .into_iter()
        .map(clean_item)
        .filter(|s| !s.is_empty())
        .collect()
}

fn clean_item(raw: &str) -> String {
    let mut s = raw.trim().trim_end_matches(',').trim();
    // numbering like "12." / "3)" / "- "
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && matches!(s.as_bytes().get(digits), Some(b'.') | Some(b')')) {
        s = s[digits + 1..].trim_start();
    }
    s = s.strip_prefix("- ").unwrap_or(s);
    s.trim_matches(|c| c == '"' || c == '\'').trim().to_string()
}
