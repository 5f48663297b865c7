use std::path::Path;

use serde_json::{Map, Number, Value};

use super::{RawSpecDocument, SpecError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    Json,
    Yaml,
}

impl SourceFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "json" => Some(SourceFormat::Json),
            "yaml" | "yml" => Some(SourceFormat::Yaml),
            _ => None,
        }
    }
}

/// Parse YAML or JSON bytes into a document tree.
///
/// Without a hint, JSON is attempted first and YAML second. When both fail the
/// reported error comes from the parser matching the text's leading character.
pub fn parse_spec(
    source_path: &str,
    source: &[u8],
    format_hint: Option<SourceFormat>,
) -> Result<RawSpecDocument, SpecError> {
    let text = std::str::from_utf8(source).map_err(|e| SpecError::Encoding(e.to_string()))?;
    parse_spec_str(source_path, text, format_hint)
}

pub fn parse_spec_str(
    source_path: &str,
    text: &str,
    format_hint: Option<SourceFormat>,
) -> Result<RawSpecDocument, SpecError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    if text.trim().is_empty() {
        return Err(SpecError::Empty);
    }
    let body = match format_hint {
        Some(SourceFormat::Json) => parse_json(text)?,
        Some(SourceFormat::Yaml) => parse_yaml(text)?,
        None => match parse_json(text) {
            Ok(v) => v,
            Err(json_err) => match parse_yaml(text) {
                Ok(v) => v,
                Err(yaml_err) => {
                    let first = text.trim_start().chars().next();
                    return Err(if matches!(first, Some('{') | Some('[')) {
                        json_err
                    } else {
                        yaml_err
                    });
                }
            },
        },
    };
    if body.is_null() {
        return Err(SpecError::Empty);
    }
    Ok(RawSpecDocument::new(source_path, body))
}

fn parse_json(text: &str) -> Result<Value, SpecError> {
    serde_json::from_str(text).map_err(|e| SpecError::Syntax {
        format: "JSON",
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn parse_yaml(text: &str) -> Result<Value, SpecError> {
    let yaml: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| {
        let (line, column) = e
            .location()
            .map(|l| (l.line(), l.column()))
            .unwrap_or((0, 0));
        SpecError::Syntax {
            format: "YAML",
            line,
            column,
            message: e.to_string(),
        }
    })?;
    yaml_to_json(yaml)
}

// OpenAPI YAML commonly uses bare integer keys (`200:`), so mapping keys are
// stringified rather than rejected.
fn yaml_to_json(value: serde_yaml::Value) -> Result<Value, SpecError> {
    use serde_yaml::Value as Y;
    Ok(match value {
        Y::Null => Value::Null,
        Y::Bool(b) => Value::Bool(b),
        Y::Number(n) => {
            if let Some(i) = n.as_i64() {
                Value::Number(i.into())
            } else if let Some(u) = n.as_u64() {
                Value::Number(u.into())
            } else {
                let f = n.as_f64().unwrap_or(f64::NAN);
                Number::from_f64(f)
                    .map(Value::Number)
                    .unwrap_or_else(|| Value::String(f.to_string()))
            }
        }
        Y::String(s) => Value::String(s),
        Y::Sequence(items) => Value::Array(
            items
                .into_iter()
                .map(yaml_to_json)
                .collect::<Result<_, _>>()?,
        ),
        Y::Mapping(map) => {
            let mut out = Map::new();
            for (k, v) in map {
                let key = match k {
                    Y::String(s) => s,
                    Y::Number(n) => n.to_string(),
                    Y::Bool(b) => b.to_string(),
                    Y::Null => "null".to_string(),
                    other => {
                        return Err(SpecError::Invalid(format!(
                            "unsupported mapping key {other:?}"
                        )))
                    }
                };
                out.insert(key, yaml_to_json(v)?);
            }
            Value::Object(out)
        }
        Y::Tagged(tagged) => yaml_to_json(tagged.value)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_document() {
        let doc = parse_spec("m.json", br#"{"openapi":"3.0.0","paths":{}}"#, None).unwrap();
        assert_eq!(doc.body["paths"].as_object().unwrap().len(), 0);
    }

    #[test]
    fn yaml_integer_keys_become_strings() {
        let doc = parse_spec_str("r.yaml", "responses:\n  200:\n    description: ok\n", None).unwrap();
        assert_eq!(doc.body["responses"]["200"]["description"], "ok");
    }

    #[test]
    fn truncated_yaml_reports_position() {
        let text = "openapi: 3.0.0\npaths:\n  /a:\n    get: {operationId: a, responses: [";
        match parse_spec_str("t.yaml", text, None).unwrap_err() {
            SpecError::Syntax { format, line, .. } => {
                assert_eq!(format, "YAML");
                assert!(line >= 4, "line {line}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_json_reports_json_position() {
        let err = parse_spec_str("t.json", "{\n \"openapi\": \"3.0.0\",\n \"paths\": {", None).unwrap_err();
        match err {
            SpecError::Syntax { format, line, .. } => {
                assert_eq!(format, "JSON");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(parse_spec("e", b"", None).unwrap_err(), SpecError::Empty);
        assert_eq!(parse_spec("e", b"  \n", None).unwrap_err(), SpecError::Empty);
        assert_eq!(parse_spec("e", b"~\n", None).unwrap_err(), SpecError::Empty);
    }

    #[test]
    fn key_order_is_preserved() {
        let doc = parse_spec_str("o.yaml", "zeta: 1\nalpha: 2\nmid: 3\n", None).unwrap();
        let keys: Vec<_> = doc.body.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["zeta", "alpha", "mid"]);
    }
}
