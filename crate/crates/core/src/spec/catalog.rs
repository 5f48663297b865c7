use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ApiSpec, EndpointDef};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub path: String,
    pub method: String,
    pub operation_id: String,
}

/// Standard-verb endpoints ordered by path, then method name.
pub fn endpoint_catalog(spec: &ApiSpec) -> Vec<CatalogEntry> {
    let mut entries: Vec<CatalogEntry> = spec
        .endpoints
        .iter()
        .filter(|e| e.method.is_standard())
        .map(|e| CatalogEntry {
            path: e.path.clone(),
            method: e.method.as_str().to_string(),
            operation_id: e.operation_id.clone(),
        })
        .collect();
    entries.sort();
    entries
}

/// Find the endpoint serving `method` on `path`.
///
/// A literal path match wins. Otherwise `{name}` segments in endpoint paths
/// each match one non-empty segment; among several template matches the one
/// with the most literal segments is chosen.
pub fn lookup_endpoint<'a>(spec: &'a ApiSpec, path: &str, method: &str) -> Option<&'a EndpointDef> {
    let method = method.trim().to_ascii_lowercase();
    let candidates = || spec.endpoints.iter().filter(|e| e.method.as_str() == method);

    if let Some(e) = candidates().find(|e| e.path == path) {
        return Some(e);
    }
    candidates()
        .filter(|e| match_template(&e.path, path).is_some())
        .max_by(|a, b| {
            literal_segments(&a.path)
                .cmp(&literal_segments(&b.path))
                // max_by keeps the last maximum; reverse the path order so the
                // lexicographically smaller path wins ties.
                .then_with(|| b.path.cmp(&a.path))
        })
}

/// Unify a templated path with a concrete one, returning placeholder bindings.
pub fn match_template(template: &str, concrete: &str) -> Option<IndexMap<String, String>> {
    let t: Vec<&str> = template.split('/').collect();
    let c: Vec<&str> = concrete.split('/').collect();
    if t.len() != c.len() {
        return None;
    }
    let mut bindings = IndexMap::new();
    for (ts, cs) in t.iter().zip(&c) {
        match placeholder_name(ts) {
            Some(name) => {
                if cs.is_empty() {
                    return None;
                }
                bindings.insert(name.to_string(), cs.to_string());
            }
            None if ts == cs => {}
            None => return None,
        }
    }
    Some(bindings)
}

/// Names of the `{placeholder}` segments of a path template, in order.
pub fn path_placeholders(path: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = path;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) => {
                out.push(after[..end].to_string());
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    out
}

fn placeholder_name(segment: &str) -> Option<&str> {
    segment
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .filter(|s| !s.is_empty() && !s.contains(['{', '}']))
}

fn literal_segments(path: &str) -> usize {
    path.split('/').filter(|s| placeholder_name(s).is_none()).count()
}
