use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;
use serde_json::{Map, Value};

use super::catalog::path_placeholders;
use super::{
    ApiSpec, BodyEncoding, EndpointDef, HttpMethod, ParamLocation, ParameterDef, RawSpecDocument,
    SpecError,
};

pub const REF_KEY: &str = "$ref";

/// Inline every local (`#/...`) and cross-file (`other.yaml#/...`) reference
/// and build the endpoint model from the resulting self-contained tree.
///
/// Shared targets are duplicated at each use site. Cycles are a hard error.
pub fn flatten<R>(root: &RawSpecDocument, resolver: R) -> Result<ApiSpec, SpecError>
where
    R: FnMut(&str) -> Option<RawSpecDocument>,
{
    let mut flattener = Flattener {
        resolver,
        documents: HashMap::new(),
        stack: Vec::new(),
        memo: HashMap::new(),
    };
    let root_id = normalize_file_id(&root.source_path);
    flattener.documents.insert(root_id.clone(), root.body.clone());
    let body = flattener.expand(&root.body, &root_id)?;
    build_spec(body)
}

struct Flattener<R> {
    resolver: R,
    documents: HashMap<String, Value>,
    stack: Vec<String>,
    memo: HashMap<String, Value>,
}

impl<R> Flattener<R>
where
    R: FnMut(&str) -> Option<RawSpecDocument>,
{
    fn expand(&mut self, node: &Value, base: &str) -> Result<Value, SpecError> {
        match node {
            Value::Object(map) => {
                if let Some(Value::String(reference)) = map.get(REF_KEY) {
                    return self.expand_reference(reference, map, base);
                }
                let mut out = Map::with_capacity(map.len());
                for (k, v) in map {
                    out.insert(k.clone(), self.expand(v, base)?);
                }
                Ok(Value::Object(out))
            }
            Value::Array(items) => Ok(Value::Array(
                items
                    .iter()
                    .map(|v| self.expand(v, base))
                    .collect::<Result<_, _>>()?,
            )),
            scalar => Ok(scalar.clone()),
        }
    }

    fn expand_reference(
        &mut self,
        reference: &str,
        node: &Map<String, Value>,
        base: &str,
    ) -> Result<Value, SpecError> {
        let (file, pointer) = split_reference(reference, base);
        let key = format!("{file}#{pointer}");

        let mut target = if let Some(done) = self.memo.get(&key) {
            done.clone()
        } else {
            if let Some(pos) = self.stack.iter().position(|k| *k == key) {
                let mut cycle = self.stack[pos..].to_vec();
                cycle.push(key);
                return Err(SpecError::ReferenceCycle { cycle });
            }
            let raw = self.lookup(&file, &pointer, reference)?;
            if !(raw.is_object() || raw.is_array()) {
                return Err(SpecError::NotATreeNode {
                    reference: reference.to_string(),
                });
            }
            self.stack.push(key.clone());
            let expanded = self.expand(&raw, &file);
            self.stack.pop();
            let expanded = expanded?;
            self.memo.insert(key, expanded.clone());
            expanded
        };

        // Sibling keys next to `$ref` (allowed in 3.1) override the target's.
        if node.len() > 1 {
            if let Value::Object(target_map) = &mut target {
                for (k, v) in node.iter().filter(|(k, _)| k.as_str() != REF_KEY) {
                    target_map.insert(k.clone(), self.expand(v, base)?);
                }
            }
        }
        Ok(target)
    }

    fn lookup(&mut self, file: &str, pointer: &str, reference: &str) -> Result<Value, SpecError> {
        if !self.documents.contains_key(file) {
            let doc = (self.resolver)(file).ok_or_else(|| SpecError::UnresolvedReference {
                reference: reference.to_string(),
            })?;
            self.documents.insert(file.to_string(), doc.body);
        }
        let doc = &self.documents[file];
        doc.pointer(pointer)
            .cloned()
            .ok_or_else(|| SpecError::UnresolvedReference {
                reference: reference.to_string(),
            })
    }
}

fn split_reference(reference: &str, base: &str) -> (String, String) {
    let (file_part, pointer) = match reference.split_once('#') {
        Some((f, p)) => (f, p.to_string()),
        None => (reference, String::new()),
    };
    let file = if file_part.is_empty() {
        base.to_string()
    } else {
        let dir = match base.rfind('/') {
            Some(i) => &base[..=i],
            None => "",
        };
        normalize_file_id(&format!("{dir}{file_part}"))
    };
    (file, pointer)
}

fn normalize_file_id(id: &str) -> String {
    let mut parts: Vec<&str> = Vec::new();
    for seg in id.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                if matches!(parts.last(), Some(p) if *p != "..") {
                    parts.pop();
                } else {
                    parts.push("..");
                }
            }
            s => parts.push(s),
        }
    }
    parts.join("/")
}

fn build_spec(document: Value) -> Result<ApiSpec, SpecError> {
    let root = document
        .as_object()
        .ok_or_else(|| SpecError::Invalid("top level must be a mapping".into()))?;

    match root.get("openapi").and_then(Value::as_str) {
        Some(v) if v.starts_with("3.0") || v.starts_with("3.1") => {}
        Some(v) => return Err(SpecError::Invalid(format!("unsupported OpenAPI version {v}"))),
        None => return Err(SpecError::Invalid("missing `openapi` version field".into())),
    }

    let info = root.get("info");
    let text_at = |v: Option<&Value>, key: &str| {
        v.and_then(|i| i.get(key))
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string()
    };
    let title = text_at(info, "title");
    let version = text_at(info, "version");

    let components_root = root.get("components");
    let components: IndexMap<String, Value> = components_root
        .and_then(|c| c.get("schemas"))
        .and_then(Value::as_object)
        .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
        .unwrap_or_default();

    let token_url = components_root
        .and_then(|c| c.get("securitySchemes"))
        .and_then(Value::as_object)
        .and_then(|schemes| {
            schemes.values().find_map(|s| {
                s.pointer("/flows/password/tokenUrl")
                    .and_then(Value::as_str)
                    .map(|u| {
                        if u.starts_with('/') {
                            u.to_string()
                        } else {
                            format!("/{u}")
                        }
                    })
            })
        });

    let global_security = root.get("security");
    let mut endpoints = Vec::new();
    let mut operation_ids = HashSet::new();

    if let Some(paths) = root.get("paths") {
        let paths = paths
            .as_object()
            .ok_or_else(|| SpecError::Invalid("`paths` must be a mapping".into()))?;
        for (path, item) in paths {
            if !path.starts_with('/') {
                return Err(SpecError::Invalid(format!("path `{path}` must begin with `/`")));
            }
            let item = item
                .as_object()
                .ok_or_else(|| SpecError::Invalid(format!("path item `{path}` must be a mapping")))?;
            let shared_params = item.get("parameters");
            for method in HttpMethod::ALL {
                let Some(op) = item.get(method.as_str()) else {
                    continue;
                };
                let endpoint = build_endpoint(path, method, op, shared_params, global_security)?;
                if !operation_ids.insert(endpoint.operation_id.clone()) {
                    return Err(SpecError::Invalid(format!(
                        "duplicate operation id `{}`",
                        endpoint.operation_id
                    )));
                }
                endpoints.push(endpoint);
            }
        }
    }

    Ok(ApiSpec {
        title,
        version,
        endpoints,
        components,
        token_url,
        document,
    })
}

fn build_endpoint(
    path: &str,
    method: HttpMethod,
    op: &Value,
    shared_params: Option<&Value>,
    global_security: Option<&Value>,
) -> Result<EndpointDef, SpecError> {
    let where_ = || format!("{} {path}", method.as_str());
    let op = op
        .as_object()
        .ok_or_else(|| SpecError::Invalid(format!("operation {} must be a mapping", where_())))?;

    let operation_id = op
        .get("operationId")
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| synthesize_operation_id(path, method));
    let description = op
        .get("description")
        .or_else(|| op.get("summary"))
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();

    // Operation-level parameters override path-level ones with the same (name, in).
    let mut params: IndexMap<(String, String), ParameterDef> = IndexMap::new();
    for list in [shared_params, op.get("parameters")].into_iter().flatten() {
        let list = list
            .as_array()
            .ok_or_else(|| SpecError::Invalid(format!("parameters of {} must be a list", where_())))?;
        for p in list {
            let name = p.get("name").and_then(Value::as_str).ok_or_else(|| {
                SpecError::Invalid(format!("parameter without name in {}", where_()))
            })?;
            let location_text = p.get("in").and_then(Value::as_str).unwrap_or("query");
            let location = match location_text {
                "path" => ParamLocation::Path,
                "query" => ParamLocation::Query,
                "header" => ParamLocation::Header,
                "cookie" => ParamLocation::Cookie,
                other => {
                    return Err(SpecError::Invalid(format!(
                        "parameter `{name}` in {} has unknown location `{other}`",
                        where_()
                    )))
                }
            };
            let required = location == ParamLocation::Path
                || p.get("required").and_then(Value::as_bool).unwrap_or(false);
            let value_type = p
                .get("schema")
                .map(primitive_type)
                .unwrap_or_else(|| "string".to_string());
            params.insert(
                (name.to_string(), location_text.to_string()),
                ParameterDef {
                    name: name.to_string(),
                    location,
                    required,
                    value_type,
                },
            );
        }
    }
    let mut parameters: Vec<ParameterDef> = params.into_values().collect();

    let (request_body_schema, body_encoding) = match op.get("requestBody") {
        Some(body) => {
            let body_required = body.get("required").and_then(Value::as_bool).unwrap_or(false);
            let content = body.get("content").and_then(Value::as_object);
            let picked = content.and_then(|c| {
                c.iter().find_map(|(media, m)| {
                    let enc = if media.contains("json") {
                        BodyEncoding::Json
                    } else if media.contains("x-www-form-urlencoded") || media.contains("multipart") {
                        BodyEncoding::Form
                    } else {
                        return None;
                    };
                    Some((m.get("schema").cloned().unwrap_or(Value::Null), enc))
                })
            });
            match picked {
                Some((schema, enc)) => {
                    let required_fields: HashSet<&str> = schema
                        .get("required")
                        .and_then(Value::as_array)
                        .map(|r| r.iter().filter_map(Value::as_str).collect())
                        .unwrap_or_default();
                    if let Some(props) = schema.get("properties").and_then(Value::as_object) {
                        for (name, prop) in props {
                            parameters.push(ParameterDef {
                                name: name.clone(),
                                location: ParamLocation::BodyField,
                                required: body_required && required_fields.contains(name.as_str()),
                                value_type: primitive_type(prop),
                            });
                        }
                    }
                    (Some(schema), Some(enc))
                }
                None => (None, None),
            }
        }
        None => (None, None),
    };

    let mut seen = HashSet::new();
    for p in &parameters {
        if !seen.insert(p.name.as_str()) {
            return Err(SpecError::Invalid(format!(
                "parameter name `{}` declared twice in {}",
                p.name,
                where_()
            )));
        }
    }

    let placeholders: HashSet<String> = path_placeholders(path).into_iter().collect();
    let declared: HashSet<String> = parameters
        .iter()
        .filter(|p| p.location == ParamLocation::Path)
        .map(|p| p.name.clone())
        .collect();
    if placeholders != declared {
        return Err(SpecError::Invalid(format!(
            "path placeholders {:?} do not match path parameters {:?} in {}",
            sorted(&placeholders),
            sorted(&declared),
            where_()
        )));
    }

    let (success_status, response_schema) = success_response(op);

    let security = op.get("security").or(global_security);
    let requires_auth = match security.and_then(Value::as_array) {
        Some(reqs) => !reqs.is_empty() && !reqs.iter().any(|r| r.as_object().is_some_and(|m| m.is_empty())),
        None => false,
    };

    Ok(EndpointDef {
        path: path.to_string(),
        method,
        operation_id,
        description,
        parameters,
        request_body_schema,
        body_encoding,
        success_status,
        response_schema,
        requires_auth,
    })
}

fn success_response(op: &Map<String, Value>) -> (u16, Option<Value>) {
    let Some(responses) = op.get("responses").and_then(Value::as_object) else {
        return (200, None);
    };
    let mut codes: Vec<(u16, &Value)> = responses
        .iter()
        .filter_map(|(code, r)| code.parse::<u16>().ok().map(|c| (c, r)))
        .filter(|(c, _)| (200..300).contains(c))
        .collect();
    codes.sort_by_key(|(c, _)| *c);
    match codes.first() {
        Some((code, resp)) => {
            let schema = resp
                .get("content")
                .and_then(Value::as_object)
                .and_then(|c| {
                    c.iter()
                        .find(|(media, _)| media.contains("json"))
                        .and_then(|(_, m)| m.get("schema").cloned())
                });
            (*code, schema)
        }
        None => (200, None),
    }
}

fn primitive_type(schema: &Value) -> String {
    match schema.get("type") {
        Some(Value::String(t)) => t.clone(),
        // 3.1 allows a list of types; the first non-null one is the primitive.
        Some(Value::Array(ts)) => ts
            .iter()
            .filter_map(Value::as_str)
            .find(|t| *t != "null")
            .unwrap_or("string")
            .to_string(),
        _ if schema.get("properties").is_some() => "object".into(),
        _ if schema.get("items").is_some() => "array".into(),
        _ => "string".into(),
    }
}

fn synthesize_operation_id(path: &str, method: HttpMethod) -> String {
    let body: String = path
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("{}{}", body.trim_matches('_'), format_args!("_{}", method.as_str()))
}

fn sorted(set: &HashSet<String>) -> Vec<&String> {
    let mut v: Vec<_> = set.iter().collect();
    v.sort();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::parse_spec_str;
    use serde_json::json;

    fn doc(id: &str, body: Value) -> RawSpecDocument {
        RawSpecDocument::new(id, body)
    }

    fn no_siblings(_: &str) -> Option<RawSpecDocument> {
        None
    }

    fn count_refs(v: &Value) -> usize {
        match v {
            Value::Object(m) => {
                usize::from(m.contains_key(REF_KEY)) + m.values().map(count_refs).sum::<usize>()
            }
            Value::Array(a) => a.iter().map(count_refs).sum(),
            _ => 0,
        }
    }

    #[test]
    fn single_local_reference_is_inlined() {
        let root = doc(
            "api.json",
            json!({
                "openapi": "3.0.3",
                "paths": {"/token": {"get": {
                    "operationId": "get_token",
                    "responses": {"200": {"description": "ok", "content": {"application/json": {
                        "schema": {"$ref": "#/components/schemas/Token"}}}}}
                }}},
                "components": {"schemas": {"Token": {"type": "object", "properties": {"access_token": {"type": "string"}}}}}
            }),
        );
        let spec = flatten(&root, no_siblings).unwrap();
        assert_eq!(count_refs(spec.document()), 0);
        let ep = &spec.endpoints[0];
        assert_eq!(
            ep.response_schema.as_ref().unwrap()["properties"]["access_token"]["type"],
            "string"
        );
    }

    #[test]
    fn missing_target_is_named() {
        let root = doc(
            "api.json",
            json!({"openapi": "3.0.0", "paths": {}, "x": {"$ref": "#/components/schemas/Nope"}}),
        );
        assert_eq!(
            flatten(&root, no_siblings).unwrap_err(),
            SpecError::UnresolvedReference {
                reference: "#/components/schemas/Nope".into()
            }
        );
        let root = doc("api.json", json!({"openapi": "3.0.0", "x": {"$ref": "other.yaml#/A"}}));
        assert!(matches!(
            flatten(&root, no_siblings).unwrap_err(),
            SpecError::UnresolvedReference { reference } if reference == "other.yaml#/A"
        ));
    }

    #[test]
    fn scalar_target_is_rejected() {
        let root = doc("api.json", json!({"openapi": "3.0.0", "v": 3, "x": {"$ref": "#/v"}}));
        assert!(matches!(
            flatten(&root, no_siblings).unwrap_err(),
            SpecError::NotATreeNode { .. }
        ));
    }

    #[test]
    fn self_cycle_in_one_file() {
        let root = doc(
            "api.json",
            json!({"openapi": "3.1.0", "components": {"schemas": {
                "Tree": {"type": "object", "properties": {"child": {"$ref": "#/components/schemas/Tree"}}}
            }}}),
        );
        match flatten(&root, no_siblings).unwrap_err() {
            SpecError::ReferenceCycle { cycle } => {
                assert_eq!(cycle.len(), 2);
                assert_eq!(cycle[0], "api.json#/components/schemas/Tree");
                assert_eq!(cycle[0], cycle[1]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shared_target_is_duplicated_not_cycled() {
        let root = doc(
            "api.json",
            json!({"openapi": "3.0.0",
                "a": {"$ref": "#/components/schemas/S"},
                "b": {"$ref": "#/components/schemas/S"},
                "components": {"schemas": {"S": {"type": "string"}}}}),
        );
        let spec = flatten(&root, no_siblings).unwrap();
        assert_eq!(spec.document()["a"], spec.document()["b"]);
    }

    #[test]
    fn ref_siblings_override_target() {
        let root = doc(
            "api.json",
            json!({"openapi": "3.1.0",
                "a": {"$ref": "#/components/schemas/S", "description": "local"},
                "components": {"schemas": {"S": {"type": "string", "description": "shared"}}}}),
        );
        let spec = flatten(&root, no_siblings).unwrap();
        assert_eq!(spec.document()["a"]["description"], "local");
        assert_eq!(spec.document()["a"]["type"], "string");
    }

    #[test]
    fn relative_file_ids() {
        assert_eq!(split_reference("b.yaml#/x", "dir/a.yaml"), ("dir/b.yaml".into(), "/x".into()));
        assert_eq!(split_reference("../b.yaml", "dir/a.yaml"), ("b.yaml".into(), "".into()));
        assert_eq!(split_reference("#/y", "a.yaml"), ("a.yaml".into(), "/y".into()));
    }

    #[test]
    fn placeholder_without_parameter_is_invalid() {
        let root = parse_spec_str(
            "p.yaml",
            "openapi: 3.0.0\npaths:\n  /items/{id}:\n    get:\n      operationId: g\n      responses: {}\n",
            None,
        )
        .unwrap();
        assert!(matches!(flatten(&root, no_siblings).unwrap_err(), SpecError::Invalid(_)));
    }

    #[test]
    fn duplicate_operation_ids_are_invalid() {
        let root = doc(
            "d.json",
            json!({"openapi": "3.0.0", "paths": {
                "/a": {"get": {"operationId": "same"}},
                "/b": {"get": {"operationId": "same"}}}}),
        );
        assert!(matches!(flatten(&root, no_siblings).unwrap_err(), SpecError::Invalid(_)));
    }

    #[test]
    fn rejects_swagger_two() {
        let root = doc("s.json", json!({"swagger": "2.0", "paths": {}}));
        assert!(flatten(&root, no_siblings).is_err());
    }

    #[test]
    fn empty_security_list_means_public() {
        let root = doc(
            "s.json",
            json!({"openapi": "3.0.0", "security": [{"bearer": []}], "paths": {
                "/open": {"get": {"operationId": "open", "security": []}},
                "/closed": {"get": {"operationId": "closed"}}}}),
        );
        let spec = flatten(&root, no_siblings).unwrap();
        assert!(!spec.endpoint("/open", HttpMethod::Get).unwrap().requires_auth);
        assert!(spec.endpoint("/closed", HttpMethod::Get).unwrap().requires_auth);
    }

    #[test]
    fn synthesized_operation_id() {
        assert_eq!(synthesize_operation_id("/a/{b}/c", HttpMethod::Get), "a__b__c_get");
    }
}
