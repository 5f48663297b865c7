//! OpenAPI ingestion: parsing, reference flattening and the endpoint catalog.
//!
//! Documents are held as `serde_json::Value` trees regardless of whether they
//! arrived as YAML or JSON; key insertion order is preserved throughout.

mod catalog;
mod flatten;
mod parse;
pub mod schema;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use catalog::{endpoint_catalog, lookup_endpoint, match_template, path_placeholders, CatalogEntry};
pub use flatten::{flatten, REF_KEY};
pub use parse::{parse_spec, parse_spec_str, SourceFormat};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SpecError {
    #[error("{format} syntax error at line {line}, column {column}: {message}")]
    Syntax {
        format: &'static str,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("document is empty")]
    Empty,
    #[error("source is not valid UTF-8: {0}")]
    Encoding(String),
    #[error("unresolved reference `{reference}`")]
    UnresolvedReference { reference: String },
    #[error("reference cycle: {}", .cycle.join(" -> "))]
    ReferenceCycle { cycle: Vec<String> },
    #[error("reference `{reference}` does not point at a mapping or sequence")]
    NotATreeNode { reference: String },
    #[error("invalid specification: {0}")]
    Invalid(String),
}

/// A parsed but not yet flattened document.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSpecDocument {
    pub source_path: String,
    pub body: Value,
}

impl RawSpecDocument {
    pub fn new(source_path: impl Into<String>, body: Value) -> Self {
        Self {
            source_path: source_path.into(),
            body,
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.body).expect("Value always serializes")
    }

    pub fn to_yaml_string(&self) -> String {
        serde_yaml::to_string(&self.body).expect("Value always serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HttpMethod {
    Get,
    Put,
    Post,
    Delete,
    Options,
    Head,
    Patch,
    Trace,
}

impl HttpMethod {
    pub const ALL: [HttpMethod; 8] = [
        HttpMethod::Get,
        HttpMethod::Put,
        HttpMethod::Post,
        HttpMethod::Delete,
        HttpMethod::Options,
        HttpMethod::Head,
        HttpMethod::Patch,
        HttpMethod::Trace,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HttpMethod::Get => "get",
            HttpMethod::Put => "put",
            HttpMethod::Post => "post",
            HttpMethod::Delete => "delete",
            HttpMethod::Options => "options",
            HttpMethod::Head => "head",
            HttpMethod::Patch => "patch",
            HttpMethod::Trace => "trace",
        }
    }

    /// The verbs that take part in the catalog and in generated records.
    pub fn is_standard(self) -> bool {
        matches!(
            self,
            HttpMethod::Get | HttpMethod::Post | HttpMethod::Put | HttpMethod::Delete | HttpMethod::Patch
        )
    }
}

impl fmt::Display for HttpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HttpMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        HttpMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == lower)
            .ok_or_else(|| format!("unknown HTTP method `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamLocation {
    Path,
    Query,
    Header,
    Cookie,
    BodyField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BodyEncoding {
    Json,
    Form,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDef {
    pub name: String,
    pub location: ParamLocation,
    pub required: bool,
    /// Schema primitive name: string, integer, number, boolean, object or array.
    pub value_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointDef {
    pub path: String,
    pub method: HttpMethod,
    pub operation_id: String,
    pub description: String,
    pub parameters: Vec<ParameterDef>,
    pub request_body_schema: Option<Value>,
    pub body_encoding: Option<BodyEncoding>,
    /// Status code and JSON schema of the first documented 2xx response.
    pub success_status: u16,
    pub response_schema: Option<Value>,
    /// True when an effective security requirement applies to the operation.
    pub requires_auth: bool,
}

impl EndpointDef {
    pub fn parameter(&self, name: &str) -> Option<&ParameterDef> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn is_templated(&self) -> bool {
        self.path.contains('{')
    }
}

/// A flattened, self-contained specification.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiSpec {
    pub title: String,
    pub version: String,
    pub endpoints: Vec<EndpointDef>,
    pub components: IndexMap<String, Value>,
    /// `tokenUrl` of the first OAuth2 password flow, when declared.
    pub token_url: Option<String>,
    document: Value,
}

impl ApiSpec {
    pub fn document(&self) -> &Value {
        &self.document
    }

    /// The flattened tree as a raw document, ready to be flattened again or serialized.
    pub fn to_document(&self, source_path: impl Into<String>) -> RawSpecDocument {
        RawSpecDocument::new(source_path, self.document.clone())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.document).expect("Value always serializes")
    }

    pub fn to_yaml_string(&self) -> String {
        serde_yaml::to_string(&self.document).expect("Value always serializes")
    }

    pub fn endpoint(&self, path: &str, method: HttpMethod) -> Option<&EndpointDef> {
        self.endpoints
            .iter()
            .find(|e| e.path == path && e.method == method)
    }

    /// The endpoint serving the OAuth2 token URL, if the spec declares one.
    pub fn token_endpoint(&self) -> Option<&EndpointDef> {
        let url = self.token_url.as_deref()?;
        self.endpoint(url, HttpMethod::Post)
    }
}

/// Resolver that loads sibling documents from a directory, for use with [`flatten`].
pub fn dir_resolver(dir: impl AsRef<Path>) -> impl FnMut(&str) -> Option<RawSpecDocument> {
    let dir: PathBuf = dir.as_ref().to_path_buf();
    move |file_id: &str| {
        let bytes = std::fs::read(dir.join(file_id)).ok()?;
        parse_spec(file_id, &bytes, None).ok()
    }
}

/// Parse and flatten a spec file, resolving siblings relative to its directory.
pub fn load_spec_file(path: impl AsRef<Path>) -> Result<ApiSpec, LoadError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| LoadError::Io(path.display().to_string(), e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let raw = parse_spec(&name, &bytes, SourceFormat::from_path(path))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(flatten(&raw, dir_resolver(dir))?)
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error(transparent)]
    Spec(#[from] SpecError),
}
