//! Synthetic query→API-call corpus: seed generation, spec-grounded
//! refinement, request scaling, splitting and Instruct/Output export.

mod export;
mod parse;
mod prompts;
mod scale;
mod split;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

pub use export::{
    export_instruct_csv, import_instruct_csv, read_jsonl, write_jsonl, InstructOutputPair, CSV_HEADER,
};
pub use parse::{parse_seed_response, parse_variations, MalformedEntry, SeedParse};
pub use prompts::{build_scaling_prompt, build_seed_prompt, GENERATION_TEMPERATURE, SCALING_TEMPLATE};
pub use scale::{normalize_request, scale_dataset, ScaleError, ScaleOutcome};
pub use split::{split_dataset, train_size, DatasetSplit};
pub use validate::{refine, validate_record, RefineOutcome, ValidationReport, Verdict, Violation, ViolationCode};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("specification has no endpoints")]
    EmptySpec,
    #[error("variation count must be at least 1")]
    ZeroVariations,
    #[error("no JSON array found in model reply")]
    NoArrayFound,
    #[error("split ratio {0} is outside (0, 1)")]
    InvalidRatio(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("CSV header must be `instruct,output`, found `{found}`")]
    BadHeader { found: String },
    #[error("malformed CSV row at line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("malformed JSON record at line {line}: {message}")]
    MalformedJsonLine { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One natural-language request paired with the API call that serves it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub request: String,
    pub api_call: String,
    pub description: String,
    pub method: String,
    pub operation: String,
    #[serde(deserialize_with = "lenient_parameters")]
    pub parameters: BTreeMap<String, String>,
}

/// The five non-request fields: what a responder is expected to produce.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CallOutput {
    pub api_call: String,
    pub description: String,
    pub method: String,
    pub operation: String,
    #[serde(deserialize_with = "lenient_parameters")]
    pub parameters: BTreeMap<String, String>,
}

impl SyntheticRecord {
    pub fn from_parts(request: impl Into<String>, output: CallOutput) -> Self {
        Self {
            request: request.into(),
            api_call: output.api_call,
            description: output.description,
            method: output.method,
            operation: output.operation,
            parameters: output.parameters,
        }
    }

    pub fn output(&self) -> CallOutput {
        CallOutput {
            api_call: self.api_call.clone(),
            description: self.description.clone(),
            method: self.method.clone(),
            operation: self.operation.clone(),
            parameters: self.parameters.clone(),
        }
    }

    /// Same call, different request text.
    pub fn with_request(&self, request: impl Into<String>) -> Self {
        Self {
            request: request.into(),
            ..self.clone()
        }
    }

    /// Shape problems independent of any spec.
    pub fn shape_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.request.trim().is_empty() {
            out.push("request is empty".to_string());
        }
        if self.api_call.trim().is_empty() {
            out.push("api_call is empty".to_string());
        }
        if self.method != self.method.to_ascii_lowercase() {
            out.push(format!("method `{}` is not lowercase", self.method));
        }
        out
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }
}

impl CallOutput {
    /// Single-line JSON with keys in the fixed order
    /// api_call, description, method, operation, parameters (sorted).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("output serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

impl fmt::Display for CallOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical_json())
    }
}

/// Parameter values are example-value text; non-string JSON scalars and
/// structures are kept as their JSON text.
pub(crate) fn value_as_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn lenient_parameters<'de, D>(de: D) -> Result<BTreeMap<String, String>, D::Error>
where
    D: Deserializer<'de>,
{
    let raw: BTreeMap<String, Value> = BTreeMap::deserialize(de)?;
    Ok(raw.into_iter().map(|(k, v)| (k, value_as_text(&v))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_output_key_order() {
        let rec: SyntheticRecord = serde_json::from_str(
            r#"{"request":"q","api_call":"/a","description":"d","method":"get","operation":"op",
                "parameters":{"z":"1","a":2}}"#,
        )
        .unwrap();
        assert_eq!(
            rec.output().to_canonical_json(),
            r#"{"api_call":"/a","description":"d","method":"get","operation":"op","parameters":{"a":"2","z":"1"}}"#
        );
    }

    #[test]
    fn shape_problems_flag_uppercase_method() {
        let rec = SyntheticRecord {
            request: "q".into(),
            api_call: "/a".into(),
            description: String::new(),
            method: "GET".into(),
            operation: "op".into(),
            parameters: BTreeMap::new(),
        };
        assert_eq!(rec.shape_problems().len(), 1);
    }
}
