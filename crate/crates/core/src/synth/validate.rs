use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::spec::{lookup_endpoint, match_template, ApiSpec, EndpointDef, HttpMethod, ParamLocation};

use super::SyntheticRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationCode {
    UnknownPath,
    MethodMismatch,
    OperationMismatch,
    UnknownParameter,
    MissingRequiredParameter,
    MalformedRecord,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::UnknownPath => "unknown-path",
            ViolationCode::MethodMismatch => "method-mismatch",
            ViolationCode::OperationMismatch => "operation-mismatch",
            ViolationCode::UnknownParameter => "unknown-parameter",
            ViolationCode::MissingRequiredParameter => "missing-required-parameter",
            ViolationCode::MalformedRecord => "malformed-record",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Valid,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub record_index: usize,
    pub verdict: Verdict,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(record_index: usize, violations: Vec<Violation>) -> Self {
        let verdict = if violations.is_empty() { Verdict::Valid } else { Verdict::Invalid };
        Self {
            record_index,
            verdict,
            violations,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.verdict == Verdict::Valid
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }
}

fn violation(code: ViolationCode, message: impl Into<String>) -> Violation {
    Violation {
        code,
        message: message.into(),
    }
}

/// Check one record against the flattened spec.
///
/// Checks run in order: path, method, operation id, parameter names,
/// required parameters. A path that exists under another method yields a
/// method mismatch and the remaining checks run against that endpoint.
pub fn validate_record(spec: &ApiSpec, rec: &SyntheticRecord, record_index: usize) -> ValidationReport {
    let mut out: Vec<Violation> = rec
        .shape_problems()
        .into_iter()
        .map(|p| violation(ViolationCode::MalformedRecord, p))
        .collect();

    let endpoint = match lookup_endpoint(spec, &rec.api_call, &rec.method) {
        Some(e) => e,
        None => match any_method(spec, &rec.api_call) {
            Some(e) => {
                out.push(violation(
                    ViolationCode::MethodMismatch,
                    format!("`{}` is served by {}, not `{}`", rec.api_call, e.method.as_str(), rec.method),
                ));
                e
            }
            None => {
                out.push(violation(
                    ViolationCode::UnknownPath,
                    format!("no endpoint matches `{}`", rec.api_call),
                ));
                return ValidationReport::from_violations(record_index, out);
            }
        },
    };

    if rec.operation != endpoint.operation_id {
        out.push(violation(
            ViolationCode::OperationMismatch,
            format!("operation `{}` differs from `{}`", rec.operation, endpoint.operation_id),
        ));
    }
    for key in rec.parameters.keys() {
        if endpoint.parameter(key).is_none() {
            out.push(violation(
                ViolationCode::UnknownParameter,
                format!("`{key}` is not a parameter of {} {}", endpoint.method.as_str(), endpoint.path),
            ));
        }
    }
    let bound: HashSet<String> = match_template(&endpoint.path, &rec.api_call)
        .map(|b| {
            b.into_iter()
                .filter(|(name, value)| value != &format!("{{{name}}}"))
                .map(|(name, _)| name)
                .collect()
        })
        .unwrap_or_default();
    for p in endpoint.parameters.iter().filter(|p| p.required) {
        let in_path = p.location == ParamLocation::Path && bound.contains(&p.name);
        if !rec.parameters.contains_key(&p.name) && !in_path {
            out.push(violation(
                ViolationCode::MissingRequiredParameter,
                format!("required parameter `{}` is missing", p.name),
            ));
        }
    }
    ValidationReport::from_violations(record_index, out)
}

fn any_method<'a>(spec: &'a ApiSpec, path: &str) -> Option<&'a EndpointDef> {
    HttpMethod::ALL
        .iter()
        .filter(|m| m.is_standard())
        .find_map(|m| lookup_endpoint(spec, path, m.as_str()))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RefineOutcome {
    pub kept: Vec<SyntheticRecord>,
    pub reports: Vec<ValidationReport>,
    /// Indices of valid records dropped as repeats of an earlier (api_call, method).
    pub duplicates: Vec<usize>,
}

/// Keep the records that validate, in input order, one per (api_call, method).
pub fn refine(spec: &ApiSpec, recs: &[SyntheticRecord]) -> RefineOutcome {
    let mut out = RefineOutcome::default();
    let mut seen = HashSet::new();
    for (i, rec) in recs.iter().enumerate() {
        let report = validate_record(spec, rec, i);
        if report.is_valid() {
            if seen.insert((rec.api_call.clone(), rec.method.clone())) {
                out.kept.push(rec.clone());
            } else {
                out.duplicates.push(i);
            }
        }
        out.reports.push(report);
    }
    out
}
