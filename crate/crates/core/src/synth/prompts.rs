use crate::gateway::ChatRequest;
use crate::spec::{endpoint_catalog, ApiSpec};

use super::{SynthError, SyntheticRecord};

/// Sampling temperature for generation and scaling requests.
pub const GENERATION_TEMPERATURE: f64 = 0.7;

const SEED_SYSTEM: &str = "You are an expert on 5G Network Exposure Function (NEF) REST APIs. \
You write realistic user questions together with the exact API call that answers them.";

/// The request-scaling prompt. `{json_object}` and `{context}` are filled in
/// and `{n}` is the number of requested variations.
pub const SCALING_TEMPLATE: &str = "Understand the given JSON object and generate the request parameter in {n} different ways. All of them must be unique and not redundant.
    {json_object}
You may also use the document provided as context to understand more. Feel free to rephrase the request parameter.
{context}
The format of output must be an array of {n} values in the following format:
{format}";

/// Build the seed-generation request for a flattened spec.
pub fn build_seed_prompt(spec: &ApiSpec) -> Result<ChatRequest, SynthError> {
    let catalog = endpoint_catalog(spec);
    if catalog.is_empty() {
        return Err(SynthError::EmptySpec);
    }
    let endpoint_lines: String = catalog
        .iter()
        .map(|e| format!("- {} {} (operation: {})\n", e.method, e.path, e.operation_id))
        .collect();
    let user = format!(
        "Below is a flattened OpenAPI specification. Generate synthetic data in JSON format: \
an array of objects, one per endpoint, each with exactly these six fields:\n\
- \"request\": a natural-language question a user would ask\n\
- \"api_call\": the endpoint path exactly as written in the specification\n\
- \"description\": the endpoint description\n\
- \"method\": the HTTP method in lowercase\n\
- \"operation\": the operationId\n\
- \"parameters\": an object mapping each parameter or request-body field name to an example value\n\n\
Return solely real data taken from the specification. Do not invent endpoints, methods, \
operations or parameters.\n\n\
Endpoints ({count}):\n{endpoint_lines}\n\
Specification:\n{spec_text}\n",
        count = catalog.len(),
        spec_text = spec.to_json_string(),
    );
    Ok(ChatRequest::new(SEED_SYSTEM, user)
        .with_temperature(GENERATION_TEMPERATURE)
        .structured())
}

/// Render the request-scaling prompt for one seed record.
pub fn build_scaling_prompt(record: &SyntheticRecord, context: &str, n: usize) -> Result<ChatRequest, SynthError> {
    if n == 0 {
        return Err(SynthError::ZeroVariations);
    }
    let format = if n <= 3 {
        let items: Vec<String> = (1..=n).map(|i| format!("request{i}")).collect();
        format!("[{}]", items.join(", "))
    } else {
        format!("[request1, request2, ..., request{n}]")
    };
    let user = SCALING_TEMPLATE
        .replace("{json_object}", &record.to_pretty_json())
        .replace("{context}", context)
        .replace("{format}", &format)
        .replace("{n}", &n.to_string());
    Ok(ChatRequest::new("", user)
        .with_temperature(GENERATION_TEMPERATURE)
        .structured())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ResponseFormat;
    use std::collections::BTreeMap;

    fn login() -> SyntheticRecord {
        SyntheticRecord {
            request: "How can I obtain an access token for future requests?".into(),
            api_call: "/api/v1/login/access-token".into(),
            description: "OAuth2 compatible token login".into(),
            method: "post".into(),
            operation: "login".into(),
            parameters: BTreeMap::from([("grant_type".into(), "password".into())]),
        }
    }

    #[test]
    fn scaling_prompt_hundred() {
        let req = build_scaling_prompt(&login(), "CTX", 100).unwrap();
        let p = &req.user_prompt;
        assert!(p.starts_with("Understand the given JSON object and generate the request parameter in 100 different ways."));
        assert!(p.contains("All of them must be unique and not redundant."));
        assert!(p.contains("How can I obtain an access token for future requests?"));
        assert!(p.contains("\nCTX\n"));
        assert!(p.contains("an array of 100 values"));
        assert!(p.ends_with("[request1, request2, ..., request100]"));
        assert_eq!(req.response_format, ResponseFormat::StrictStructured);
    }

    #[test]
    fn scaling_prompt_small_n() {
        let p = build_scaling_prompt(&login(), "", 3).unwrap().user_prompt;
        assert!(p.contains("in 3 different ways"));
        assert!(p.contains("an array of 3 values"));
        assert!(p.ends_with("[request1, request2, request3]"));
        assert!(!p.contains("100"));
        assert!(build_scaling_prompt(&login(), "", 0).is_err());
    }

    #[test]
    fn scaling_prompt_is_deterministic() {
        assert_eq!(
            build_scaling_prompt(&login(), "c", 7).unwrap(),
            build_scaling_prompt(&login(), "c", 7).unwrap()
        );
    }
}
