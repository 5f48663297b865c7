//! Small NEF emulator specification and sample data bundled with the crate,
//! used by tests, the acceptance suite and the CLI's offline mode.

use crate::spec::{flatten, parse_spec_str, ApiSpec, RawSpecDocument, SourceFormat};
use crate::synth::SyntheticRecord;

pub const NEF_API_YAML: &str = include_str!("../fixtures/nef_api.yaml");
pub const NEF_COMMON_YAML: &str = include_str!("../fixtures/nef_common.yaml");
pub const CYCLE_A_YAML: &str = include_str!("../fixtures/cycle_a.yaml");
pub const CYCLE_B_YAML: &str = include_str!("../fixtures/cycle_b.yaml");
pub const SEEDS_JSONL: &str = include_str!("../fixtures/seeds.jsonl");
/// A generation reply with seven faithful records and three fabricated ones.
pub const GENERATION_REPLY: &str = include_str!("../fixtures/generation_reply.txt");

pub const NEF_API_PATH: &str = "nef_api.yaml";
pub const CYCLE_A_PATH: &str = "cycle_a.yaml";

fn document(path: &str, text: &str) -> RawSpecDocument {
    parse_spec_str(path, text, Some(SourceFormat::Yaml)).expect("bundled fixture parses")
}

/// Resolver over the bundled files, keyed by file name.
pub fn resolver(name: &str) -> Option<RawSpecDocument> {
    let text = match name {
        "nef_api.yaml" => NEF_API_YAML,
        "nef_common.yaml" => NEF_COMMON_YAML,
        "cycle_a.yaml" => CYCLE_A_YAML,
        "cycle_b.yaml" => CYCLE_B_YAML,
        _ => return None,
    };
    Some(document(name, text))
}

pub fn nef_document() -> RawSpecDocument {
    document(NEF_API_PATH, NEF_API_YAML)
}

pub fn cycle_document() -> RawSpecDocument {
    document(CYCLE_A_PATH, CYCLE_A_YAML)
}

pub fn nef_spec() -> ApiSpec {
    flatten(&nef_document(), resolver).expect("bundled spec flattens")
}

pub fn seeds() -> Vec<SyntheticRecord> {
    crate::synth::read_jsonl(SEEDS_JSONL.as_bytes()).expect("bundled seeds parse")
}
