use std::collections::HashSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::gateway::{GatewayError, Provider};
use crate::spec::ApiSpec;

use super::{build_scaling_prompt, parse_variations, validate_record, SynthError, SyntheticRecord, Violation};

#[derive(Debug, thiserror::Error)]
pub enum ScaleError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("seed {index} does not validate against the spec: {}", summarize(.violations))]
    InvalidSeed { index: usize, violations: Vec<Violation> },
    #[error("provider failed on seed {seed_index} ({completed} seeds completed): {source}")]
    Provider {
        seed_index: usize,
        completed: usize,
        #[source]
        source: GatewayError,
    },
    #[error("scaled record {index} failed re-validation: {}", summarize(.violations))]
    Revalidation { index: usize, violations: Vec<Violation> },
}

fn summarize(vs: &[Violation]) -> String {
    vs.iter()
        .map(|v| format!("{}: {}", v.code.as_str(), v.message))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ScaleOutcome {
    pub records: Vec<SyntheticRecord>,
    /// Records contributed by each seed's variations after dedup.
    pub per_seed: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Dedup key for request text: trimmed, inner whitespace collapsed, lowercased.
pub fn normalize_request(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Expand each seed into up to `n` request variations.
///
/// Provider calls run concurrently, one per seed; the provider bounds its
/// own in-flight requests. Assembly is sequential in seed order so the
/// output is deterministic for a deterministic provider.
pub fn scale_dataset<P: Provider + ?Sized>(
    provider: &P,
    spec: &ApiSpec,
    seeds: &[SyntheticRecord],
    n: usize,
    include_seeds: bool,
    context: &str,
) -> Result<ScaleOutcome, ScaleError> {
    if n == 0 {
        return Err(SynthError::ZeroVariations.into());
    }
    for (index, seed) in seeds.iter().enumerate() {
        let report = validate_record(spec, seed, index);
        if !report.is_valid() {
            return Err(ScaleError::InvalidSeed {
                index,
                violations: report.violations,
            });
        }
    }

    let replies: Vec<Result<Option<Vec<String>>, GatewayError>> = seeds
        .par_iter()
        .map(|seed| {
            let req = build_scaling_prompt(seed, context, n).expect("n checked above");
            let reply = provider.chat(&req)?;
            Ok(parse_variations(&reply.text).ok())
        })
        .collect();

    if let Some(seed_index) = replies.iter().position(Result::is_err) {
        let completed = replies.iter().filter(|r| r.is_ok()).count();
        let source = replies
            .into_iter()
            .nth(seed_index)
            .and_then(Result::err)
            .expect("position found an error");
        return Err(ScaleError::Provider {
            seed_index,
            completed,
            source,
        });
    }

    let mut out = ScaleOutcome::default();
    let mut seen = HashSet::new();
    for (i, (seed, reply)) in seeds.iter().zip(replies).enumerate() {
        let variations = reply.expect("errors handled above");
        let Some(variations) = variations else {
            out.warnings.push(format!("seed {i}: reply contained no parseable variations"));
            out.per_seed.push(0);
            continue;
        };
        let mut added = 0;
        for v in variations.into_iter().take(n) {
            if seen.insert(normalize_request(&v)) {
                out.records.push(seed.with_request(v));
                added += 1;
            }
        }
        if added == 0 {
            out.warnings.push(format!("seed {i}: no usable variations"));
        }
        out.per_seed.push(added);
    }
    if include_seeds {
        for seed in seeds {
            if seen.insert(normalize_request(&seed.request)) {
                out.records.push(seed.clone());
            }
        }
    }
    for (index, rec) in out.records.iter().enumerate() {
        let report = validate_record(spec, rec, index);
        if !report.is_valid() {
            return Err(ScaleError::Revalidation {
                index,
                violations: report.violations,
            });
        }
    }
    for w in &out.warnings {
        log::warn!("{w}");
    }
    Ok(out)
}
