//! Configuration and orchestration for the corpus pipeline:
//! flatten → generate → refine → scale → split → export → emit-config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fsutil::{write_atomic, write_json_atomic};
use crate::gateway::{
    ChatRequest, ChatResponse, EmbeddingVector, GatewayError, MockProvider, OpenAiProvider, Provider, ProviderConfig,
};
use crate::rag::SplitConfig;
use crate::spec::{dir_resolver, flatten, parse_spec, ApiSpec, RawSpecDocument, SourceFormat};
use crate::synth::{
    build_seed_prompt, export_instruct_csv, parse_seed_response, refine, scale_dataset, split_dataset, write_jsonl,
    MalformedEntry, RefineOutcome, SyntheticRecord,
};
use crate::train_config::{emit_config, tuned_defaults};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorClass {
    /// Bad or unusable data; exit code 1.
    Data,
    /// Bad configuration or environment; exit code 2.
    Config,
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} failed ({artifact}): {message}")]
pub struct PipelineError {
    pub stage: String,
    pub artifact: String,
    pub class: ErrorClass,
    pub message: String,
}

impl PipelineError {
    pub fn data(stage: &str, artifact: impl AsRef<Path>, message: impl std::fmt::Display) -> Self {
        Self::new(stage, artifact, ErrorClass::Data, message)
    }

    pub fn config(stage: &str, artifact: impl AsRef<Path>, message: impl std::fmt::Display) -> Self {
        Self::new(stage, artifact, ErrorClass::Config, message)
    }

    fn new(stage: &str, artifact: impl AsRef<Path>, class: ErrorClass, message: impl std::fmt::Display) -> Self {
        Self {
            stage: stage.to_string(),
            artifact: artifact.as_ref().display().to_string(),
            class,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class {
            ErrorClass::Data => 1,
            ErrorClass::Config => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderChoice {
    /// The shared mock described by [`MockSettings`].
    #[default]
    Mock,
    Openai(ProviderConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ProviderRoles {
    #[serde(default)]
    pub generation: ProviderChoice,
    #[serde(default)]
    pub judge: ProviderChoice,
    #[serde(default)]
    pub embedding: ProviderChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CannedEntry {
    pub trigger: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    /// Relative to the file that declares the entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSettings {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mock_dim")]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canned_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub canned: Vec<CannedEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

fn default_mock_dim() -> usize {
    256
}

impl Default for MockSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: default_mock_dim(),
            canned_file: None,
            canned: Vec::new(),
            fallback: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSettings {
    pub n: usize,
    pub include_seeds: bool,
}

impl Default for ScalingSettings {
    fn default() -> Self {
        Self { n: 100, include_seeds: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSettings {
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self { ratio: 0.7, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkSettings {
    pub chunk_size: usize,
    pub overlap: usize,
    pub k: usize,
}

impl Default for ChunkSettings {
    fn default() -> Self {
        Self {
            chunk_size: 1000,
            overlap: 100,
            k: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub iterations: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { iterations: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockServerSettings {
    pub bind_address: String,
}

impl Default for MockServerSettings {
    fn default() -> Self {
        Self {
            bind_address: "127.0.0.1:8090".into(),
        }
    }
}

fn default_artifact_dir() -> PathBuf {
    PathBuf::from("nefmind-out")
}

/// Everything a run needs. Relative paths are resolved against the directory
/// of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// The first entry is the root document; the rest are extra documents it
    /// may reference by file name.
    pub spec_paths: Vec<PathBuf>,
    #[serde(default)]
    pub providers: ProviderRoles,
    #[serde(default)]
    pub mock: MockSettings,
    #[serde(default)]
    pub scaling: ScalingSettings,
    #[serde(default)]
    pub split: SplitSettings,
    #[serde(default)]
    pub chunking: ChunkSettings,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default = "default_artifact_dir")]
    pub artifact_dir: PathBuf,
    #[serde(default)]
    pub mock_server: MockServerSettings,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Generation,
    Judge,
    Embedding,
}

impl Role {
    fn name(self) -> &'static str {
        match self {
            Role::Generation => "generation",
            Role::Judge => "judge",
            Role::Embedding => "embedding",
        }
    }
}

impl PipelineConfig {
    /// A config with defaults everywhere and the given root spec.
    pub fn with_spec(spec: impl Into<PathBuf>) -> Self {
        Self {
            spec_paths: vec![spec.into()],
            providers: ProviderRoles::default(),
            mock: MockSettings::default(),
            scaling: ScalingSettings::default(),
            split: SplitSettings::default(),
            chunking: ChunkSettings::default(),
            eval: EvalSettings::default(),
            artifact_dir: default_artifact_dir(),
            mock_server: MockServerSettings::default(),
            base_dir: PathBuf::from("."),
        }
    }

    /// Read a YAML or JSON config file and validate it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::config("config", path, e))?;
        let mut cfg: PipelineConfig = match SourceFormat::from_path(path) {
            Some(SourceFormat::Json) => serde_json::from_str(&text).map_err(|e| PipelineError::config("config", path, e))?,
            _ => serde_yaml::from_str(&text).map_err(|e| PipelineError::config("config", path, e))?,
        };
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.base_dir.as_os_str().is_empty() {
            cfg.base_dir = PathBuf::from(".");
        }
        cfg.validate().map_err(|m| PipelineError::config("config", path, m))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.spec_paths.is_empty() {
            return Err("spec_paths is empty".into());
        }
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return Err(format!("split.ratio {} is outside (0, 1)", self.split.ratio));
        }
        if self.scaling.n == 0 {
            return Err("scaling.n must be positive".into());
        }
        if self.eval.iterations == 0 {
            return Err("eval.iterations must be positive".into());
        }
        if self.chunking.k == 0 {
            return Err("chunking.k must be positive".into());
        }
        SplitConfig::new(self.chunking.chunk_size, self.chunking.overlap)
            .validate()
            .map_err(|e| format!("chunking: {e}"))?;
        if self.mock.dim < MockProvider::MIN_DIM {
            return Err(format!("mock.dim {} is below {}", self.mock.dim, MockProvider::MIN_DIM));
        }
        for (role, choice) in [
            ("generation", &self.providers.generation),
            ("judge", &self.providers.judge),
            ("embedding", &self.providers.embedding),
        ] {
            if let ProviderChoice::Openai(p) = choice {
                p.validate().map_err(|e| format!("providers.{role}: {e}"))?;
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn artifact_dir(&self) -> PathBuf {
        self.resolve(&self.artifact_dir)
    }

    /// Route every role to the mock provider.
    pub fn force_mock(&mut self) {
        self.providers = ProviderRoles::default();
    }

    /// Route roles currently on the mock to a live provider, keeping any live
    /// provider already configured for a role.
    pub fn force_live(&mut self, fallback: &ProviderConfig) {
        for choice in [
            &mut self.providers.generation,
            &mut self.providers.judge,
            &mut self.providers.embedding,
        ] {
            if *choice == ProviderChoice::Mock {
                *choice = ProviderChoice::Openai(fallback.clone());
            }
        }
    }

    /// SHA-256 of the canonical JSON form, after overrides.
    pub fn content_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    fn canned_entries(&self) -> Result<Vec<(String, String)>, PipelineError> {
        let mut entries = Vec::new();
        for e in &self.mock.canned {
            entries.push(read_canned(e, &self.base_dir)?);
        }
        if let Some(file) = &self.mock.canned_file {
            let path = self.resolve(file);
            let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::config("mock", &path, e))?;
            let list: Vec<CannedEntry> =
                serde_yaml::from_str(&text).map_err(|e| PipelineError::config("mock", &path, e))?;
            let dir = path.parent().unwrap_or(Path::new("."));
            for e in &list {
                entries.push(read_canned(e, dir)?);
            }
        }
        Ok(entries)
    }

    pub fn mock_provider(&self) -> Result<MockProvider, PipelineError> {
        let mock = MockProvider::new(self.mock.seed, self.canned_entries()?, self.mock.dim)
            .map_err(|e| PipelineError::config("mock", &self.base_dir, e))?;
        Ok(match &self.mock.fallback {
            Some(f) => mock.with_fallback(f.clone()),
            None => mock,
        })
    }

    pub fn provider(&self, role: Role) -> Result<Arc<dyn Provider>, PipelineError> {
        let choice = match role {
            Role::Generation => &self.providers.generation,
            Role::Judge => &self.providers.judge,
            Role::Embedding => &self.providers.embedding,
        };
        match choice {
            ProviderChoice::Mock => Ok(Arc::new(self.mock_provider()?)),
            ProviderChoice::Openai(cfg) => OpenAiProvider::new(cfg.clone())
                .map(|p| Arc::new(p) as Arc<dyn Provider>)
                .map_err(|e| PipelineError::config(&format!("providers.{}", role.name()), &cfg.base_url, e)),
        }
    }
}

/// Chat from one provider, embeddings from another.
pub struct RoleProvider {
    id: String,
    chat: Arc<dyn Provider>,
    embed: Arc<dyn Provider>,
}

impl RoleProvider {
    pub fn new(chat: Arc<dyn Provider>, embed: Arc<dyn Provider>) -> Self {
        let id = if chat.id() == embed.id() {
            chat.id().to_string()
        } else {
            format!("{}+{}", chat.id(), embed.id())
        };
        Self { id, chat, embed }
    }
}

impl Provider for RoleProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.chat.chat(req)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        self.embed.embed(texts)
    }
}

fn read_canned(e: &CannedEntry, dir: &Path) -> Result<(String, String), PipelineError> {
    let completion = match (&e.completion, &e.completion_file) {
        (Some(c), None) => c.clone(),
        (None, Some(f)) => {
            let path = dir.join(f);
            std::fs::read_to_string(&path).map_err(|err| PipelineError::config("mock", &path, err))?
        }
        _ => {
            return Err(PipelineError::config(
                "mock",
                dir,
                format!("canned entry `{}` needs exactly one of completion, completion_file", e.trigger),
            ))
        }
    };
    Ok((e.trigger.clone(), completion))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Parse and flatten the root spec. Extra documents are offered to the
/// resolver by file name before falling back to the root's directory.
pub fn load_spec(paths: &[PathBuf]) -> Result<ApiSpec, PipelineError> {
    let root = paths
        .first()
        .ok_or_else(|| PipelineError::config("flatten", "", "no spec path given"))?;
    let read = |p: &Path| -> Result<RawSpecDocument, PipelineError> {
        let bytes = std::fs::read(p).map_err(|e| PipelineError::config("flatten", p, e))?;
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        parse_spec(&name, &bytes, SourceFormat::from_path(p)).map_err(|e| PipelineError::data("flatten", p, e))
    };
    let root_doc = read(root)?;
    let mut extra = BTreeMap::new();
    for p in &paths[1..] {
        let doc = read(p)?;
        extra.insert(doc.source_path.clone(), doc);
    }
    let mut fallback = dir_resolver(root.parent().unwrap_or(Path::new(".")));
    flatten(&root_doc, |id: &str| extra.get(id).cloned().or_else(|| fallback(id)))
        .map_err(|e| PipelineError::data("flatten", root, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateOutcome {
    pub reply: String,
    pub records: Vec<SyntheticRecord>,
    pub malformed: Vec<MalformedEntry>,
}

/// Ask the provider for seed records and parse its reply.
pub fn generate<P: Provider + ?Sized>(provider: &P, spec: &ApiSpec) -> Result<GenerateOutcome, PipelineError> {
    let req = build_seed_prompt(spec).map_err(|e| PipelineError::data("generate", "spec", e))?;
    let reply = provider.chat(&req).map_err(|e| {
        if e.is_configuration() {
            PipelineError::config("generate", provider.id(), e)
        } else {
            PipelineError::data("generate", provider.id(), e)
        }
    })?;
    let parsed = parse_seed_response(&reply.text).map_err(|e| PipelineError::data("generate", provider.id(), e))?;
    Ok(GenerateOutcome {
        reply: reply.text,
        records: parsed.records,
        malformed: parsed.malformed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub generated: usize,
    pub malformed: usize,
    pub refined: usize,
    pub scaled: usize,
    pub train: usize,
    pub eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub providers: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub counts: StageCounts,
    pub warnings: Vec<String>,
}

struct Outputs {
    dir: PathBuf,
    written: Vec<FileDigest>,
}

impl Outputs {
    fn put(&mut self, stage: &str, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes).map_err(|e| PipelineError::config(stage, &path, e))?;
        self.written.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn put_json<T: Serialize>(&mut self, stage: &str, name: &str, value: &T) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.put(stage, name, text.as_bytes())
    }
}

pub fn jsonl_bytes(recs: &[SyntheticRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_jsonl(recs, &mut buf).expect("writing to memory");
    buf
}

pub fn csv_bytes(recs: &[SyntheticRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    export_instruct_csv(recs, &mut buf).expect("writing to memory");
    buf
}

/// Refinement report with the kept count and each record's verdict.
pub fn refine_report(outcome: &RefineOutcome) -> serde_json::Value {
    serde_json::json!({
        "kept": outcome.kept.len(),
        "duplicates": outcome.duplicates,
        "reports": outcome.reports,
    })
}

/// Run every corpus stage and write artifacts plus a manifest into `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<RunManifest, PipelineError> {
    let generator = cfg.provider(Role::Generation)?;
    let mut out = Outputs {
        dir: out_dir.to_path_buf(),
        written: Vec::new(),
    };
    let spec_paths: Vec<PathBuf> = cfg.spec_paths.iter().map(|p| cfg.resolve(p)).collect();
    let mut inputs = Vec::new();
    for (p, shown) in spec_paths.iter().zip(&cfg.spec_paths) {
        let bytes = std::fs::read(p).map_err(|e| PipelineError::config("flatten", p, e))?;
        inputs.push(FileDigest {
            path: shown.display().to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
    }

    let spec = load_spec(&spec_paths)?;
    let spec_json = spec.to_json_string();
    out.put("flatten", "flattened-spec.json", format!("{spec_json}\n").as_bytes())?;

    let generated = generate(generator.as_ref(), &spec)?;
    out.put("generate", "generation-reply.txt", generated.reply.as_bytes())?;
    out.put("generate", "generated.jsonl", &jsonl_bytes(&generated.records))?;
    if !generated.malformed.is_empty() {
        out.put_json("generate", "generated-malformed.json", &generated.malformed)?;
    }

    let refined = refine(&spec, &generated.records);
    out.put("refine", "refined.jsonl", &jsonl_bytes(&refined.kept))?;
    out.put_json("refine", "refine-report.json", &refine_report(&refined))?;
    if refined.kept.is_empty() {
        return Err(PipelineError::data(
            "refine",
            out_dir.join("refine-report.json"),
            "no generated record survived validation",
        ));
    }

    let scaled = scale_dataset(
        generator.as_ref(),
        &spec,
        &refined.kept,
        cfg.scaling.n,
        cfg.scaling.include_seeds,
        &spec_json,
    )
    .map_err(|e| PipelineError::data("scale", out_dir.join("refined.jsonl"), e))?;
    out.put("scale", "scaled.jsonl", &jsonl_bytes(&scaled.records))?;

    let split = split_dataset(&scaled.records, cfg.split.ratio, cfg.split.seed)
        .map_err(|e| PipelineError::data("split", out_dir.join("scaled.jsonl"), e))?;
    out.put("split", "train.jsonl", &jsonl_bytes(&split.train))?;
    out.put("split", "eval.jsonl", &jsonl_bytes(&split.eval))?;
    out.put("export", "train.csv", &csv_bytes(&split.train))?;
    out.put("export", "eval.csv", &csv_bytes(&split.eval))?;

    let (q, t) = tuned_defaults();
    let mut config_bytes = Vec::new();
    emit_config(&q, &t, &mut config_bytes)
        .map_err(|e| PipelineError::data("emit-config", out_dir.join("tuning-config.json"), e))?;
    out.put("emit-config", "tuning-config.json", &config_bytes)?;

    let manifest = RunManifest {
        tool: "nefmind".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: cfg.content_hash(),
        config: serde_json::to_value(cfg).expect("config serializes"),
        providers: BTreeMap::from([("generation".to_string(), generator.id().to_string())]),
        inputs,
        outputs: out.written.clone(),
        counts: StageCounts {
            generated: generated.records.len(),
            malformed: generated.malformed.len(),
            refined: refined.kept.len(),
            scaled: scaled.records.len(),
            train: split.train.len(),
            eval: split.eval.len(),
        },
        warnings: scaled.warnings,
    };
    write_json_atomic(out_dir.join(MANIFEST_FILE), &manifest)
        .map_err(|e| PipelineError::config("manifest", out_dir.join(MANIFEST_FILE), e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_config() -> PipelineConfig {
        let core = Path::new(env!("CARGO_MANIFEST_DIR"));
        let mut cfg = PipelineConfig::with_spec(core.join("fixtures/nef_api.yaml"));
        cfg.mock.canned = vec![CannedEntry {
            trigger: "Generate synthetic data".into(),
            completion: None,
            completion_file: Some(core.join("fixtures/generation_reply.txt")),
        }];
        cfg.mock.fallback = Some(r#"["What is available?", "What can I do?"]"#.into());
        cfg.scaling.n = 2;
        cfg
    }

    #[test]
    fn ratio_bounds() {
        let mut cfg = fixture_config();
        for bad in [0.0, 1.0, -0.5, f64::NAN] {
            cfg.split.ratio = bad;
            assert!(cfg.validate().is_err(), "{bad}");
        }
        cfg.split.ratio = 0.5;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn empty_env_name_rejected() {
        let mut cfg = fixture_config();
        let mut p = ProviderConfig::openai("gpt-4");
        p.api_key_env_name = " ".into();
        cfg.providers.judge = ProviderChoice::Openai(p);
        assert!(cfg.validate().unwrap_err().contains("providers.judge"));
    }

    #[test]
    fn missing_key_is_config_error() {
        let mut cfg = fixture_config();
        let mut p = ProviderConfig::openai("gpt-4");
        p.api_key_env_name = "NEFMIND_TEST_UNSET_KEY_VAR".into();
        cfg.providers.generation = ProviderChoice::Openai(p);
        let dir = tempfile::tempdir().unwrap();
        let err = run_pipeline(&cfg, dir.path()).unwrap_err();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("NEFMIND_TEST_UNSET_KEY_VAR"));
    }

    #[test]
    fn provider_choice_yaml() {
        let roles: ProviderRoles = serde_yaml::from_str(
            "generation: {kind: mock}\njudge:\n  kind: openai\n  base_url: http://localhost:1/v1\n  api_key_env_name: K\n  model_name: m\n  request_timeout_secs: 5\n  max_retries: 0\n  retry_backoff_base_secs: 0\n",
        )
        .unwrap();
        assert_eq!(roles.generation, ProviderChoice::Mock);
        assert!(matches!(roles.judge, ProviderChoice::Openai(ref p) if p.model_name == "m"));
        assert_eq!(roles.embedding, ProviderChoice::Mock);
    }

    #[test]
    fn fixture_run_is_repeatable() {
        let cfg = fixture_config();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = run_pipeline(&cfg, a.path()).unwrap();
        let mb = run_pipeline(&cfg, b.path()).unwrap();
        assert_eq!(ma.counts.refined, 7);
        // the fallback reply gives every seed the same two variations
        assert_eq!(ma.counts.scaled, 2);
        assert_eq!(ma.outputs, mb.outputs);
        for f in ["train.csv", "eval.csv", "tuning-config.json", MANIFEST_FILE] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }
}
