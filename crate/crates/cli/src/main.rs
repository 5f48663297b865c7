use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nefmind::agent::{run_records, AgentSession, Credentials};
use nefmind::eval::{
    run_protocol, ChatResponder, ConstantResponder, EchoResponder, EvalItem, HttpResponder, Judge, LlmJudge,
    LocalJudge, RagResponder, Responder,
};
use nefmind::fsutil::{write_atomic, write_json_atomic};
use nefmind::gateway::ProviderConfig;
use nefmind::mock_server::{serve, ServerFixtures, TEST_PASSWORD, TEST_USERNAME};
use nefmind::pipeline::{
    csv_bytes, generate, jsonl_bytes, load_spec, refine_report, run_pipeline, sha256_hex, PipelineConfig,
    PipelineError, Role, RoleProvider,
};
use nefmind::rag::{answer_query, build_index, split_with, SplitConfig, VectorIndex};
use nefmind::synth::{import_instruct_csv, read_jsonl, refine, scale_dataset, split_dataset, SynthError, SyntheticRecord};
use nefmind::train_config::{emit_config, tuned_defaults};

const CHAT_SYSTEM: &str = "You answer 5G Network Exposure Function (NEF) API questions. \
Reply with a single JSON object with the fields \"request\", \"api_call\", \"description\", \
\"method\", \"operation\" and \"parameters\", and nothing else.";

#[derive(Parser)]
#[command(name = "nefmind", version, about = "NEF API corpus generation, evaluation and execution toolkit")]
struct Cli {
    /// Pipeline config file (YAML or JSON); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Route every provider role to the mock or to a live endpoint.
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderMode>,
    /// Seed for the mock provider.
    #[arg(long, global = true)]
    provider_seed: Option<u64>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderMode {
    Mock,
    Live,
}

#[derive(Args, Clone, Default)]
struct SpecArgs {
    /// Root spec file; repeat to add documents it references.
    #[arg(long = "spec")]
    spec: Vec<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and flatten a spec, inlining every reference.
    Flatten {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: SpecFormat,
    },
    /// Ask the generation provider for seed records.
    Generate {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep records that validate against the spec.
    Refine {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Expand seeds into request variations.
    Scale {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        include_seeds: Option<bool>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shuffle and split records into train and eval sets.
    Split {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        eval_out: PathBuf,
    },
    /// Write records as an instruct/output CSV.
    Export {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the fine-tuning configuration.
    EmitConfig {
        #[arg(long)]
        out: PathBuf,
    },
    /// Chunk a document and build a vector index.
    Index {
        #[arg(long)]
        doc: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        chunk_size: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
    },
    /// Answer a query with retrieval-augmented generation.
    RagAnswer {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Run the repeated evaluation protocol for one responder.
    Evaluate {
        #[arg(long, value_enum)]
        responder: ResponderKind,
        /// Eval set as instruct/output CSV or JSONL records.
        #[arg(long)]
        eval_set: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, value_enum, default_value = "local")]
        judge: JudgeKind,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Endpoint for the http responder.
        #[arg(long)]
        url: Option<String>,
        /// Index for the rag responder.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Reply text for the constant responder.
        #[arg(long, default_value = "")]
        text: String,
        #[arg(long, default_value_t = 120)]
        timeout_secs: u64,
    },
    /// Serve the mock NEF emulator until interrupted.
    ServeMock {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Plan and execute records against a NEF server.
    AgentRun {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        records: PathBuf,
        /// Server to call; without it a mock server is started for the run.
        #[arg(long)]
        base_url: Option<String>,
        #[arg(long, default_value = TEST_USERNAME)]
        username: String,
        #[arg(long, default_value = TEST_PASSWORD)]
        password: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// flatten → generate → refine → scale → split → export → emit-config.
    Pipeline {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SpecFormat {
    Json,
    Yaml,
}

#[derive(Clone, Copy, ValueEnum)]
enum ResponderKind {
    Echo,
    Constant,
    Http,
    Rag,
    Chat,
}

#[derive(Clone, Copy, ValueEnum)]
enum JudgeKind {
    Local,
    Llm,
}

type Res<T> = Result<T, PipelineError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

struct Ctx {
    cfg: PipelineConfig,
}

impl Ctx {
    fn load(cli: &Cli) -> Res<Self> {
        let mut cfg = match &cli.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::with_spec(PathBuf::new()),
        };
        if cli.config.is_none() {
            cfg.spec_paths.clear();
        }
        match cli.provider {
            Some(ProviderMode::Mock) => cfg.force_mock(),
            Some(ProviderMode::Live) => cfg.force_live(&ProviderConfig::openai("gpt-4")),
            None => {}
        }
        if let Some(seed) = cli.provider_seed {
            cfg.mock.seed = seed;
        }
        Ok(Self { cfg })
    }

    fn spec_paths(&self, args: &SpecArgs) -> Res<Vec<PathBuf>> {
        if !args.spec.is_empty() {
            return Ok(args.spec.clone());
        }
        if self.cfg.spec_paths.is_empty() {
            return Err(PipelineError::config("flatten", "", "no spec given; pass --spec or --config"));
        }
        Ok(self.cfg.spec_paths.iter().map(|p| self.cfg.resolve(p)).collect())
    }

    fn validate(&self, stage: &str) -> Res<()> {
        let mut probe = self.cfg.clone();
        if probe.spec_paths.is_empty() {
            probe.spec_paths.push(PathBuf::from("-"));
        }
        probe.validate().map_err(|m| PipelineError::config(stage, "config", m))
    }
}

/// Digest entry for a file that exists, recorded in run manifests.
#[derive(Serialize)]
struct Digest {
    path: String,
    sha256: String,
}

fn digest(path: &Path) -> Option<Digest> {
    std::fs::read(path).ok().map(|b| Digest {
        path: path.display().to_string(),
        sha256: sha256_hex(&b),
    })
}

#[derive(Serialize)]
struct CommandManifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    config_sha256: String,
    inputs: Vec<Digest>,
    outputs: Vec<Digest>,
}

/// Write `<first output>.manifest.json` describing the run.
fn manifest(ctx: &Ctx, command: &str, inputs: &[&Path], outputs: &[&Path]) -> Res<()> {
    let Some(first) = outputs.first() else { return Ok(()) };
    let m = CommandManifest {
        tool: "nefmind",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        config_sha256: ctx.cfg.content_hash(),
        inputs: inputs.iter().filter_map(|p| digest(p)).collect(),
        outputs: outputs.iter().filter_map(|p| digest(p)).collect(),
    };
    let mut name = first.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    let path = first.with_file_name(name);
    write_json_atomic(&path, &m).map_err(|e| PipelineError::config(command, &path, e))
}

fn put(stage: &str, path: &Path, bytes: &[u8]) -> Res<()> {
    write_atomic(path, bytes).map_err(|e| PipelineError::config(stage, path, e))
}

fn read_records(stage: &str, path: &Path) -> Res<Vec<SyntheticRecord>> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::config(stage, path, e))?;
    read_jsonl(std::io::BufReader::new(file)).map_err(|e| PipelineError::data(stage, path, e))
}

fn read_eval_set(path: &Path) -> Res<Vec<EvalItem>> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let file = std::fs::File::open(path).map_err(|e| PipelineError::config("evaluate", path, e))?;
        let pairs = import_instruct_csv(file).map_err(|e| PipelineError::data("evaluate", path, e))?;
        Ok(pairs.iter().map(EvalItem::from_pair).collect())
    } else {
        Ok(read_records("evaluate", path)?.iter().map(EvalItem::from_record).collect())
    }
}

fn print_json<T: Serialize>(value: &T) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer_pretty(&mut out, value);
    let _ = writeln!(out);
}

fn run(cli: Cli) -> Res<()> {
    let ctx = Ctx::load(&cli)?;
    match cli.command {
        Command::Flatten { spec, out, format } => {
            let paths = ctx.spec_paths(&spec)?;
            let flat = load_spec(&paths)?;
            let text = match format {
                SpecFormat::Json => format!("{}\n", flat.to_json_string()),
                SpecFormat::Yaml => flat.to_yaml_string(),
            };
            match out {
                Some(out) => {
                    put("flatten", &out, text.as_bytes())?;
                    let ins: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
                    manifest(&ctx, "flatten", &ins, &[&out])?;
                }
                None => print!("{text}"),
            }
        }
        Command::Generate { spec, out } => {
            let paths = ctx.spec_paths(&spec)?;
            let provider = ctx.cfg.provider(Role::Generation)?;
            let flat = load_spec(&paths)?;
            let g = generate(provider.as_ref(), &flat)?;
            put("generate", &out, &jsonl_bytes(&g.records))?;
            for m in &g.malformed {
                log::warn!("malformed entry {}: {}", m.index, m.reason);
            }
            eprintln!("{} records, {} malformed", g.records.len(), g.malformed.len());
            let ins: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
            manifest(&ctx, "generate", &ins, &[&out])?;
        }
        Command::Refine {
            spec,
            records,
            out,
            report,
        } => {
            let paths = ctx.spec_paths(&spec)?;
            let flat = load_spec(&paths)?;
            let recs = read_records("refine", &records)?;
            let outcome = refine(&flat, &recs);
            put("refine", &out, &jsonl_bytes(&outcome.kept))?;
            if let Some(report) = &report {
                write_json_atomic(report, &refine_report(&outcome))
                    .map_err(|e| PipelineError::config("refine", report, e))?;
            }
            for r in outcome.reports.iter().filter(|r| !r.is_valid()) {
                log::info!("record {} rejected: {:?}", r.record_index, r.codes());
            }
            eprintln!("kept {} of {}", outcome.kept.len(), recs.len());
            manifest(&ctx, "refine", &[&records], &[&out])?;
            if outcome.kept.is_empty() {
                return Err(PipelineError::data("refine", &records, "no record survived validation"));
            }
        }
        Command::Scale {
            spec,
            seeds,
            n,
            include_seeds,
            out,
        } => {
            let paths = ctx.spec_paths(&spec)?;
            let provider = ctx.cfg.provider(Role::Generation)?;
            let flat = load_spec(&paths)?;
            let seed_recs = read_records("scale", &seeds)?;
            let n = n.unwrap_or(ctx.cfg.scaling.n);
            let include = include_seeds.unwrap_or(ctx.cfg.scaling.include_seeds);
            let outcome = scale_dataset(provider.as_ref(), &flat, &seed_recs, n, include, &flat.to_json_string())
                .map_err(|e| PipelineError::data("scale", &seeds, e))?;
            for w in &outcome.warnings {
                log::warn!("{w}");
            }
            put("scale", &out, &jsonl_bytes(&outcome.records))?;
            eprintln!("{} records", outcome.records.len());
            manifest(&ctx, "scale", &[&seeds], &[&out])?;
        }
        Command::Split {
            records,
            ratio,
            seed,
            train_out,
            eval_out,
        } => {
            let recs = read_records("split", &records)?;
            let ratio = ratio.unwrap_or(ctx.cfg.split.ratio);
            let seed = seed.unwrap_or(ctx.cfg.split.seed);
            let split = split_dataset(&recs, ratio, seed).map_err(|e| split_error(&records, e))?;
            put("split", &train_out, &jsonl_bytes(&split.train))?;
            put("split", &eval_out, &jsonl_bytes(&split.eval))?;
            eprintln!("train {}, eval {}", split.train.len(), split.eval.len());
            manifest(&ctx, "split", &[&records], &[&train_out, &eval_out])?;
        }
        Command::Export { records, out } => {
            let recs = read_records("export", &records)?;
            put("export", &out, &csv_bytes(&recs))?;
            eprintln!("{} rows", recs.len());
            manifest(&ctx, "export", &[&records], &[&out])?;
        }
        Command::EmitConfig { out } => {
            let (q, t) = tuned_defaults();
            let mut buf = Vec::new();
            emit_config(&q, &t, &mut buf).map_err(|e| PipelineError::data("emit-config", &out, e))?;
            put("emit-config", &out, &buf)?;
            manifest(&ctx, "emit-config", &[], &[&out])?;
        }
        Command::Index {
            doc,
            out,
            chunk_size,
            overlap,
        } => {
            let text = std::fs::read_to_string(&doc).map_err(|e| PipelineError::config("index", &doc, e))?;
            let cfg = SplitConfig::new(
                chunk_size.unwrap_or(ctx.cfg.chunking.chunk_size),
                overlap.unwrap_or(ctx.cfg.chunking.overlap),
            );
            let chunks = split_with(&text, &cfg).map_err(|e| PipelineError::config("index", &doc, e))?;
            let provider = ctx.cfg.provider(Role::Embedding)?;
            let index = build_index(&chunks, provider.as_ref()).map_err(|e| PipelineError::data("index", &doc, e))?;
            let mut buf = Vec::new();
            index.write_to(&mut buf).map_err(|e| PipelineError::data("index", &out, e))?;
            put("index", &out, &buf)?;
            eprintln!("{} chunks, dim {}, {}", index.len(), index.dimension(), index.content_hash());
            manifest(&ctx, "index", &[&doc], &[&out])?;
        }
        Command::RagAnswer { index, query, k } => {
            let idx = read_index(&index)?;
            let provider = rag_provider(&ctx)?;
            let k = k.unwrap_or(ctx.cfg.chunking.k);
            let answer = answer_query(&idx, &query, k, &provider).map_err(|e| PipelineError::data("rag-answer", &index, e))?;
            print_json(&answer);
        }
        Command::Evaluate {
            responder,
            eval_set,
            iterations,
            judge,
            out_dir,
            url,
            index,
            text,
            timeout_secs,
        } => {
            ctx.validate("evaluate")?;
            let items = read_eval_set(&eval_set)?;
            let timeout = Duration::from_secs(timeout_secs);
            let responder: Box<dyn Responder> = match responder {
                ResponderKind::Echo => Box::new(EchoResponder::new(&items)),
                ResponderKind::Constant => Box::new(ConstantResponder::new(text)),
                ResponderKind::Http => {
                    let url = url.ok_or_else(|| PipelineError::config("evaluate", "--url", "http responder needs --url"))?;
                    Box::new(
                        HttpResponder::new("http", &url, timeout)
                            .map_err(|e| PipelineError::config("evaluate", &url, e))?,
                    )
                }
                ResponderKind::Rag => {
                    let path =
                        index.ok_or_else(|| PipelineError::config("evaluate", "--index", "rag responder needs --index"))?;
                    let idx = Arc::new(read_index(&path)?);
                    Box::new(RagResponder::new(idx, rag_provider(&ctx)?, ctx.cfg.chunking.k))
                }
                ResponderKind::Chat => Box::new(ChatResponder::new(ctx.cfg.provider(Role::Generation)?, CHAT_SYSTEM)),
            };
            let judge: Box<dyn Judge> = match judge {
                JudgeKind::Local => Box::new(LocalJudge),
                JudgeKind::Llm => Box::new(LlmJudge::new(ctx.cfg.provider(Role::Judge)?)),
            };
            let embedder = ctx.cfg.provider(Role::Embedding)?;
            let dir = out_dir.unwrap_or_else(|| ctx.cfg.artifact_dir().join("eval"));
            let iterations = iterations.unwrap_or(ctx.cfg.eval.iterations);
            let summary = run_protocol(responder.as_ref(), &items, judge.as_ref(), embedder.as_ref(), iterations, &dir)
                .map_err(|e| PipelineError::data("evaluate", &dir, e))?;
            print_json(&summary);
        }
        Command::ServeMock { spec, bind } => {
            let paths = ctx.spec_paths(&spec)?;
            let flat = load_spec(&paths)?;
            let bind = bind.unwrap_or_else(|| ctx.cfg.mock_server.bind_address.clone());
            let fixtures = ServerFixtures::standard(&flat);
            let server = serve(flat, &bind, fixtures).map_err(|e| PipelineError::config("serve-mock", &bind, e))?;
            println!("{}", server.base_url());
            server.wait().map_err(|e| PipelineError::config("serve-mock", &bind, e))?;
        }
        Command::AgentRun {
            spec,
            records,
            base_url,
            username,
            password,
            out,
        } => {
            let paths = ctx.spec_paths(&spec)?;
            let flat = load_spec(&paths)?;
            let recs = read_records("agent-run", &records)?;
            let creds = Credentials::new(username, password);
            let mut local = None;
            let url = match base_url {
                Some(u) => u,
                None => {
                    let fixtures = ServerFixtures::standard(&flat);
                    let s = serve(flat.clone(), "127.0.0.1:0", fixtures)
                        .map_err(|e| PipelineError::config("agent-run", "127.0.0.1:0", e))?;
                    let u = s.base_url();
                    local = Some(s);
                    u
                }
            };
            let mut session =
                AgentSession::new(&url, Duration::from_secs(30)).map_err(|e| PipelineError::config("agent-run", &url, e))?;
            let report = run_records(&recs, &flat, &creds, &mut session)
                .map_err(|e| PipelineError::config("agent-run", &url, e))?;
            #[derive(Serialize)]
            struct Summary<'a> {
                base_url: &'a str,
                succeeded: usize,
                total: usize,
                pass_rate: f64,
                server_log: Option<Vec<nefmind::mock_server::LogEntry>>,
                outcomes: &'a [nefmind::agent::RecordOutcome],
            }
            let summary = Summary {
                base_url: &url,
                succeeded: report.succeeded,
                total: report.outcomes.len(),
                pass_rate: report.pass_rate,
                server_log: local.as_ref().map(|s| s.request_log()),
                outcomes: &report.outcomes,
            };
            match &out {
                Some(out) => {
                    write_json_atomic(out, &summary).map_err(|e| PipelineError::config("agent-run", out, e))?;
                    manifest(&ctx, "agent-run", &[&records], &[out])?;
                }
                None => print_json(&summary),
            }
            eprintln!("{} of {} records succeeded", report.succeeded, report.outcomes.len());
            if report.succeeded < report.outcomes.len() {
                return Err(PipelineError::data("agent-run", &records, "some records failed"));
            }
        }
        Command::Pipeline { out_dir } => {
            if ctx.cfg.spec_paths.is_empty() {
                return Err(PipelineError::config("pipeline", "--config", "pipeline needs --config"));
            }
            ctx.validate("pipeline")?;
            let dir = out_dir.unwrap_or_else(|| ctx.cfg.artifact_dir());
            let m = run_pipeline(&ctx.cfg, &dir)?;
            let counts: BTreeMap<&str, usize> = BTreeMap::from([
                ("generated", m.counts.generated),
                ("refined", m.counts.refined),
                ("scaled", m.counts.scaled),
                ("train", m.counts.train),
                ("eval", m.counts.eval),
            ]);
            for w in &m.warnings {
                log::warn!("{w}");
            }
            eprintln!("wrote {}", dir.display());
            print_json(&serde_json::json!({ "out_dir": dir, "counts": counts, "manifest": m }));
        }
    }
    Ok(())
}

fn read_index(path: &Path) -> Res<VectorIndex> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::config("index", path, e))?;
    VectorIndex::read_from(std::io::BufReader::new(file)).map_err(|e| PipelineError::data("index", path, e))
}

fn rag_provider(ctx: &Ctx) -> Res<RoleProvider> {
    Ok(RoleProvider::new(
        ctx.cfg.provider(Role::Generation)?,
        ctx.cfg.provider(Role::Embedding)?,
    ))
}

fn split_error(records: &Path, e: SynthError) -> PipelineError {
    match e {
        SynthError::InvalidRatio(_) => PipelineError::config("split", "--ratio", e),
        other => PipelineError::data("split", records, other),
    }
}
