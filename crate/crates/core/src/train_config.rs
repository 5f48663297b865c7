//! Fine-tuning hyperparameters handed to the external trainer, and the
//! statistics file it writes back.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    None,
    All,
    LoraOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QloraConfig {
    pub lora_alpha: u32,
    pub lora_dropout: f64,
    pub lora_rank: u32,
    pub target_modules: Vec<String>,
    pub bias_mode: BiasMode,
    pub task_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub epochs: u32,
    pub batch_size: u32,
    pub gradient_accumulation_steps: u32,
    pub optimizer_name: String,
    pub save_steps: u32,
    pub logging_steps: u32,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub bf16: bool,
    pub max_grad_norm: f64,
    /// -1 means bounded by epochs only.
    pub max_steps: i64,
    pub group_by_length: bool,
    pub scheduler_type: String,
    pub report_target: String,
    /// Passed through to model loading untouched.
    pub flash_attention: bool,
    pub load_quantized: bool,
}

/// The document written to `tuning-config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    pub qlora: QloraConfig,
    pub trainer: TrainerConfig,
    pub schema_version: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unsupported schema_version {0}")]
    SchemaVersion(u32),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}` is not finite")]
    NonFinite { field: &'static str },
    #[error("field `{field}` is negative")]
    Negative { field: &'static str },
    #[error("field `{field}` is not a number")]
    NotANumber { field: &'static str },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

impl QloraConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.lora_alpha == 0 {
            return Err(invalid("lora_alpha", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.lora_dropout) {
            return Err(invalid("lora_dropout", format!("{} is outside [0, 1)", self.lora_dropout)));
        }
        if self.lora_rank == 0 {
            return Err(invalid("lora_rank", "must be at least 1"));
        }
        if self.target_modules.is_empty() || self.target_modules.iter().any(|m| m.trim().is_empty()) {
            return Err(invalid("target_modules", "must be a non-empty list of names"));
        }
        if self.task_type.trim().is_empty() {
            return Err(invalid("task_type", "is empty"));
        }
        Ok(())
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("gradient_accumulation_steps", self.gradient_accumulation_steps),
            ("save_steps", self.save_steps),
            ("logging_steps", self.logging_steps),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(invalid(field, "must be positive"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(invalid("learning_rate", format!("{} is outside (0, 1)", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(invalid("weight_decay", "must be non-negative"));
        }
        if !(0.0..0.5).contains(&self.warmup_ratio) {
            return Err(invalid("warmup_ratio", format!("{} is outside [0, 0.5)", self.warmup_ratio)));
        }
        if !(self.max_grad_norm > 0.0) || !self.max_grad_norm.is_finite() {
            return Err(invalid("max_grad_norm", "must be positive"));
        }
        if self.max_steps < -1 || self.max_steps == 0 {
            return Err(invalid("max_steps", "must be -1 or positive"));
        }
        for (field, v) in [
            ("optimizer_name", &self.optimizer_name),
            ("scheduler_type", &self.scheduler_type),
            ("report_target", &self.report_target),
        ] {
            if v.trim().is_empty() {
                return Err(invalid(field, "is empty"));
            }
        }
        Ok(())
    }
}

impl TuningConfig {
    pub fn new(qlora: QloraConfig, trainer: TrainerConfig) -> Self {
        Self {
            qlora,
            trainer,
            schema_version: SCHEMA_VERSION,
        }
    }

    pub fn tuned_defaults() -> Self {
        let (q, t) = tuned_defaults();
        Self::new(q, t)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion(self.schema_version));
        }
        self.qlora.validate()?;
        self.trainer.validate()
    }
}

/// QLoRA and SFT trainer settings used for the Phi-2 fine-tune.
pub fn tuned_defaults() -> (QloraConfig, TrainerConfig) {
    let qlora = QloraConfig {
        lora_alpha: 16,
        lora_dropout: 0.1,
        lora_rank: 64,
        target_modules: ["q_proj", "k_proj", "v_proj", "dense", "fc1", "fc2"]
            .map(String::from)
            .to_vec(),
        bias_mode: BiasMode::None,
        task_type: "CAUSAL_LM".into(),
    };
    let trainer = TrainerConfig {
        epochs: 5,
        batch_size: 3,
        gradient_accumulation_steps: 1,
        optimizer_name: "paged_adamw_32bit".into(),
        save_steps: 10,
        logging_steps: 10,
        learning_rate: 2e-4,
        weight_decay: 0.001,
        warmup_ratio: 0.03,
        bf16: true,
        max_grad_norm: 0.3,
        max_steps: -1,
        group_by_length: true,
        scheduler_type: "constant".into(),
        report_target: "tensorboard".into(),
        flash_attention: true,
        load_quantized: false,
    };
    (qlora, trainer)
}

/// Validate, then write the pretty-printed config with a trailing newline.
pub fn emit_config<W: Write>(q: &QloraConfig, t: &TrainerConfig, mut sink: W) -> Result<(), ConfigError> {
    let cfg = TuningConfig::new(q.clone(), t.clone());
    cfg.validate()?;
    let mut text = serde_json::to_string_pretty(&cfg)?;
    text.push('\n');
    sink.write_all(text.as_bytes())?;
    sink.flush()?;
    Ok(())
}

pub fn load_config<R: Read>(source: R) -> Result<TuningConfig, ConfigError> {
    let cfg: TuningConfig = serde_json::from_reader(source)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Run statistics reported by the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub runtime_seconds: f64,
    pub samples_per_second: f64,
    pub steps_per_second: f64,
    pub total_flo: f64,
    pub final_loss: f64,
}

const STATS_FIELDS: [&str; 5] = [
    "runtime_seconds",
    "samples_per_second",
    "steps_per_second",
    "total_flo",
    "final_loss",
];

/// Parse `training-stats.json`. Python's encoder writes bare `NaN` and
/// `Infinity`, which are rejected here as non-finite rather than as syntax.
/// Unknown fields (trainer metadata) are ignored.
pub fn load_stats<R: Read>(mut source: R) -> Result<TrainingStats, ConfigError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let doc: Value = serde_json::from_str(&quote_non_finite(&text))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| invalid("stats", "document is not a JSON object"))?;
    let mut values = [0.0f64; 5];
    for (slot, field) in values.iter_mut().zip(STATS_FIELDS) {
        let v = match obj.get(field) {
            None | Some(Value::Null) => return Err(ConfigError::MissingField(field)),
            Some(Value::Number(n)) => n.as_f64().ok_or(ConfigError::NonFinite { field })?,
            Some(Value::String(s)) if is_non_finite_token(s) => return Err(ConfigError::NonFinite { field }),
            Some(_) => return Err(ConfigError::NotANumber { field }),
        };
        if !v.is_finite() {
            return Err(ConfigError::NonFinite { field });
        }
        if v < 0.0 {
            return Err(ConfigError::Negative { field });
        }
        *slot = v;
    }
    let [runtime_seconds, samples_per_second, steps_per_second, total_flo, final_loss] = values;
    Ok(TrainingStats {
        runtime_seconds,
        samples_per_second,
        steps_per_second,
        total_flo,
        final_loss,
    })
}

fn is_non_finite_token(s: &str) -> bool {
    matches!(s, "NaN" | "Infinity" | "-Infinity")
}

/// Wrap bare NaN / Infinity / -Infinity tokens outside strings in quotes.
fn quote_non_finite(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
            out.push(c);
            rest = &rest[1..];
            continue;
        }
        if let Some(tok) = ["-Infinity", "Infinity", "NaN"].into_iter().find(|t| rest.starts_with(t)) {
            out.push('"');
            out.push_str(tok);
            out.push('"');
            rest = &rest[tok.len()..];
            continue;
        }
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}
