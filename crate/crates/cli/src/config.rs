//! Run configuration: one JSON file per decode run.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use logit_ensemble::backend::{Backend, HashBackend, HttpBackend, HttpOptions, ScriptedBackend};
use logit_ensemble::pipeline::{MergeMode, PipelineKind};
use logit_ensemble::{SamplingPolicy, StrategyConfig, StrategyKind, TokenId, Vocabulary};

/// Overrides `backend.endpoint` of an `http` backend.
pub const ENDPOINT_ENV: &str = "LOGIT_ENSEMBLE_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    ToyHash {
        seed: u64,
        vocab: Vocabulary,
        m: usize,
        force_after: usize,
    },
    ToyScripted {
        path: PathBuf,
        delimiter: Vec<TokenId>,
    },
    Http {
        endpoint: String,
        delimiter: Vec<TokenId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        top: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendSpec,
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub sampling: SamplingPolicy,
    #[serde(default)]
    pub merge_mode: MergeMode,
    #[serde(default)]
    pub pipeline: PipelineKind,
    /// Prompts JSONL, relative to the config file.
    pub prompts: PathBuf,
    /// Output JSONL, relative to the config file.
    pub output: PathBuf,
    #[serde(default)]
    pub solo_answers: bool,
    /// Worker threads; defaults to the number of logical CPUs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug)]
pub enum ConfigError {
    Io(PathBuf, std::io::Error),
    /// A field failed to parse or validate; `path` locates it in the document.
    Field { path: String, message: String },
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            ConfigError::Field { path, message } => write!(f, "at `{path}`: {message}"),
            ConfigError::Invalid(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Field {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads the file and resolves `prompts`, `output` and a scripted
    /// backend's `path` against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.prompts = base.join(&config.prompts);
        config.output = base.join(&config.output);
        if let BackendSpec::ToyScripted { path, .. } = &mut config.backend {
            *path = base.join(&*path);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sampling.validate().map_err(|e| field("sampling", e))?;
        self.strategy.validate().map_err(|e| field("strategy", e))?;
        if self.pipeline == PipelineKind::OneStep && self.strategy.kind != StrategyKind::DirectMerge {
            return Err(ConfigError::Field {
                path: "pipeline".into(),
                message: format!(
                    "one_step requires strategy.kind = direct_merge, got {}",
                    serde_json::to_string(&self.strategy.kind).unwrap_or_default()
                ),
            });
        }
        if self.pipeline == PipelineKind::OneStep && self.strategy.trim_suffix {
            return Err(ConfigError::Field {
                path: "strategy.trim_suffix".into(),
                message: "one_step cannot trim reasoning; use the two_stage pipeline".into(),
            });
        }
        if self.workers == Some(0) {
            return Err(ConfigError::Field { path: "workers".into(), message: "must be at least 1".into() });
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of everything that influences the
    /// records. File locations and worker count are left out; a scripted
    /// backend contributes the digest of its script file instead of its path.
    pub fn hash(&self) -> Result<String, ConfigError> {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let obj = value.as_object_mut().expect("config is an object");
        for key in ["prompts", "output", "workers"] {
            obj.remove(key);
        }
        if let BackendSpec::ToyScripted { path, .. } = &self.backend {
            let bytes = fs::read(path).map_err(|e| ConfigError::Io(path.clone(), e))?;
            let backend = obj["backend"].as_object_mut().expect("backend is an object");
            backend.remove("path");
            backend.insert("script_sha256".into(), hex(&Sha256::digest(&bytes)).into());
        }
        Ok(hex(&Sha256::digest(value.to_string().as_bytes())))
    }

    /// Instantiates the backend and the session vocabulary, checking that a
    /// one-step run gets a backend with mask support.
    pub fn build_backend(&self) -> Result<(Box<dyn Backend>, Vocabulary), ConfigError> {
        let (backend, delimiter): (Box<dyn Backend>, &[TokenId]) = match &self.backend {
            BackendSpec::ToyHash { seed, vocab, m, force_after } => {
                let b = HashBackend::for_vocabulary(vocab, *seed, *m, *force_after).map_err(|e| field("backend", e))?;
                (Box::new(b), vocab.delimiter())
            }
            BackendSpec::ToyScripted { path, delimiter } => {
                let b = ScriptedBackend::load(path).map_err(|e| field("backend.path", e))?;
                (Box::new(b), delimiter)
            }
            BackendSpec::Http { endpoint, delimiter, top } => {
                let endpoint = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| endpoint.clone());
                let options = HttpOptions { top: *top, ..HttpOptions::default() };
                let b = HttpBackend::connect(&endpoint, options)
                    .map_err(|e| ConfigError::Invalid(format!("backend {endpoint}: {e}")))?;
                (Box::new(b), delimiter)
            }
        };
        let d = backend.descriptor();
        let vocab = Vocabulary::new(d.vocab_size, d.eos_id, d.pad_id, delimiter.to_vec())
            .map_err(|e| field("backend.delimiter", e))?;
        if self.pipeline == PipelineKind::OneStep && !d.supports_mask {
            return Err(ConfigError::Field {
                path: "pipeline".into(),
                message: "one_step requires a backend with supports_mask = true".into(),
            });
        }
        Ok((backend, vocab))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn field(path: &str, e: impl fmt::Display) -> ConfigError {
    ConfigError::Field { path: path.into(), message: e.to_string() }
}
