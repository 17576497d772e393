//! Config file loading, flag overrides, and backend construction.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{Map, Value};
use sqlrank::rank::{
    BackendKind, BackendSpec, Backends, CachedChatClient, ChatClient, HttpChatClient, LlmBackends,
    PromptOptions, ResponseCache, StubBackend, StubTable,
};
use sqlrank::{
    ConfigError, FinalTie, MergePolicy, OrderPolicy, Parallelism, ResamplingMode, SelectionConfig,
    SelectionMode,
};

/// Parses a snake_case enum value the same way the config file does.
pub fn enum_arg<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Flags shared by every subcommand. Anything set here beats the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON file with selection settings plus optional `backend`, `backends`,
    /// `stub_file` and `cache_dir` keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Which model backend to use: stub or http.
    #[arg(long, global = true, value_parser = enum_arg::<BackendChoice>)]
    pub backend: Option<BackendChoice>,
    /// Stub response table (stub backend only).
    #[arg(long, global = true)]
    pub stub_file: Option<PathBuf>,
    /// Directory for the persistent HTTP response cache.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Concurrent requests per HTTP backend; 1 also disables data parallelism.
    #[arg(long, global = true)]
    pub max_parallel: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Pool size kept for ranking.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Resample batch size.
    #[arg(long, global = true)]
    pub m: Option<usize>,
    #[arg(long, global = true)]
    pub lambda_c: Option<f64>,
    #[arg(long, global = true, value_parser = enum_arg::<OrderPolicy>)]
    pub order_policy: Option<OrderPolicy>,
    #[arg(long, global = true)]
    pub float_tol: Option<f64>,
    #[arg(long, global = true)]
    pub exec_timeout_ms: Option<u64>,
    #[arg(long, global = true)]
    pub order_sensitive: Option<bool>,
    #[arg(long, global = true, value_parser = enum_arg::<ResamplingMode>)]
    pub resampling: Option<ResamplingMode>,
    #[arg(long, global = true, value_parser = enum_arg::<MergePolicy>)]
    pub merge: Option<MergePolicy>,
    /// r3, fmv, pointwise, pointwise_avg or listwise.
    #[arg(long, global = true, value_parser = enum_arg::<SelectionMode>)]
    pub mode: Option<SelectionMode>,
    #[arg(long, global = true, value_parser = enum_arg::<FinalTie>)]
    pub final_tie: Option<FinalTie>,
    #[arg(long, global = true)]
    pub max_pairs: Option<usize>,
    #[arg(long, global = true)]
    pub token_budget: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Stub,
    Http,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RoleSpecs {
    default: Option<BackendSpec>,
    pointwise: Option<BackendSpec>,
    pairwise: Option<BackendSpec>,
    judge: Option<BackendSpec>,
    generator: Option<BackendSpec>,
}

/// Everything a command needs after merging defaults, file, and flags.
pub struct Settings {
    pub selection: SelectionConfig,
    pub backends: Backends,
}

fn take<T: DeserializeOwned>(
    obj: &mut Map<String, Value>,
    key: &str,
    file: &Path,
) -> Result<Option<T>, ConfigError> {
    obj.remove(key)
        .map(|v| {
            serde_json::from_value(v)
                .map_err(|e| ConfigError::parse(format!("{key} in {}", file.display()), e))
        })
        .transpose()
}

struct FileConfig {
    selection: SelectionConfig,
    backend: Option<BackendChoice>,
    roles: RoleSpecs,
    stub_file: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
}

fn load_file(path: Option<&Path>) -> Result<FileConfig, ConfigError> {
    let Some(path) = path else {
        return Ok(FileConfig {
            selection: SelectionConfig::default(),
            backend: None,
            roles: RoleSpecs::default(),
            stub_file: None,
            cache_dir: None,
        });
    };
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::io(path, e))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| ConfigError::parse(path.display().to_string(), e))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| ConfigError::parse(path.display().to_string(), "expected a JSON object"))?;
    // relative paths in the file are relative to the file
    let base = path.parent().unwrap_or(Path::new("."));
    let backend = take(obj, "backend", path)?;
    let roles = take(obj, "backends", path)?.unwrap_or_default();
    let stub_file = take::<PathBuf>(obj, "stub_file", path)?.map(|p| base.join(p));
    let cache_dir = take::<PathBuf>(obj, "cache_dir", path)?.map(|p| base.join(p));
    let selection = serde_json::from_value(value)
        .map_err(|e| ConfigError::parse(path.display().to_string(), e))?;
    Ok(FileConfig {
        selection,
        backend,
        roles,
        stub_file,
        cache_dir,
    })
}

impl Common {
    fn apply(&self, cfg: &mut SelectionConfig) {
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$field = v; })*
            };
        }
        set!(
            seed => seed,
            tau => tau,
            n => n,
            m => m,
            lambda_c => lambda_c,
            order_policy => order_policy,
            float_tol => float_tol,
            exec_timeout_ms => exec_timeout_ms,
            order_sensitive => order_sensitive,
            resampling => resampling,
            merge => merge,
            mode => mode,
            final_tie => final_tie,
            token_budget => prompt_token_budget,
        );
        if let Some(p) = self.max_pairs {
            cfg.max_pairs_per_group_pair = Some(p);
        }
        if self.max_parallel == Some(1) {
            cfg.parallelism = Parallelism::Sequential;
        }
    }

    pub fn settings(&self) -> Result<Settings, ConfigError> {
        let file = load_file(self.config.as_deref())?;
        let mut selection = file.selection;
        self.apply(&mut selection);
        selection.validate()?;

        let choice = self.backend.or(file.backend).unwrap_or(BackendChoice::Stub);
        match choice {
            BackendChoice::Stub => {
                let path = self.stub_file.clone().or(file.stub_file).ok_or_else(|| {
                    ConfigError::Invalid(
                        "the stub backend needs --stub-file (or stub_file in --config)".into(),
                    )
                })?;
                let stub = Arc::new(StubBackend::new(StubTable::load(&path)?));
                Ok(Settings {
                    selection,
                    backends: Backends::from_stub(stub),
                })
            }
            BackendChoice::Http => {
                let cache = match self.cache_dir.clone().or(file.cache_dir) {
                    Some(dir) => Some(Arc::new(ResponseCache::open(&dir)?)),
                    None => None,
                };
                let roles = &file.roles;
                let client =
                    |own: &Option<BackendSpec>| -> Result<Arc<dyn ChatClient>, ConfigError> {
                        let mut spec = own
                            .clone()
                            .or_else(|| roles.default.clone())
                            .unwrap_or_default();
                        spec.kind = BackendKind::HttpLlm;
                        if let Some(p) = self.max_parallel {
                            spec.max_parallel = p;
                        }
                        let http: Arc<dyn ChatClient> = Arc::new(HttpChatClient::new(spec)?);
                        Ok(match &cache {
                            Some(c) => Arc::new(CachedChatClient::new(http, c.clone())),
                            None => http,
                        })
                    };
                let llm = LlmBackends::new(
                    client(&roles.pointwise)?,
                    client(&roles.pairwise)?,
                    client(&roles.judge)?,
                    client(&roles.generator)?,
                    PromptOptions::from(&selection),
                );
                Ok(Settings {
                    selection,
                    backends: Backends::from_llm(Arc::new(llm)),
                })
            }
        }
    }
}
