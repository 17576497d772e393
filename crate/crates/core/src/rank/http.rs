//! OpenAI-compatible chat-completions backends.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::cache::{cache_key, ResponseCache};
use super::prompt::{
    render_prompt, render_result, ChatMessage, PromptOptions, PromptPayload, Role,
};
use super::{GeneratorBackend, JudgeBackend, PairwiseBackend, PointwiseBackend};
use crate::error::{BackendError, ConfigError};
use crate::exec::read_schema;
use crate::model::{Candidate, Pass, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpLlm,
    #[default]
    Stub,
}

/// Where and how to reach one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    /// Base URL such as `http://localhost:8000/v1`.
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub max_parallel: usize,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub retries: u32,
    pub request_timeout_ms: u64,
    /// Ask the server to continue a trailing assistant message (vLLM style).
    pub continue_final_message: bool,
}

impl Default for BackendSpec {
    fn default() -> Self {
        Self {
            kind: BackendKind::Stub,
            endpoint: None,
            model_name: None,
            temperature: 0.0,
            max_tokens: None,
            max_parallel: 8,
            api_key_env: None,
            retries: 2,
            request_timeout_ms: 300_000,
            continue_final_message: false,
        }
    }
}

impl BackendSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_parallel == 0 {
            return Err(ConfigError::Invalid(
                "max_parallel must be at least 1".into(),
            ));
        }
        if self.kind == BackendKind::HttpLlm
            && (self.endpoint.is_none() || self.model_name.is_none())
        {
            return Err(ConfigError::Invalid(
                "http_llm backends need both endpoint and model_name".into(),
            ));
        }
        Ok(())
    }
}

/// Per-call sampling parameters; `seq` distinguishes repeated samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub seq: usize,
}

pub trait ChatClient: Send + Sync {
    fn spec(&self) -> &BackendSpec;
    fn chat(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<String, BackendError>;
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().expect("gate lock");
            while *free == 0 {
                free = self.cv.wait(free).expect("gate lock");
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().expect("gate lock") += 1;
        self.cv.notify_one();
        out
    }
}

pub struct HttpChatClient {
    spec: BackendSpec,
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl HttpChatClient {
    pub fn new(spec: BackendSpec) -> Result<Self, ConfigError> {
        spec.validate()?;
        let endpoint = spec
            .endpoint
            .clone()
            .ok_or_else(|| ConfigError::Invalid("http backend without endpoint".into()))?;
        let url = if endpoint.ends_with("/chat/completions") {
            endpoint
        } else {
            format!("{}/chat/completions", endpoint.trim_end_matches('/'))
        };
        let api_key = match &spec.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ConfigError::Invalid(format!(
                    "environment variable {var} (api_key_env) is not set"
                ))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(spec.request_timeout_ms))
            .build()
            .map_err(|e| ConfigError::Invalid(format!("cannot build HTTP client: {e}")))?;
        let gate = Gate::new(spec.max_parallel);
        Ok(Self {
            spec,
            url,
            api_key,
            client,
            gate,
        })
    }

    fn request_body(&self, messages: &[ChatMessage], params: &SamplingParams) -> Value {
        let mut body = json!({
            "model": self.spec.model_name,
            "messages": messages,
            "temperature": params.temperature,
            "n": 1,
        });
        if let Some(max) = params.max_tokens {
            body["max_tokens"] = json!(max);
        }
        if self.spec.continue_final_message
            && messages.last().is_some_and(|m| m.role == Role::Assistant)
        {
            body["continue_final_message"] = json!(true);
            body["add_generation_prompt"] = json!(false);
        }
        body
    }

    fn send_once(&self, body: &Value) -> Result<String, BackendError> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        let v: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))
    }
}

fn retryable(e: &BackendError) -> bool {
    match e {
        BackendError::Transport(_) => true,
        BackendError::Status { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl ChatClient for HttpChatClient {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn chat(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<String, BackendError> {
        let body = self.request_body(messages, params);
        self.gate.run(|| {
            let mut attempt = 0;
            loop {
                match self.send_once(&body) {
                    Ok(text) => return Ok(text),
                    Err(e) if attempt < self.spec.retries && retryable(&e) => {
                        log::warn!("{}: {e}; retrying", self.url);
                        std::thread::sleep(Duration::from_millis(250 << attempt));
                        attempt += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        })
    }
}

/// Serves repeated calls from a [`ResponseCache`].
pub struct CachedChatClient {
    inner: Arc<dyn ChatClient>,
    cache: Arc<ResponseCache>,
}

impl CachedChatClient {
    pub fn new(inner: Arc<dyn ChatClient>, cache: Arc<ResponseCache>) -> Self {
        Self { inner, cache }
    }
}

impl ChatClient for CachedChatClient {
    fn spec(&self) -> &BackendSpec {
        self.inner.spec()
    }

    fn chat(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<String, BackendError> {
        let key = cache_key(self.inner.spec(), messages, params);
        self.cache
            .get_or_call(&key, || self.inner.chat(messages, params))
    }
}

const POINTWISE_SYSTEM: &str = "You are a SQL reward model. Given a database schema, a question, and a candidate SQL query with its execution result, rate how likely the query is to answer the question correctly. Reply with a single real number; higher means more likely correct.";

/// First finite number appearing in `text`.
fn first_number(text: &str) -> Option<f64> {
    text.split(|c: char| !(c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E')))
        .filter(|t| t.chars().any(|c| c.is_ascii_digit()))
        .find_map(|t| {
            // longest parseable prefix, so "0.75." reads as 0.75
            (1..=t.len())
                .rev()
                .find_map(|n| t[..n].parse::<f64>().ok().filter(|x| x.is_finite()))
        })
}

/// All four roles served by chat-completions clients.
pub struct LlmBackends {
    pub pointwise: Arc<dyn ChatClient>,
    pub pairwise: Arc<dyn ChatClient>,
    pub judge: Arc<dyn ChatClient>,
    pub generator: Arc<dyn ChatClient>,
    pub prompt: PromptOptions,
    schemas: Mutex<HashMap<PathBuf, String>>,
}

impl LlmBackends {
    pub fn new(
        pointwise: Arc<dyn ChatClient>,
        pairwise: Arc<dyn ChatClient>,
        judge: Arc<dyn ChatClient>,
        generator: Arc<dyn ChatClient>,
        prompt: PromptOptions,
    ) -> Self {
        Self {
            pointwise,
            pairwise,
            judge,
            generator,
            prompt,
            schemas: Mutex::new(HashMap::new()),
        }
    }

    fn schema(&self, task: &Task) -> Result<String, BackendError> {
        if let Some(s) = self.schemas.lock().expect("schema lock").get(&task.db_ref) {
            return Ok(s.clone());
        }
        let schema =
            read_schema(&task.db_ref).map_err(|e| BackendError::Misconfigured(e.to_string()))?;
        self.schemas
            .lock()
            .expect("schema lock")
            .insert(task.db_ref.clone(), schema.clone());
        Ok(schema)
    }

    fn params(client: &dyn ChatClient, seq: usize) -> SamplingParams {
        SamplingParams {
            temperature: client.spec().temperature,
            max_tokens: client.spec().max_tokens,
            seq,
        }
    }
}

impl PointwiseBackend for LlmBackends {
    fn score(&self, task: &Task, cand: &Candidate) -> Result<f64, BackendError> {
        let schema = self.schema(task)?;
        let question = if task.evidence.is_empty() {
            task.question.clone()
        } else {
            format!("{}\n{}", task.evidence, task.question)
        };
        let user = format!(
            "Database Schema\n{schema}\n\nQuestion:\n{question}\n\nCandidate SQL\n{}\nExecution result\n{}",
            cand.sql,
            render_result(cand.outcome.as_ref(), Some(self.prompt.judge_preview_rows)),
        );
        let msgs = vec![
            ChatMessage::new(Role::System, POINTWISE_SYSTEM),
            ChatMessage::new(Role::User, user),
        ];
        let text = self
            .pointwise
            .chat(&msgs, &Self::params(self.pointwise.as_ref(), 0))?;
        first_number(&text)
            .ok_or_else(|| BackendError::Protocol(format!("no score in pointwise reply {text:?}")))
    }
}

impl PairwiseBackend for LlmBackends {
    fn answer(
        &self,
        task: &Task,
        first: &Candidate,
        second: &Candidate,
        attempt: u32,
    ) -> Result<String, BackendError> {
        let schema = self.schema(task)?;
        let msgs = render_prompt(
            task,
            PromptPayload::Pairwise {
                schema: &schema,
                a: first,
                b: second,
            },
            &self.prompt,
        );
        self.pairwise.chat(
            &msgs,
            &Self::params(self.pairwise.as_ref(), attempt as usize),
        )
    }
}

impl JudgeBackend for LlmBackends {
    fn respond(
        &self,
        task: &Task,
        pool: &[Candidate],
        attempt: u32,
    ) -> Result<String, BackendError> {
        let schema = self.schema(task)?;
        let msgs = render_prompt(
            task,
            PromptPayload::Judge {
                schema: &schema,
                pool,
            },
            &self.prompt,
        );
        self.judge
            .chat(&msgs, &Self::params(self.judge.as_ref(), attempt as usize))
    }
}

impl GeneratorBackend for LlmBackends {
    fn complete(&self, task: &Task, pass: Pass, seq: usize) -> Result<String, BackendError> {
        let schema = self.schema(task)?;
        let msgs = render_prompt(
            task,
            PromptPayload::Generate { schema: &schema },
            &self.prompt,
        );
        // resampled draws must not collide with initial draws in the cache
        let seq = match pass {
            Pass::Initial => seq,
            Pass::Resampled => seq + (1 << 32),
        };
        self.generator
            .chat(&msgs, &Self::params(self.generator.as_ref(), seq))
    }
}
