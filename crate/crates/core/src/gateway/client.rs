//! Endpoint client: builds chat-completion and embedding requests, routes
//! them through fixtures or a transport with retries, and restores results
//! to input order under bounded parallelism.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::fixtures::{fixture_key, FixtureMode, FixtureStore};
use super::prompts::{truncate_at_stop, GenerationParams};
use crate::clustering::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::exec;

/// Environment variable that overrides the configured base URL.
pub const BASE_URL_ENV: &str = "LLMCAL_BASE_URL";

/// Connection and caching settings for the model endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub embedding_model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Additional attempts after the first failure.
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Upper bound on concurrently in-flight requests.
    pub parallelism: usize,
    pub fixture_mode: FixtureMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixture_path: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080/v1".into(),
            model: "qa-model".into(),
            embedding_model: "embedding-model".into(),
            api_key_env: "LLMCAL_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 100,
            parallelism: 4,
            fixture_mode: FixtureMode::Off,
            fixture_path: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if self.fixture_mode != FixtureMode::Off && self.fixture_path.is_none() {
            return Err(Error::Config(
                "replay and record fixture modes need a fixture path".into(),
            ));
        }
        Ok(())
    }

    /// Configured base URL unless [`BASE_URL_ENV`] overrides it.
    pub fn resolved_base_url(&self) -> String {
        std::env::var(BASE_URL_ENV).unwrap_or_else(|_| self.base_url.clone())
    }
}

/// One model generation with optional per-token log probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub token_logprobs: Option<Vec<f64>>,
}

/// Sends one JSON request to a named endpoint path and returns the JSON
/// response. Implementations must be safe to call from multiple threads.
pub trait Transport: Send + Sync {
    fn execute(&self, request: &Value, endpoint: &str) -> Result<Value>;
}

/// HTTP transport speaking the common chat-completions and embeddings JSON
/// shape, with bearer auth from the configured environment variable.
#[cfg(feature = "live")]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
}

#[cfg(feature = "live")]
impl HttpTransport {
    pub fn new(config: &EndpointConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(format!("failed to build HTTP client: {e}")))?;
        Ok(Self {
            client,
            base_url: config.resolved_base_url().trim_end_matches('/').to_string(),
            api_key: std::env::var(&config.api_key_env).ok(),
        })
    }
}

#[cfg(feature = "live")]
impl Transport for HttpTransport {
    fn execute(&self, request: &Value, endpoint: &str) -> Result<Value> {
        let url = format!("{}/{}", self.base_url, endpoint);
        let mut call = self.client.post(&url).json(request);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let response = call
            .send()
            .map_err(|e| Error::Transport(format!("request to {url} failed: {e}")))?;
        let status = response.status();
        if !status.is_success() {
            return Err(Error::Transport(format!("{url} returned status {status}")));
        }
        response
            .json()
            .map_err(|e| Error::Transport(format!("invalid JSON from {url}: {e}")))
    }
}

const CHAT_ENDPOINT: &str = "chat/completions";
const EMBEDDINGS_ENDPOINT: &str = "embeddings";

/// Client for answer generation and embedding with fixture support.
pub struct LlmClient {
    config: EndpointConfig,
    transport: Option<Box<dyn Transport>>,
    fixtures: Option<Mutex<FixtureStore>>,
    embedding_memo: Mutex<HashMap<String, Vec<f64>>>,
}

impl LlmClient {
    pub fn new(config: EndpointConfig, transport: Option<Box<dyn Transport>>) -> Result<Self> {
        config.validate()?;
        let fixtures = match config.fixture_mode {
            FixtureMode::Off => None,
            FixtureMode::Replay => {
                let path = config.fixture_path.as_ref().expect("validated above");
                Some(Mutex::new(FixtureStore::load(path)?))
            }
            FixtureMode::Record => {
                let path = config.fixture_path.as_ref().expect("validated above");
                Some(Mutex::new(FixtureStore::load_or_empty(path)?))
            }
        };
        Ok(Self {
            config,
            transport,
            fixtures,
            embedding_memo: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn call_with_retries(&self, request: &Value, endpoint: &str) -> Result<Value> {
        let transport = self.transport.as_deref().ok_or_else(|| {
            Error::Transport("no transport configured for uncached requests".into())
        })?;
        let mut last = None;
        for attempt in 0..=self.config.max_retries {
            match transport.execute(request, endpoint) {
                Ok(response) => return Ok(response),
                Err(err) => {
                    last = Some(err);
                    if attempt < self.config.max_retries {
                        let wait = self.config.backoff_ms.saturating_mul(1 << attempt);
                        std::thread::sleep(Duration::from_millis(wait));
                    }
                }
            }
        }
        Err(last.expect("at least one attempt was made"))
    }

    /// Routes a request through the fixture store according to the mode.
    /// Replay never touches the transport.
    fn call(&self, request: Value, endpoint: &str) -> Result<Value> {
        match self.config.fixture_mode {
            FixtureMode::Off => self.call_with_retries(&request, endpoint),
            FixtureMode::Replay => {
                let key = fixture_key(&request);
                let store = self.fixtures.as_ref().unwrap().lock().expect("fixture lock");
                store
                    .get(&key)
                    .cloned()
                    .ok_or(Error::FixtureMiss { hash: key })
            }
            FixtureMode::Record => {
                let key = fixture_key(&request);
                {
                    let store = self.fixtures.as_ref().unwrap().lock().expect("fixture lock");
                    if let Some(hit) = store.get(&key) {
                        return Ok(hit.clone());
                    }
                }
                let response = self.call_with_retries(&request, endpoint)?;
                let mut store = self.fixtures.as_ref().unwrap().lock().expect("fixture lock");
                if store.get(&key).is_none() {
                    store.append(key, request, response.clone())?;
                }
                Ok(response)
            }
        }
    }

    /// Runs `f` over `0..n` in waves of at most `parallelism` concurrent
    /// calls, except in record mode where requests go one at a time so the
    /// fixture file grows in a stable order.
    fn in_waves<T: Send>(
        &self,
        n: usize,
        f: impl Fn(usize) -> Result<T> + Send + Sync,
    ) -> Result<Vec<T>> {
        let wave = if self.config.fixture_mode == FixtureMode::Record {
            1
        } else {
            self.config.parallelism
        };
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let len = wave.min(n - start);
            for item in exec::map_range(len, true, |i| f(start + i)) {
                out.push(item?);
            }
            start += len;
        }
        Ok(out)
    }

    fn chat_request(&self, prompt: &str, params: &GenerationParams) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": params.max_new_tokens,
            "temperature": params.temperature,
            "logprobs": true,
        })
    }

    fn parse_chat(&self, response: &Value, params: &GenerationParams) -> Result<Generation> {
        let content = response["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| {
                Error::Transport(
                    "malformed chat response: missing choices[0].message.content".into(),
                )
            })?;
        let token_logprobs = match response["choices"][0]["logprobs"]["content"].as_array() {
            None => None,
            Some(entries) => {
                let mut probs = Vec::with_capacity(entries.len());
                for entry in entries {
                    probs.push(entry["logprob"].as_f64().ok_or_else(|| {
                        Error::Transport(
                            "malformed chat response: token without a numeric logprob".into(),
                        )
                    })?);
                }
                Some(probs)
            }
        };
        Ok(Generation {
            text: truncate_at_stop(content, &params.stop_sequences).to_string(),
            token_logprobs,
        })
    }

    /// Generates one completion, truncated at the first stop sequence.
    pub fn generate_answer(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<Generation> {
        params.validate()?;
        let response = self.call(self.chat_request(prompt, params), CHAT_ENDPOINT)?;
        self.parse_chat(&response, params)
    }

    /// Generates completions for all prompts, in input order.
    pub fn generate_batch(
        &self,
        prompts: &[String],
        params: &GenerationParams,
    ) -> Result<Vec<Generation>> {
        params.validate()?;
        self.in_waves(prompts.len(), |i| {
            let response = self.call(self.chat_request(&prompts[i], params), CHAT_ENDPOINT)?;
            self.parse_chat(&response, params)
        })
    }

    fn embed_request(&self, text: &str) -> Value {
        json!({
            "model": self.config.embedding_model,
            "input": [text],
        })
    }

    fn fetch_embedding(&self, text: &str) -> Result<Vec<f64>> {
        let response = self.call(self.embed_request(text), EMBEDDINGS_ENDPOINT)?;
        let entries = response["data"][0]["embedding"].as_array().ok_or_else(|| {
            Error::Transport("malformed embedding response: missing data[0].embedding".into())
        })?;
        let mut row = Vec::with_capacity(entries.len());
        for value in entries {
            row.push(value.as_f64().ok_or_else(|| {
                Error::Transport("malformed embedding response: non-numeric entry".into())
            })?);
        }
        Ok(row)
    }

    /// Embeds all texts, one row per input in order. Repeated texts are
    /// fetched once and reuse the same row.
    pub fn embed_texts(&self, texts: &[String]) -> Result<EmbeddingMatrix> {
        if texts.is_empty() {
            return Err(Error::Validation("no texts to embed".into()));
        }
        let mut unique: Vec<&String> = Vec::new();
        {
            let memo = self.embedding_memo.lock().expect("embedding memo lock");
            let mut seen = std::collections::HashSet::new();
            for text in texts {
                if !memo.contains_key(text) && seen.insert(text) {
                    unique.push(text);
                }
            }
        }
        let fetched = self.in_waves(unique.len(), |i| self.fetch_embedding(unique[i]))?;
        let rows: Vec<Vec<f64>> = {
            let mut memo = self.embedding_memo.lock().expect("embedding memo lock");
            for (text, row) in unique.iter().zip(fetched) {
                memo.insert((*text).clone(), row);
            }
            texts
                .iter()
                .map(|t| memo.get(t).expect("just inserted").clone())
                .collect()
        };
        EmbeddingMatrix::from_rows(&rows)
    }
}
