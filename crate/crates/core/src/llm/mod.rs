//! Chat-completion backends for the three pipeline roles.
//!
//! Every call goes through [`Backend::complete`], which consults the disk
//! cache, dispatches to the role's [`Transport`] with bounded exponential
//! backoff, and stores successful responses. Transports exist for an
//! OpenAI-compatible HTTP endpoint and for a scripted mock.

mod cache;
mod http;
mod mock;

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheEntry, CacheStats, DiskCache};
pub use http::{HttpTransport, API_KEY_ENV};
pub use mock::{MockRule, MockScript, MockTransport, Patterns};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Poster,
    Analysis,
    Discriminator,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Poster, Role::Analysis, Role::Discriminator];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Poster => "poster",
            Role::Analysis => "analysis",
            Role::Discriminator => "discriminator",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Remote {
        endpoint: String,
        model: String,
    },
    Mock {
        script: PathBuf,
        #[serde(default = "default_mock_model")]
        model: String,
    },
}

fn default_mock_model() -> String {
    "mock".to_string()
}

impl BackendSpec {
    pub fn model(&self) -> &str {
        match self {
            BackendSpec::Remote { model, .. } | BackendSpec::Mock { model, .. } => model,
        }
    }

    /// Identity used in cache keys. The mock script path is deliberately not
    /// part of it, so moving a script does not invalidate recorded digests.
    pub fn identity(&self) -> String {
        match self {
            BackendSpec::Remote { endpoint, .. } => {
                format!("remote:{}", endpoint.trim_end_matches('/'))
            }
            BackendSpec::Mock { .. } => "mock".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleConfig {
    pub role: Role,
    pub backend: BackendSpec,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: u64,
}

fn default_max_output_tokens() -> u32 {
    1024
}

fn default_timeout() -> u64 {
    120
}

impl RoleConfig {
    pub fn mock(role: Role, script: impl Into<PathBuf>) -> Self {
        RoleConfig {
            role,
            backend: BackendSpec::Mock {
                script: script.into(),
                model: default_mock_model(),
            },
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            request_timeout_secs: default_timeout(),
        }
    }

    pub fn remote(role: Role, endpoint: &str, model: &str) -> Self {
        RoleConfig {
            role,
            backend: BackendSpec::Remote {
                endpoint: endpoint.to_string(),
                model: model.to_string(),
            },
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            request_timeout_secs: default_timeout(),
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let role = self.role;
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            v.push(format!("role {role}: temperature must be >= 0"));
        }
        if self.max_output_tokens == 0 {
            v.push(format!("role {role}: max_output_tokens must be positive"));
        }
        if self.request_timeout_secs == 0 {
            v.push(format!(
                "role {role}: request_timeout_secs must be positive"
            ));
        }
        if let BackendSpec::Remote { endpoint, model } = &self.backend {
            if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
                v.push(format!("role {role}: endpoint must be an http(s) URL"));
            }
            if model.trim().is_empty() {
                v.push(format!("role {role}: empty model name"));
            }
        }
        v
    }
}

/// SHA-256 over (role, backend identity, model, temperature, prompt), hex encoded.
pub fn cache_key(config: &RoleConfig, prompt: &str) -> String {
    let material = serde_json::json!([
        "maims-cache-v1",
        config.role.as_str(),
        config.backend.identity(),
        config.backend.model(),
        config.temperature,
        prompt,
    ]);
    hex::encode(Sha256::digest(material.to_string().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub cached: bool,
    pub role: Role,
    pub prompt_digest: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("no scripted response for digest {0}")]
    ScriptMiss(String),
}

/// One round trip to a model. Implementations must be shareable across workers.
pub trait Transport: Send + Sync {
    fn send(
        &self,
        config: &RoleConfig,
        prompt: &str,
        digest: &str,
    ) -> Result<String, TransportError>;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("backend unreachable after {attempts} attempts: {last_error}")]
    BackendUnreachable { attempts: u32, last_error: String },
    #[error("backend rejected request (status {status}): {body}")]
    BackendRejected { status: u16, body: String },
    #[error("mock script has no entry for prompt digest {0}")]
    MockScriptMiss(String),
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("cache error: {0}")]
    Cache(String),
    #[error("mock script error: {0}")]
    Script(String),
    #[error("invalid role config: {0}")]
    Config(String),
    #[error("empty cache: nothing to export")]
    EmptyCache,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt; transport attempts are bounded by `1 + max_retries`.
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 1000,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay_ms: 0,
        }
    }

    /// Delay before retry number `retry` (0-based): base, 2·base, 4·base, …
    pub fn delay(&self, retry: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1u64 << retry.min(20)))
    }
}

#[derive(Debug, Default)]
pub struct CallCounters {
    calls: [AtomicU64; 3],
    transport: [AtomicU64; 3],
    cache_hits: [AtomicU64; 3],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleCounts {
    pub calls: u64,
    pub transport: u64,
    pub cache_hits: u64,
}

impl CallCounters {
    pub fn get(&self, role: Role) -> RoleCounts {
        let i = role.index();
        RoleCounts {
            calls: self.calls[i].load(Ordering::SeqCst),
            transport: self.transport[i].load(Ordering::SeqCst),
            cache_hits: self.cache_hits[i].load(Ordering::SeqCst),
        }
    }

    pub fn total_transport(&self) -> u64 {
        Role::ALL.iter().map(|r| self.get(*r).transport).sum()
    }
}

struct RoleClient {
    config: RoleConfig,
    transport: Arc<dyn Transport>,
}

/// The three role clients plus their shared cache, retry policy and counters.
pub struct Backend {
    clients: [RoleClient; 3],
    cache: Option<DiskCache>,
    retry: RetryPolicy,
    counters: CallCounters,
}

impl Backend {
    /// Builds transports from each role's [`BackendSpec`].
    pub fn from_configs(
        configs: [RoleConfig; 3],
        cache: Option<DiskCache>,
        retry: RetryPolicy,
    ) -> Result<Self, LlmError> {
        let mut scripts: Vec<(PathBuf, Arc<MockTransport>)> = Vec::new();
        let mut transports: Vec<Arc<dyn Transport>> = Vec::new();
        for cfg in &configs {
            let problems = cfg.validate();
            if !problems.is_empty() {
                return Err(LlmError::Config(problems.join("; ")));
            }
            let t: Arc<dyn Transport> = match &cfg.backend {
                BackendSpec::Remote { .. } => Arc::new(HttpTransport::new(cfg)),
                BackendSpec::Mock { script, .. } => {
                    if let Some((_, t)) = scripts.iter().find(|(p, _)| p == script) {
                        t.clone()
                    } else {
                        let t = Arc::new(MockTransport::new(MockScript::load(script)?));
                        scripts.push((script.clone(), t.clone()));
                        t
                    }
                }
            };
            transports.push(t);
        }
        let mut transports = transports.into_iter();
        let [p, a, d] = configs;
        Self::with_transports(
            [
                (p, transports.next().unwrap()),
                (a, transports.next().unwrap()),
                (d, transports.next().unwrap()),
            ],
            cache,
            retry,
        )
    }

    /// Replays a recorded script for every role while keeping the role
    /// configs, and therefore the digests, of the original run.
    pub fn replay(
        configs: [RoleConfig; 3],
        script: MockScript,
        cache: Option<DiskCache>,
        retry: RetryPolicy,
    ) -> Result<Self, LlmError> {
        let t: Arc<dyn Transport> = Arc::new(MockTransport::new(script));
        let [p, a, d] = configs;
        Self::with_transports([(p, t.clone()), (a, t.clone()), (d, t)], cache, retry)
    }

    /// Explicit transports, ordered poster, analysis, discriminator.
    pub fn with_transports(
        clients: [(RoleConfig, Arc<dyn Transport>); 3],
        cache: Option<DiskCache>,
        retry: RetryPolicy,
    ) -> Result<Self, LlmError> {
        for (expected, (cfg, _)) in Role::ALL.iter().zip(&clients) {
            if cfg.role != *expected {
                return Err(LlmError::Config(format!(
                    "expected a {expected} config, got {}",
                    cfg.role
                )));
            }
        }
        let clients = clients.map(|(config, transport)| RoleClient { config, transport });
        Ok(Backend {
            clients,
            cache,
            retry,
            counters: CallCounters::default(),
        })
    }

    pub fn config(&self, role: Role) -> &RoleConfig {
        &self.clients[role.index()].config
    }

    pub fn configs(&self) -> [&RoleConfig; 3] {
        [
            &self.clients[0].config,
            &self.clients[1].config,
            &self.clients[2].config,
        ]
    }

    pub fn counters(&self) -> &CallCounters {
        &self.counters
    }

    pub fn cache(&self) -> Option<&DiskCache> {
        self.cache.as_ref()
    }

    pub fn complete(&self, role: Role, prompt: &str) -> Result<Completion, LlmError> {
        if prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let client = &self.clients[role.index()];
        let i = role.index();
        self.counters.calls[i].fetch_add(1, Ordering::SeqCst);
        let digest = cache_key(&client.config, prompt);

        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&digest)? {
                self.counters.cache_hits[i].fetch_add(1, Ordering::SeqCst);
                return Ok(Completion {
                    text: entry.response,
                    cached: true,
                    role,
                    prompt_digest: digest,
                });
            }
        }

        let mut attempt = 0u32;
        let text = loop {
            self.counters.transport[i].fetch_add(1, Ordering::SeqCst);
            attempt += 1;
            match client.transport.send(&client.config, prompt, &digest) {
                Ok(text) => break text,
                Err(TransportError::Transient(msg)) => {
                    if attempt > self.retry.max_retries {
                        return Err(LlmError::BackendUnreachable {
                            attempts: attempt,
                            last_error: msg,
                        });
                    }
                    thread::sleep(self.retry.delay(attempt - 1));
                }
                Err(TransportError::Rejected { status, body }) => {
                    return Err(LlmError::BackendRejected { status, body })
                }
                Err(TransportError::ScriptMiss(d)) => return Err(LlmError::MockScriptMiss(d)),
            }
        };

        if let Some(cache) = &self.cache {
            cache.put(&CacheEntry::new(&client.config, &digest, prompt, &text))?;
        }
        Ok(Completion {
            text,
            cached: false,
            role,
            prompt_digest: digest,
        })
    }
}

/// Exports every cached response as a replayable mock script.
pub fn record_script(cache: &DiskCache) -> Result<MockScript, LlmError> {
    let entries = cache.entries()?;
    if entries.is_empty() {
        return Err(LlmError::EmptyCache);
    }
    let mut script = MockScript::default();
    for e in entries {
        script.responses.insert(e.digest, e.response);
    }
    Ok(script)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Flaky {
        failures_left: Mutex<u32>,
        reply: Result<String, TransportError>,
    }

    impl Transport for Flaky {
        fn send(&self, _: &RoleConfig, _: &str, _: &str) -> Result<String, TransportError> {
            let mut left = self.failures_left.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                return Err(TransportError::Transient("connection reset".into()));
            }
            self.reply.clone()
        }
    }

    fn backend_with(
        t: Arc<dyn Transport>,
        cache: Option<DiskCache>,
        retry: RetryPolicy,
    ) -> Backend {
        let cfgs = Role::ALL.map(|r| RoleConfig::mock(r, "unused.json"));
        let [p, a, d] = cfgs;
        Backend::with_transports([(p, t.clone()), (a, t.clone()), (d, t)], cache, retry).unwrap()
    }

    #[test]
    fn cache_key_properties() {
        let cfg = RoleConfig::remote(Role::Analysis, "https://api.example.com/v1", "gpt-x");
        assert_eq!(cache_key(&cfg, "hello"), cache_key(&cfg, "hello"));
        assert_eq!(cache_key(&cfg, "hello").len(), 64);
        assert_ne!(cache_key(&cfg, "hello"), cache_key(&cfg, "hellp"));
        let mut warm = cfg.clone();
        warm.temperature = 0.7;
        assert_ne!(cache_key(&cfg, "hello"), cache_key(&warm, "hello"));
        let mut other_role = cfg.clone();
        other_role.role = Role::Poster;
        assert_ne!(cache_key(&cfg, "hello"), cache_key(&other_role, "hello"));
        let mut other_model = cfg.clone();
        other_model.backend = BackendSpec::Remote {
            endpoint: "https://api.example.com/v1".into(),
            model: "gpt-y".into(),
        };
        assert_ne!(cache_key(&cfg, "hello"), cache_key(&other_model, "hello"));
    }

    #[test]
    fn cache_key_is_frozen() {
        // Pinned so that recorded scripts stay valid across releases.
        let cfg = RoleConfig::mock(Role::Poster, "x.json");
        let material = r#"["maims-cache-v1","poster","mock","mock",0.0,"hi"]"#;
        assert_eq!(
            cache_key(&cfg, "hi"),
            hex::encode(Sha256::digest(material.as_bytes()))
        );
    }

    #[test]
    fn mock_script_path_not_in_identity() {
        let a = RoleConfig::mock(Role::Poster, "a.json");
        let b = RoleConfig::mock(Role::Poster, "elsewhere/b.json");
        assert_eq!(cache_key(&a, "p"), cache_key(&b, "p"));
    }

    #[test]
    fn retries_transient_failures_up_to_cap() {
        let t = Arc::new(Flaky {
            failures_left: Mutex::new(2),
            reply: Ok("ok".into()),
        });
        let b = backend_with(t, None, RetryPolicy::no_delay(3));
        assert_eq!(b.complete(Role::Poster, "p").unwrap().text, "ok");
        assert_eq!(b.counters().get(Role::Poster).transport, 3);

        let t = Arc::new(Flaky {
            failures_left: Mutex::new(100),
            reply: Ok("never".into()),
        });
        let b = backend_with(t, None, RetryPolicy::no_delay(3));
        let err = b.complete(Role::Poster, "p").unwrap_err();
        assert_eq!(
            err,
            LlmError::BackendUnreachable {
                attempts: 4,
                last_error: "connection reset".into()
            }
        );
        assert_eq!(b.counters().get(Role::Poster).transport, 4);
    }

    #[test]
    fn rejection_is_not_retried() {
        let t = Arc::new(Flaky {
            failures_left: Mutex::new(0),
            reply: Err(TransportError::Rejected {
                status: 401,
                body: "bad key".into(),
            }),
        });
        let b = backend_with(t, None, RetryPolicy::no_delay(3));
        assert!(matches!(
            b.complete(Role::Analysis, "p"),
            Err(LlmError::BackendRejected { status: 401, .. })
        ));
        assert_eq!(b.counters().get(Role::Analysis).transport, 1);
    }

    #[test]
    fn backoff_schedule_doubles() {
        let r = RetryPolicy::default();
        let d: Vec<u64> = (0..3).map(|i| r.delay(i).as_millis() as u64).collect();
        assert_eq!(d, [1000, 2000, 4000]);
    }

    #[test]
    fn cache_hit_skips_transport() {
        let dir = tempfile::tempdir().unwrap();
        let mut script = MockScript::default();
        let cfg = RoleConfig::mock(Role::Analysis, "unused.json");
        script
            .responses
            .insert(cache_key(&cfg, "prompt"), "Answer: Yes".into());
        let b = backend_with(
            Arc::new(MockTransport::new(script)),
            Some(DiskCache::new(dir.path())),
            RetryPolicy::no_delay(0),
        );
        let first = b.complete(Role::Analysis, "prompt").unwrap();
        assert_eq!(first.text, "Answer: Yes");
        assert!(!first.cached);
        let second = b.complete(Role::Analysis, "prompt").unwrap();
        assert!(second.cached);
        assert_eq!(second.text, "Answer: Yes");
        let counts = b.counters().get(Role::Analysis);
        assert_eq!(
            (counts.calls, counts.transport, counts.cache_hits),
            (2, 1, 1)
        );

        let miss = b.complete(Role::Analysis, "other prompt").unwrap_err();
        assert!(matches!(miss, LlmError::MockScriptMiss(_)));
    }

    #[test]
    fn record_script_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path());
        assert_eq!(record_script(&cache).unwrap_err(), LlmError::EmptyCache);

        let script = MockScript {
            rules: vec![MockRule {
                role: None,
                contains: Patterns::One("".into()),
                excludes: Patterns::default(),
                response: "scripted".into(),
            }],
            ..Default::default()
        };
        let b = backend_with(
            Arc::new(MockTransport::new(script)),
            Some(cache.clone()),
            RetryPolicy::no_delay(0),
        );
        for p in ["a", "b", "c"] {
            b.complete(Role::Poster, p).unwrap();
        }
        let recorded = record_script(&cache).unwrap();
        assert_eq!(recorded.responses.len(), 3);

        let replay = backend_with(
            Arc::new(MockTransport::new(recorded)),
            None,
            RetryPolicy::no_delay(0),
        );
        for p in ["a", "b", "c"] {
            assert_eq!(replay.complete(Role::Poster, p).unwrap().text, "scripted");
        }
        assert!(replay.complete(Role::Poster, "d").is_err());
    }

    #[test]
    fn empty_prompt_rejected() {
        let b = backend_with(
            Arc::new(MockTransport::new(MockScript::default())),
            None,
            RetryPolicy::default(),
        );
        assert_eq!(
            b.complete(Role::Poster, "  ").unwrap_err(),
            LlmError::EmptyPrompt
        );
    }
}
