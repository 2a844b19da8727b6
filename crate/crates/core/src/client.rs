//! Transport to OpenAI-compatible chat-completion endpoints, with greedy
//! decoding defaults, bounded retries, a content-addressed response cache,
//! and a deterministic mock backend for network-free runs.

use crate::graph::{topological_order, Scenario};
use crate::prompt::PromptBundle;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("endpoint returned status {status} for request {key} after {attempts} attempt(s)")]
    Http {
        status: u16,
        key: String,
        attempts: u32,
    },
    #[error("transport failure for request {key}: {message}")]
    Transport { key: String, message: String },
    #[error("malformed endpoint response for request {key}: {message}")]
    BadResponse { key: String, message: String },
    #[error("cache i/o at {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("mock backend: {0}")]
    Mock(String),
}

/// Decoding settings. Replication runs use temperature 0 (greedy) and stop
/// at the `# END` marker that terminates the relations stub.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
}

impl GenerationParams {
    pub fn greedy(model: &str) -> GenerationParams {
        GenerationParams {
            model: model.to_string(),
            temperature: 0.0,
            max_tokens: 2048,
            stop: vec!["# END".to_string()],
        }
    }
}

/// Stable 64-bit seed from a list of string parts (SHA-256 prefix).
pub fn hash_seed(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0x1f]);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Content hash of one request: model, decoding params, and the full
/// message list. Identical keys imply byte-identical requests.
pub fn request_key(bundle: &PromptBundle, params: &GenerationParams) -> String {
    let messages: Vec<serde_json::Value> = bundle
        .messages
        .iter()
        .map(|(role, content)| json!({"role": role.to_string(), "content": content}))
        .collect();
    let canonical = json!({
        "model": params.model,
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
        "stop": params.stop,
        "messages": messages,
    });
    let mut hasher = Sha256::new();
    hasher.update(canonical.to_string().as_bytes());
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model: String,
    pub created_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    pub value: String,
}

/// Directory of JSON files named by request hash. Reads are lock-free;
/// writes go through a temp file and an atomic rename.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<ResponseCache, ClientError> {
        std::fs::create_dir_all(dir).map_err(|source| ClientError::CacheIo {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(ResponseCache { dir: dir.to_path_buf() })
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        let text = std::fs::read_to_string(self.path_for(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<(), ClientError> {
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let tmp = self.dir.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let io = |source: std::io::Error| ClientError::CacheIo {
            path: tmp.display().to_string(),
            source,
        };
        std::fs::write(&tmp, serde_json::to_string(entry).expect("entry serializes"))
            .map_err(io)?;
        std::fs::rename(&tmp, self.path_for(&entry.key)).map_err(|source| {
            ClientError::CacheIo {
                path: self.path_for(&entry.key).display().to_string(),
                source,
            }
        })
    }
}

/// Raw text plus provenance of one completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub key: String,
    pub from_cache: bool,
    /// Set when a cache recheck fetched a fresh completion that differs
    /// from the cached one. The cached value still wins; the divergence is
    /// reported, not hidden.
    pub divergence: Option<String>,
}

pub trait Backend: Send + Sync {
    fn complete(
        &self,
        bundle: &PromptBundle,
        params: &GenerationParams,
        key: &str,
    ) -> Result<String, ClientError>;

    fn name(&self) -> &str;
}

/// Chat-completions client: cache in front of a backend.
pub struct LlmClient {
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    recheck_cache: bool,
}

impl LlmClient {
    pub fn new(backend: Box<dyn Backend>, cache: Option<ResponseCache>) -> LlmClient {
        LlmClient {
            backend,
            cache,
            recheck_cache: false,
        }
    }

    /// Enables cache-vs-fresh divergence detection for nondeterministic
    /// upstreams: every hit refetches and compares.
    pub fn with_recheck(mut self, recheck: bool) -> LlmClient {
        self.recheck_cache = recheck;
        self
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    /// Returns the cached completion on a key hit, otherwise asks the
    /// backend and stores the result.
    pub fn complete(
        &self,
        bundle: &PromptBundle,
        params: &GenerationParams,
    ) -> Result<Completion, ClientError> {
        let key = request_key(bundle, params);
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&key) {
                let divergence = if self.recheck_cache {
                    let fresh = self.backend.complete(bundle, params, &key)?;
                    (fresh != entry.value).then(|| {
                        format!(
                            "cached and fresh completions differ for {key} ({} vs {} bytes)",
                            entry.value.len(),
                            fresh.len()
                        )
                    })
                } else {
                    None
                };
                return Ok(Completion {
                    text: entry.value,
                    key,
                    from_cache: true,
                    divergence,
                });
            }
        }
        let text = self.backend.complete(bundle, params, &key)?;
        if let Some(cache) = &self.cache {
            cache.put(&CacheEntry {
                key: key.clone(),
                model: params.model.clone(),
                created_unix: std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                usage: None,
                value: text.clone(),
            })?;
        }
        Ok(Completion {
            text,
            key,
            from_cache: false,
            divergence: None,
        })
    }
}

/// HTTP backend for any OpenAI-compatible `/chat/completions` endpoint.
/// Credentials come from an environment variable only.
pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
    max_retries: u32,
    base_delay: Duration,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key_env: &str) -> HttpBackend {
        HttpBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: std::env::var(api_key_env).ok(),
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(300))
                .build()
                .expect("reqwest client builds"),
            max_retries: 4,
            base_delay: Duration::from_millis(500),
        }
    }

    pub fn with_retry(mut self, max_retries: u32, base_delay: Duration) -> HttpBackend {
        self.max_retries = max_retries;
        self.base_delay = base_delay;
        self
    }

    fn transient(status: u16) -> bool {
        status == 429 || (500..600).contains(&status)
    }
}

impl Backend for HttpBackend {
    fn complete(
        &self,
        bundle: &PromptBundle,
        params: &GenerationParams,
        key: &str,
    ) -> Result<String, ClientError> {
        let messages: Vec<serde_json::Value> = bundle
            .messages
            .iter()
            .map(|(role, content)| json!({"role": role.to_string(), "content": content}))
            .collect();
        let body = json!({
            "model": params.model,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "stop": params.stop,
        });
        let url = format!("{}/chat/completions", self.base_url);
        let mut last_status = 0u16;
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.base_delay * 2u32.pow(attempt - 1));
            }
            let mut request = self.http.post(&url).json(&body);
            if let Some(api_key) = &self.api_key {
                request = request.bearer_auth(api_key);
            }
            let response = match request.send() {
                Ok(r) => r,
                Err(e) => {
                    if attempt == self.max_retries {
                        return Err(ClientError::Transport {
                            key: key.to_string(),
                            message: e.to_string(),
                        });
                    }
                    continue;
                }
            };
            let status = response.status().as_u16();
            last_status = status;
            if Self::transient(status) {
                continue;
            }
            if status != 200 {
                return Err(ClientError::Http {
                    status,
                    key: key.to_string(),
                    attempts: attempt + 1,
                });
            }
            let payload: serde_json::Value =
                response.json().map_err(|e| ClientError::BadResponse {
                    key: key.to_string(),
                    message: e.to_string(),
                })?;
            // Content-filter refusals surface as (possibly empty) text and
            // score as invalid downstream; they are not transport errors.
            let content = payload["choices"][0]["message"]["content"]
                .as_str()
                .map(|s| s.to_string());
            return match content {
                Some(text) => Ok(text),
                None if payload["choices"][0]["finish_reason"] == "content_filter" => {
                    Ok(String::new())
                }
                None => Err(ClientError::BadResponse {
                    key: key.to_string(),
                    message: "no choices[0].message.content in response".to_string(),
                }),
            };
        }
        Err(ClientError::Http {
            status: last_status,
            key: key.to_string(),
            attempts: self.max_retries + 1,
        })
    }

    fn name(&self) -> &str {
        "http"
    }
}

/// Deterministic offline completions.
#[derive(Debug, Clone)]
pub enum MockPolicy {
    /// Answers inference prompts with the gold relations, meta prompts with
    /// a narrative in gold topological order, and judge prompts with a
    /// fully aligned verdict.
    Gold,
    /// Chains the query's events in the order they appear in the prompt.
    RandomChain,
    /// Declines everything.
    Refusal,
    /// Fixed responses by request key, with an optional fallback.
    Scripted {
        responses: HashMap<String, String>,
        default: Option<String>,
    },
}

pub struct MockBackend {
    policy: MockPolicy,
    /// Scenario lookup by sorted event-description fingerprint.
    scenarios: HashMap<String, Scenario>,
}

fn method_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"def\s+(\w+)\s*\(self\):\s*\n\s*return\s+"([^"\n]*)""#).unwrap()
    })
}

fn description_fingerprint<'a, I: Iterator<Item = &'a str>>(descriptions: I) -> String {
    let mut sorted: Vec<&str> = descriptions.collect();
    sorted.sort_unstable();
    sorted.join("\x1f")
}

impl MockBackend {
    pub fn new(policy: MockPolicy, scenarios: &[Scenario]) -> MockBackend {
        let mut index = HashMap::new();
        for scenario in scenarios {
            let fp = description_fingerprint(
                scenario.events.iter().map(|e| e.description.as_str()),
            );
            index.insert(fp, scenario.clone());
        }
        MockBackend {
            policy,
            scenarios: index,
        }
    }

    /// Event methods of the last class in the prompt, in presentation
    /// order, as (label, description) pairs. Stub methods carry no string
    /// return and are skipped.
    fn query_methods(text: &str) -> Result<Vec<(String, String)>, ClientError> {
        let class_at = text
            .rfind("\nclass ")
            .map(|i| i + 1)
            .or_else(|| text.starts_with("class ").then_some(0))
            .ok_or_else(|| ClientError::Mock("no class found in prompt".to_string()))?;
        let methods: Vec<(String, String)> = method_re()
            .captures_iter(&text[class_at..])
            .filter(|cap| !cap[1].starts_with("get_"))
            .map(|cap| (cap[1].to_string(), cap[2].to_string()))
            .collect();
        if methods.is_empty() {
            return Err(ClientError::Mock("no event methods in query class".to_string()));
        }
        Ok(methods)
    }

    fn relations_text(pairs: &[(String, String)]) -> String {
        let mut out = String::from("return [\n");
        for (src, dst) in pairs {
            out.push_str(&format!("    \"{src} -> {dst}\",\n"));
        }
        out.push(']');
        out
    }

    fn gold_relations(&self, methods: &[(String, String)]) -> Result<String, ClientError> {
        let fp = description_fingerprint(methods.iter().map(|(_, d)| d.as_str()));
        let scenario = self.scenarios.get(&fp).ok_or_else(|| {
            ClientError::Mock("query class matches no known scenario".to_string())
        })?;
        let mut label_of = HashMap::new();
        for (label, description) in methods {
            let event = scenario
                .events
                .iter()
                .find(|e| &e.description == description)
                .ok_or_else(|| ClientError::Mock("description mismatch".to_string()))?;
            if label_of.insert(event.id.clone(), label.clone()).is_some() {
                return Err(ClientError::Mock(
                    "ambiguous duplicate event descriptions".to_string(),
                ));
            }
        }
        let pairs: Vec<(String, String)> = scenario
            .edges
            .iter()
            .map(|(s, d)| (label_of[s].clone(), label_of[d].clone()))
            .collect();
        Ok(Self::relations_text(&pairs))
    }

    /// A narrative recounting the class's own relations in topological
    /// order, built from the meta prompt alone.
    fn meta_narrative(text: &str) -> Result<String, ClientError> {
        let methods = Self::query_methods(text)?;
        let parsed = crate::parse::extract_relations(text);
        if parsed.relations.is_empty() {
            return Err(ClientError::Mock("meta prompt carries no relations".to_string()));
        }
        let graph = crate::graph::canonicalize(
            &parsed.relations,
            &crate::graph::LabelAssignment::identity(
                &methods
                    .iter()
                    .map(|(l, _)| crate::graph::EventId::new(l.as_str()))
                    .collect::<Vec<_>>(),
            ),
            &[],
        );
        let order = topological_order(&graph)
            .ok_or_else(|| ClientError::Mock("meta prompt relations are cyclic".to_string()))?;
        let by_label: HashMap<&str, &str> = methods
            .iter()
            .map(|(l, d)| (l.as_str(), d.as_str()))
            .collect();
        let sentences: Vec<String> = order
            .iter()
            .enumerate()
            .map(|(i, label)| {
                let description = by_label.get(label.as_str()).copied().unwrap_or("something");
                let opener = match i {
                    0 => "First",
                    _ if i + 1 == order.len() => "Finally",
                    _ => "Then",
                };
                format!("{opener}, {description}.")
            })
            .collect();
        Ok(sentences.join(" "))
    }

    fn judge_reply(text: &str) -> String {
        let tuples = text
            .rsplit("Temporal Graph: ")
            .next()
            .map(|t| t.matches(" -> ").count())
            .unwrap_or(0);
        format!(
            "Answer: yes\nRationale: The temporal graph follows the narrative order.\nTemporal links: {tuples}\nCorrect temporal links: {tuples}"
        )
    }
}

const REFUSAL_TEXT: &str = "I cannot help with that.";

impl Backend for MockBackend {
    fn complete(
        &self,
        bundle: &PromptBundle,
        _params: &GenerationParams,
        key: &str,
    ) -> Result<String, ClientError> {
        let text = bundle.user_text();
        match &self.policy {
            MockPolicy::Refusal => Ok(REFUSAL_TEXT.to_string()),
            MockPolicy::Scripted { responses, default } => responses
                .get(key)
                .cloned()
                .or_else(|| default.clone())
                .ok_or_else(|| ClientError::Mock(format!("no scripted response for {key}"))),
            MockPolicy::RandomChain => {
                let methods = Self::query_methods(text)?;
                let pairs: Vec<(String, String)> = methods
                    .windows(2)
                    .map(|w| (w[0].0.clone(), w[1].0.clone()))
                    .collect();
                Ok(Self::relations_text(&pairs))
            }
            MockPolicy::Gold => {
                if text.contains("determine whether the narrative is faithful") {
                    return Ok(Self::judge_reply(text));
                }
                if text.contains("Your goal is to write a *") {
                    return Self::meta_narrative(text);
                }
                let methods = Self::query_methods(text)?;
                let relations = self.gold_relations(&methods)?;
                let narrative = if text.contains("def get_narrative(self):") {
                    "    def get_narrative(self):\n        return \"The events unfold in their gold order.\"\n\n"
                } else {
                    ""
                };
                if narrative.is_empty() {
                    Ok(relations)
                } else {
                    Ok(format!("{narrative}    def get_relations(self):\n        {}", relations.replace('\n', "\n        ")))
                }
            }
        }
    }

    fn name(&self) -> &str {
        match self.policy {
            MockPolicy::Gold => "mock-gold",
            MockPolicy::RandomChain => "mock-random-chain",
            MockPolicy::Refusal => "mock-refusal",
            MockPolicy::Scripted { .. } => "mock-scripted",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Domain, Event, EventId, Split};
    use crate::prompt::{
        assign_labels, build_prompt, InputFormat, LabelScheme, Method, Templates,
    };
    use std::io::{Read, Write as IoWrite};
    use std::net::TcpListener;

    fn scenario() -> Scenario {
        Scenario {
            id: "mock-1".into(),
            title: "fly a kite".into(),
            events: vec![
                Event::new("e0", "assemble the kite"),
                Event::new("e1", "find an open field"),
                Event::new("e2", "launch into the wind"),
            ],
            edges: vec![
                (EventId::from("e0"), EventId::from("e1")),
                (EventId::from("e1"), EventId::from("e2")),
            ],
            domain: Domain::Daily,
            split: Split::Eval,
        }
    }

    fn bundle(s: &Scenario, method: Method) -> PromptBundle {
        let assignment =
            assign_labels(s, 5, InputFormat::Alphabetical, LabelScheme::SeededRandom).unwrap();
        build_prompt(
            method,
            &[],
            s,
            &assignment,
            &s.event_ids(),
            0,
            Templates::builtin(),
            5,
        )
        .unwrap()
    }

    #[test]
    fn request_keys_are_stable_and_content_addressed() {
        let s = scenario();
        let b = bundle(&s, Method::Standard);
        let params = GenerationParams::greedy("test-model");
        let k1 = request_key(&b, &params);
        let k2 = request_key(&b, &params);
        assert_eq!(k1, k2);
        assert_eq!(k1.len(), 64);
        let other = GenerationParams::greedy("other-model");
        assert_ne!(k1, request_key(&b, &other));
    }

    #[test]
    fn gold_mock_round_trips_the_gold_edges() {
        let s = scenario();
        let b = bundle(&s, Method::Standard);
        let backend = MockBackend::new(MockPolicy::Gold, std::slice::from_ref(&s));
        let params = GenerationParams::greedy("mock");
        let key = request_key(&b, &params);
        let text = backend.complete(&b, &params, &key).unwrap();
        let parsed = crate::parse::extract_relations(&text);
        let graph = crate::graph::canonicalize(&parsed.relations, &b.assignment, &s.event_ids());
        assert_eq!(graph.edges, s.gold_graph().edges);
    }

    #[test]
    fn random_chain_mock_matches_presentation_order() {
        let s = scenario();
        let b = bundle(&s, Method::Standard);
        let backend = MockBackend::new(MockPolicy::RandomChain, &[]);
        let params = GenerationParams::greedy("mock");
        let key = request_key(&b, &params);
        let text = backend.complete(&b, &params, &key).unwrap();
        let parsed = crate::parse::extract_relations(&text);
        let graph = crate::graph::canonicalize(&parsed.relations, &b.assignment, &s.event_ids());
        let chain = crate::graph::linear_chain(&s.event_ids());
        assert_eq!(graph.edges, chain.edges);
    }

    #[test]
    fn refusal_mock_yields_invalid_output() {
        let s = scenario();
        let b = bundle(&s, Method::Standard);
        let backend = MockBackend::new(MockPolicy::Refusal, &[]);
        let params = GenerationParams::greedy("mock");
        let key = request_key(&b, &params);
        let text = backend.complete(&b, &params, &key).unwrap();
        assert!(!crate::parse::extract_relations(&text).validity);
    }

    #[test]
    fn cache_hit_serves_without_backend_call() {
        struct CountingBackend(std::sync::Arc<std::sync::atomic::AtomicU32>);
        impl Backend for CountingBackend {
            fn complete(
                &self,
                _bundle: &PromptBundle,
                _params: &GenerationParams,
                _key: &str,
            ) -> Result<String, ClientError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok("return [\"stepA -> stepB\"]".to_string())
            }
            fn name(&self) -> &str {
                "counting"
            }
        }

        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let calls = std::sync::Arc::new(std::sync::atomic::AtomicU32::new(0));
        let backend = CountingBackend(calls.clone());
        let client = LlmClient::new(Box::new(backend), Some(cache));
        let s = scenario();
        let b = bundle(&s, Method::Standard);
        let params = GenerationParams::greedy("mock");
        let first = client.complete(&b, &params).unwrap();
        assert!(!first.from_cache);
        let second = client.complete(&b, &params).unwrap();
        assert!(second.from_cache);
        assert_eq!(first.text, second.text);
        // One network call total.
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn recheck_reports_cache_divergence() {
        struct Flipping(std::sync::atomic::AtomicU32);
        impl Backend for Flipping {
            fn complete(
                &self,
                _bundle: &PromptBundle,
                _params: &GenerationParams,
                _key: &str,
            ) -> Result<String, ClientError> {
                let n = self.0.fetch_add(1, Ordering::SeqCst);
                Ok(format!("return [\"stepA -> stepB\"] # call {n}"))
            }
            fn name(&self) -> &str {
                "flipping"
            }
        }

        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let client = LlmClient::new(
            Box::new(Flipping(std::sync::atomic::AtomicU32::new(0))),
            Some(cache),
        )
        .with_recheck(true);
        let s = scenario();
        let b = bundle(&s, Method::Standard);
        let params = GenerationParams::greedy("mock");
        let first = client.complete(&b, &params).unwrap();
        assert!(first.divergence.is_none());
        let second = client.complete(&b, &params).unwrap();
        // The cached value wins, and the drift is reported.
        assert!(second.from_cache);
        assert_eq!(second.text, first.text);
        assert!(second.divergence.is_some());
    }

    /// Minimal one-shot HTTP stub: answers the first request with 429 and
    /// the second with a well-formed completion payload.
    fn spawn_flaky_server() -> (String, std::thread::JoinHandle<u32>) {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind localhost");
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut served = 0u32;
            for attempt in 0..2 {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = vec![0u8; 65536];
                let mut read_total = 0usize;
                // Read until the end of headers plus declared body length.
                loop {
                    let n = stream.read(&mut buf[read_total..]).unwrap();
                    read_total += n;
                    let text = String::from_utf8_lossy(&buf[..read_total]);
                    if let Some(header_end) = text.find("\r\n\r\n") {
                        let content_length = text
                            .lines()
                            .find_map(|l| l.to_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                            .unwrap_or(0);
                        if read_total >= header_end + 4 + content_length {
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                served += 1;
                let response = if attempt == 0 {
                    "HTTP/1.1 429 Too Many Requests\r\ncontent-length: 0\r\n\r\n".to_string()
                } else {
                    let body = serde_json::json!({
                        "choices": [{"message": {"role": "assistant", "content": "return [\"stepA -> stepB\"]"}, "finish_reason": "stop"}]
                    })
                    .to_string();
                    format!(
                        "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{}",
                        body.len(),
                        body
                    )
                };
                stream.write_all(response.as_bytes()).unwrap();
            }
            served
        });
        (format!("http://{addr}/v1"), handle)
    }

    #[test]
    fn transient_429_is_retried_once_and_cached() {
        let (base_url, server) = spawn_flaky_server();
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let backend = HttpBackend::new(&base_url, "TGG_TEST_NO_SUCH_KEY")
            .with_retry(3, Duration::from_millis(10));
        let client = LlmClient::new(Box::new(backend), Some(cache));
        let s = scenario();
        let b = bundle(&s, Method::Standard);
        let params = GenerationParams::greedy("remote-model");
        let completion = client.complete(&b, &params).unwrap();
        assert_eq!(completion.text, "return [\"stepA -> stepB\"]");
        assert!(!completion.from_cache);
        assert_eq!(server.join().unwrap(), 2);
        // Cached now: no further connections are possible, yet this works.
        let again = client.complete(&b, &params).unwrap();
        assert!(again.from_cache);
    }
}
