use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Bindings, GatewayError, GenParams, TemplateId};

/// Everything a backend may look at for one completion.
#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub template_id: TemplateId,
    pub bindings: Bindings,
    pub prompt: String,
    pub params: GenParams,
}

/// A text generator. Implementations must tolerate concurrent calls from
/// different sessions.
pub trait Backend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError>;

    fn name(&self) -> &str {
        "backend"
    }
}

#[derive(Serialize)]
struct DigestInput<'a> {
    template_id: &'a str,
    bindings: &'a Bindings,
}

/// Stable key of a request: sha256 over the canonical JSON of the template id
/// and the (sorted) bindings. Prompt wording does not enter the key.
pub fn digest(template_id: TemplateId, bindings: &Bindings) -> String {
    let canon = serde_json::to_string(&DigestInput {
        template_id: template_id.as_str(),
        bindings,
    })
    .expect("bindings serialize");
    hex::encode(Sha256::digest(canon.as_bytes()))
}

/// One line of a fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub digest: String,
    pub template_id: TemplateId,
    pub response: String,
}

/// Answers from fixtures keyed by request digest.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    fixtures: HashMap<String, FixtureRecord>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Result<Self, GatewayError> {
        let mut s = Self::new();
        for r in records {
            s.add(r)?;
        }
        Ok(s)
    }

    pub fn load_file(path: &Path) -> Result<Self, GatewayError> {
        let mut s = Self::new();
        s.extend_from_file(path)?;
        Ok(s)
    }

    pub fn extend_from_file(&mut self, path: &Path) -> Result<usize, GatewayError> {
        let text =
            fs::read_to_string(path).map_err(|e| GatewayError::BadFixture(format!("{}: {e}", path.display())))?;
        let mut n = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord = serde_json::from_str(line)
                .map_err(|e| GatewayError::BadFixture(format!("{}:{}: {e}", path.display(), i + 1)))?;
            self.add(rec)?;
            n += 1;
        }
        Ok(n)
    }

    pub fn add(&mut self, rec: FixtureRecord) -> Result<(), GatewayError> {
        match self.fixtures.get(&rec.digest) {
            Some(old) if old.response != rec.response => Err(GatewayError::FixtureConflict(rec.digest)),
            _ => {
                self.fixtures.insert(rec.digest.clone(), rec);
                Ok(())
            }
        }
    }

    /// Registers `response` for the request `(template_id, bindings)`.
    pub fn insert(&mut self, template_id: TemplateId, bindings: &Bindings, response: impl Into<String>) {
        let d = digest(template_id, bindings);
        self.fixtures.insert(
            d.clone(),
            FixtureRecord {
                digest: d,
                template_id,
                response: response.into(),
            },
        );
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }

    /// Number of completions served or attempted so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let d = digest(req.template_id, &req.bindings);
        self.fixtures
            .get(&d)
            .map(|r| r.response.clone())
            .ok_or(GatewayError::FixtureMiss {
                template_id: req.template_id.to_string(),
                digest: d,
            })
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// Passes requests to an inner backend and keeps every response as a
/// fixture record.
pub struct Recorder {
    inner: Arc<dyn Backend>,
    records: Mutex<BTreeMap<String, FixtureRecord>>,
}

impl Recorder {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        Self {
            inner,
            records: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn records(&self) -> Vec<FixtureRecord> {
        self.records.lock().expect("recorder lock").values().cloned().collect()
    }

    /// Writes all records as JSON lines sorted by digest, merging with any
    /// records already in the file.
    pub fn write_jsonl(&self, path: &Path) -> Result<usize, GatewayError> {
        write_fixture_file(path, self.records())
    }
}

/// Merges `records` into the fixture file at `path` (created if absent).
pub fn write_fixture_file(path: &Path, records: Vec<FixtureRecord>) -> Result<usize, GatewayError> {
    let io = |e: std::io::Error| GatewayError::BadFixture(format!("{}: {e}", path.display()));
    let mut merged: BTreeMap<String, FixtureRecord> = BTreeMap::new();
    if path.exists() {
        let existing = ScriptedBackend::load_file(path)?;
        merged.extend(existing.fixtures);
    }
    for r in records {
        if let Some(old) = merged.get(&r.digest) {
            if old.response != r.response {
                return Err(GatewayError::FixtureConflict(r.digest));
            }
        }
        merged.insert(r.digest.clone(), r);
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = fs::File::create(path).map_err(io)?;
    for r in merged.values() {
        writeln!(f, "{}", serde_json::to_string(r).expect("record serializes")).map_err(io)?;
    }
    Ok(merged.len())
}

impl Backend for Recorder {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let response = self.inner.complete(req)?;
        let d = digest(req.template_id, &req.bindings);
        let mut recs = self.records.lock().expect("recorder lock");
        if let Some(old) = recs.get(&d) {
            if old.response != response {
                return Err(GatewayError::FixtureConflict(d));
            }
        }
        recs.insert(
            d.clone(),
            FixtureRecord {
                digest: d,
                template_id: req.template_id,
                response: response.clone(),
            },
        );
        Ok(response)
    }

    fn name(&self) -> &str {
        "recorder"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Scripted,
    Http,
}

/// Backend configuration file (TOML).
///
/// ```toml
/// kind = "http"
/// base_url = "https://api.example.com/v1"
/// api_key_env = "SLOTWISE_API_KEY"
/// model = "gpt-4o"
///
/// [params]
/// temperature = 0.2
/// max_tokens = 2048
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default)]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub params: GenParams,
    /// Fixture files for the scripted backend.
    #[serde(default)]
    pub fixtures: Vec<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            base_url: None,
            api_key_env: None,
            model: None,
            params: GenParams::default(),
            fixtures: Vec::new(),
            timeout_secs: default_timeout(),
        }
    }
}

impl BackendConfig {
    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        let cfg: BackendConfig = toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        cfg.params.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fixture paths are resolved against `base` when relative.
    pub fn build(&self, base: &Path) -> Result<Arc<dyn Backend>, GatewayError> {
        match self.kind {
            BackendKind::Scripted => {
                let mut s = ScriptedBackend::new();
                for f in &self.fixtures {
                    s.extend_from_file(&base.join(f))?;
                }
                Ok(Arc::new(s))
            }
            #[cfg(feature = "http")]
            BackendKind::Http => Ok(Arc::new(HttpBackend::from_config(self)?)),
            #[cfg(not(feature = "http"))]
            BackendKind::Http => Err(GatewayError::Config(
                "this build has no HTTP backend (enable the `http` feature)".into(),
            )),
        }
    }
}

/// OpenAI-compatible chat-completions client.
#[cfg(feature = "http")]
pub struct HttpBackend {
    url: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[cfg(feature = "http")]
impl HttpBackend {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, GatewayError> {
        let base = cfg
            .base_url
            .as_deref()
            .ok_or_else(|| GatewayError::Config("http backend needs base_url".into()))?;
        let model = cfg
            .model
            .clone()
            .ok_or_else(|| GatewayError::Config("http backend needs model".into()))?;
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| GatewayError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            url: format!("{}/chat/completions", base.trim_end_matches('/')),
            model,
            api_key,
            agent,
        })
    }
}

#[cfg(feature = "http")]
impl Backend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.params.temperature,
            "max_tokens": req.params.max_tokens,
        });
        if let Some(seed) = req.params.seed {
            body["seed"] = seed.into();
        }
        let mut call = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let unavailable = |e: ureq::Error| GatewayError::BackendUnavailable(e.to_string());
        let v: serde_json::Value = call
            .send_json(&body)
            .map_err(unavailable)?
            .body_mut()
            .read_json()
            .map_err(unavailable)?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GatewayError::BackendUnavailable("response has no message content".into()))
    }

    fn name(&self) -> &str {
        "http"
    }
}
