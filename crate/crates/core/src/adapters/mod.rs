//! Pluggable backends for the four model-backed stages.
//!
//! Every backend speaks the same request/response shape
//! ([`AdapterRequest`] / [`AdapterResponse`]), whether it runs in-process
//! ([`builtin`]) or behind an HTTP endpoint ([`remote`]). [`StageClient`]
//! adds batching, bounded concurrency, the retry policy and response
//! validation on top of any [`StageAdapter`].

pub mod builtin;
pub mod remote;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::Stage;
use crate::error::{Error, Result, StageError, StageErrorKind};

pub use builtin::BuiltinAdapter;
pub use remote::RemoteAdapter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    Builtin,
    Remote,
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_max_batch() -> usize {
    32
}

fn default_max_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterBinding {
    pub stage: Stage,
    pub kind: AdapterKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub adapter_id: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Sent as `Authorization: Bearer <token>` to remote endpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearer_token: Option<String>,
}

impl AdapterBinding {
    pub fn builtin(stage: Stage) -> Self {
        AdapterBinding {
            stage,
            kind: AdapterKind::Builtin,
            endpoint: None,
            adapter_id: format!("builtin-{stage}"),
            timeout_ms: default_timeout_ms(),
            max_batch: default_max_batch(),
            max_in_flight: default_max_in_flight(),
            bearer_token: None,
        }
    }

    pub fn remote(stage: Stage, adapter_id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        AdapterBinding {
            kind: AdapterKind::Remote,
            endpoint: Some(endpoint.into()),
            adapter_id: adapter_id.into(),
            ..AdapterBinding::builtin(stage)
        }
    }

    pub fn builtin_set() -> BTreeMap<Stage, AdapterBinding> {
        Stage::ALL
            .into_iter()
            .map(|s| (s, AdapterBinding::builtin(s)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.adapter_id.is_empty() {
            return Err(Error::Validation(format!(
                "{} binding has an empty adapter_id",
                self.stage
            )));
        }
        if self.max_batch < 1 || self.max_in_flight < 1 {
            return Err(Error::Validation(format!(
                "{}: max_batch and max_in_flight must be >= 1",
                self.adapter_id
            )));
        }
        match (self.kind, &self.endpoint) {
            (AdapterKind::Remote, None) => Err(Error::Validation(format!(
                "{}: remote binding needs an endpoint",
                self.adapter_id
            ))),
            (AdapterKind::Remote, Some(endpoint)) => {
                let url = url::Url::parse(endpoint)
                    .map_err(|e| Error::Validation(format!("{}: bad endpoint: {e}", self.adapter_id)))?;
                if !matches!(url.scheme(), "http" | "https") {
                    return Err(Error::Validation(format!(
                        "{}: endpoint must be http(s)",
                        self.adapter_id
                    )));
                }
                Ok(())
            }
            (AdapterKind::Builtin, Some(_)) => Err(Error::Validation(format!(
                "{}: builtin binding must not carry an endpoint",
                self.adapter_id
            ))),
            (AdapterKind::Builtin, None) => Ok(()),
        }
    }

    /// Instantiates the backend described by this binding.
    pub fn connect(&self) -> Result<Arc<dyn StageAdapter>> {
        self.validate()?;
        Ok(match self.kind {
            AdapterKind::Builtin => Arc::new(BuiltinAdapter::with_id(self.stage, self.adapter_id.clone())),
            AdapterKind::Remote => Arc::new(RemoteAdapter::new(self)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestItem {
    pub id: String,
    pub source_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub stage: Stage,
    pub source_lang: String,
    pub target_lang: String,
    pub items: Vec<RequestItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseItem {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterResponse {
    pub adapter_id: String,
    pub items: Vec<ResponseItem>,
}

/// Failure of a single adapter call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallError {
    Timeout(String),
    Transport(String),
    Protocol(String),
}

impl CallError {
    fn kind(&self) -> StageErrorKind {
        match self {
            CallError::Timeout(_) => StageErrorKind::Timeout,
            CallError::Transport(_) => StageErrorKind::Transport,
            CallError::Protocol(_) => StageErrorKind::Protocol,
        }
    }

    fn message(&self) -> &str {
        match self {
            CallError::Timeout(m) | CallError::Transport(m) | CallError::Protocol(m) => m,
        }
    }
}

/// One backend for one stage. Implementations must be reentrant.
pub trait StageAdapter: Send + Sync {
    fn adapter_id(&self) -> &str;

    fn call(&self, request: &AdapterRequest) -> std::result::Result<AdapterResponse, CallError>;
}

/// Batching, concurrency-limited, validating front for a [`StageAdapter`].
#[derive(Clone)]
pub struct StageClient {
    stage: Stage,
    adapter: Arc<dyn StageAdapter>,
    source_lang: String,
    target_lang: String,
    max_batch: usize,
    max_in_flight: usize,
}

impl std::fmt::Debug for StageClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StageClient")
            .field("stage", &self.stage)
            .field("adapter_id", &self.adapter.adapter_id())
            .field("max_batch", &self.max_batch)
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

impl StageClient {
    pub fn new(stage: Stage, adapter: Arc<dyn StageAdapter>, source_lang: &str, target_lang: &str) -> Self {
        StageClient {
            stage,
            adapter,
            source_lang: source_lang.to_string(),
            target_lang: target_lang.to_string(),
            max_batch: default_max_batch(),
            max_in_flight: default_max_in_flight(),
        }
    }

    pub fn from_binding(binding: &AdapterBinding, source_lang: &str, target_lang: &str) -> Result<Self> {
        Ok(
            StageClient::new(binding.stage, binding.connect()?, source_lang, target_lang)
                .with_limits(binding.max_batch, binding.max_in_flight),
        )
    }

    pub fn with_limits(mut self, max_batch: usize, max_in_flight: usize) -> Self {
        self.max_batch = max_batch.max(1);
        self.max_in_flight = max_in_flight.max(1);
        self
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn adapter_id(&self) -> &str {
        self.adapter.adapter_id()
    }

    /// Grammar correction of `(id, sentence)` items; output in input order.
    pub fn correct(&self, items: &[(String, String)]) -> Result<Vec<String>, StageError> {
        self.expect_stage(Stage::Gec);
        self.text_outputs(items.iter().map(|(id, s)| item(id, s, None)).collect())
    }

    /// Translation of `(id, sentence)` items; output in input order.
    pub fn translate(&self, items: &[(String, String)]) -> Result<Vec<String>, StageError> {
        self.expect_stage(Stage::Nmt);
        self.text_outputs(items.iter().map(|(id, s)| item(id, s, None)).collect())
    }

    /// Post-editing of `(id, source, raw_target)` items.
    pub fn post_edit(&self, items: &[(String, String, String)]) -> Result<Vec<String>, StageError> {
        self.expect_stage(Stage::Ape);
        self.text_outputs(items.iter().map(|(id, s, t)| item(id, s, Some(t))).collect())
    }

    /// Quality scores in [0,1] for `(id, source, target)` items.
    pub fn estimate(&self, items: &[(String, String, String)]) -> Result<Vec<f64>, StageError> {
        self.expect_stage(Stage::Qe);
        let out = self.call_all(items.iter().map(|(id, s, t)| item(id, s, Some(t))).collect())?;
        Ok(out.into_iter().map(|r| r.score.expect("validated")).collect())
    }

    fn expect_stage(&self, stage: Stage) {
        debug_assert_eq!(self.stage, stage, "client for {} used as {stage}", self.stage);
    }

    fn text_outputs(&self, items: Vec<RequestItem>) -> Result<Vec<String>, StageError> {
        let out = self.call_all(items)?;
        Ok(out.into_iter().map(|r| r.output_text.expect("validated")).collect())
    }

    /// Runs every item through the adapter. All-or-nothing: on any failure
    /// the error lists every requested id, since no partial output is kept.
    fn call_all(&self, items: Vec<RequestItem>) -> Result<Vec<ResponseItem>, StageError> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let all_ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
        let chunks: Vec<&[RequestItem]> = items.chunks(self.max_batch).collect();
        let mut results: Vec<ResponseItem> = Vec::with_capacity(items.len());

        for wave in chunks.chunks(self.max_in_flight) {
            let outcomes: Vec<_> = std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|chunk| scope.spawn(move || self.call_chunk(chunk)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join()
                            .unwrap_or_else(|_| Err(CallError::Transport("adapter panicked".into())))
                    })
                    .collect()
            });
            for outcome in outcomes {
                match outcome {
                    Ok(items) => results.extend(items),
                    Err(e) => {
                        return Err(StageError {
                            stage: self.stage,
                            adapter_id: self.adapter_id().to_string(),
                            kind: e.kind(),
                            message: e.message().to_string(),
                            failed_ids: all_ids,
                        });
                    }
                }
            }
        }
        Ok(results)
    }

    fn call_chunk(&self, chunk: &[RequestItem]) -> std::result::Result<Vec<ResponseItem>, CallError> {
        let request = AdapterRequest {
            stage: self.stage,
            source_lang: self.source_lang.clone(),
            target_lang: self.target_lang.clone(),
            items: chunk.to_vec(),
        };
        // One retry on timeout; protocol errors are deterministic.
        let response = match self.adapter.call(&request) {
            Err(CallError::Timeout(_)) => self.adapter.call(&request)?,
            other => other?,
        };
        self.validate_response(chunk, response)
    }

    fn validate_response(
        &self,
        chunk: &[RequestItem],
        response: AdapterResponse,
    ) -> std::result::Result<Vec<ResponseItem>, CallError> {
        let mut by_id: HashMap<String, ResponseItem> = HashMap::with_capacity(response.items.len());
        for it in response.items {
            if by_id.contains_key(&it.id) {
                return Err(CallError::Protocol(format!(
                    "id `{}` appears more than once in response",
                    it.id
                )));
            }
            by_id.insert(it.id.clone(), it);
        }
        let mut ordered = Vec::with_capacity(chunk.len());
        for req in chunk {
            let Some(resp) = by_id.remove(&req.id) else {
                return Err(CallError::Protocol(format!("id `{}` missing from response", req.id)));
            };
            match self.stage {
                Stage::Qe => match resp.score {
                    Some(s) if s.is_finite() && (0.0..=1.0).contains(&s) => {}
                    Some(s) => {
                        return Err(CallError::Protocol(format!(
                            "id `{}` has score {s} outside [0,1]",
                            resp.id
                        )));
                    }
                    None => return Err(CallError::Protocol(format!("id `{}` has no score", resp.id))),
                },
                _ => {
                    if resp.output_text.is_none() {
                        return Err(CallError::Protocol(format!("id `{}` has no output_text", resp.id)));
                    }
                }
            }
            ordered.push(resp);
        }
        if let Some(extra) = by_id.keys().next() {
            return Err(CallError::Protocol(format!(
                "response carries unrequested id `{extra}`"
            )));
        }
        Ok(ordered)
    }
}

fn item(id: &str, source: &str, target: Option<&String>) -> RequestItem {
    RequestItem {
        id: id.to_string(),
        source_text: source.to_string(),
        target_text: target.cloned(),
    }
}

/// One client per stage, plus any extra quality metrics.
#[derive(Debug, Clone)]
pub struct AdapterSet {
    pub gec: StageClient,
    pub nmt: StageClient,
    pub ape: StageClient,
    pub qe: StageClient,
    pub extra_metrics: Vec<StageClient>,
}

impl AdapterSet {
    pub fn from_config(config: &crate::domain::ProjectConfig) -> Result<Self> {
        config.validate()?;
        let client = |stage: Stage| {
            StageClient::from_binding(&config.adapters[&stage], &config.source_lang, &config.target_lang)
        };
        Ok(AdapterSet {
            gec: client(Stage::Gec)?,
            nmt: client(Stage::Nmt)?,
            ape: client(Stage::Ape)?,
            qe: client(Stage::Qe)?,
            extra_metrics: config
                .extra_metrics
                .iter()
                .map(|b| StageClient::from_binding(b, &config.source_lang, &config.target_lang))
                .collect::<Result<_>>()?,
        })
    }

    pub fn builtin(source_lang: &str, target_lang: &str) -> Self {
        let client = |stage| StageClient::new(stage, Arc::new(BuiltinAdapter::new(stage)), source_lang, target_lang);
        AdapterSet {
            gec: client(Stage::Gec),
            nmt: client(Stage::Nmt),
            ape: client(Stage::Ape),
            qe: client(Stage::Qe),
            extra_metrics: Vec::new(),
        }
    }

    pub fn get(&self, stage: Stage) -> &StageClient {
        match stage {
            Stage::Gec => &self.gec,
            Stage::Nmt => &self.nmt,
            Stage::Ape => &self.ape,
            Stage::Qe => &self.qe,
        }
    }

    pub fn replace(&mut self, client: StageClient) {
        match client.stage() {
            Stage::Gec => self.gec = client,
            Stage::Nmt => self.nmt = client,
            Stage::Ape => self.ape = client,
            Stage::Qe => self.qe = client,
        }
    }

    pub fn adapter_ids(&self) -> BTreeMap<Stage, String> {
        Stage::ALL
            .into_iter()
            .map(|s| (s, self.get(s).adapter_id().to_string()))
            .collect()
    }
}
