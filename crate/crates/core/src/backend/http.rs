use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{inflate, ErrorEnvelope, ErrorKind, LogitsRequest, LogitsResponse, MetaResponse};
use super::{Backend, BackendDescriptor, BackendError};
use crate::logits::LogitVector;
use crate::pipeline::PaddedBatch;
use crate::types::TokenId;

#[derive(Debug, Clone)]
pub struct HttpOptions {
    /// Retries after the first failed attempt, transport-class errors only.
    pub retries: u32,
    /// Backoff before retry i is `backoff * 2^i`.
    pub backoff: Duration,
    pub max_in_flight: usize,
    /// Request sparse top-n rows instead of dense ones.
    pub top: Option<usize>,
    pub timeout: Duration,
}

impl Default for HttpOptions {
    fn default() -> Self {
        Self {
            retries: 3,
            backoff: Duration::from_millis(100),
            max_in_flight: 8,
            top: None,
            timeout: Duration::from_secs(120),
        }
    }
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Client for a remote logits server speaking the [`wire`](super::wire) protocol.
pub struct HttpBackend {
    base: String,
    agent: ureq::Agent,
    options: HttpOptions,
    descriptor: BackendDescriptor,
    model: String,
    slots: Slots,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("base", &self.base).field("model", &self.model).finish()
    }
}

impl HttpBackend {
    /// Connects and fetches `/v1/meta`.
    pub fn connect(endpoint: &str, options: HttpOptions) -> Result<Self, BackendError> {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(options.timeout))
            .build();
        let mut backend = Self {
            base: endpoint.trim_end_matches('/').to_string(),
            agent: config.into(),
            slots: Slots { free: Mutex::new(options.max_in_flight.max(1)), cv: Condvar::new() },
            options,
            descriptor: BackendDescriptor { vocab_size: 0, eos_id: 0, pad_id: 0, supports_mask: false, max_context: 0 },
            model: String::new(),
        };
        let meta: MetaResponse = backend.with_retry(|| backend.get("/v1/meta"))?;
        backend.descriptor = meta.descriptor();
        backend.model = meta.model;
        Ok(backend)
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    fn with_retry<T>(&self, mut call: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match call() {
                Err(e) if e.is_retryable() && attempt < self.options.retries => {
                    thread::sleep(self.options.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, BackendError> {
        let _slot = self.slots.acquire();
        let response = self.agent.get(format!("{}{path}", self.base)).call().map_err(transport)?;
        decode(response)
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: &impl Serialize) -> Result<T, BackendError> {
        let _slot = self.slots.acquire();
        let response = self.agent.post(format!("{}{path}", self.base)).send_json(body).map_err(transport)?;
        decode(response)
    }

    fn request(&self, request: LogitsRequest) -> Result<Vec<LogitVector>, BackendError> {
        let rows = request.contexts.len();
        let response: LogitsResponse = self.with_retry(|| self.post("/v1/logits", &request))?;
        inflate(response, rows, self.descriptor.vocab_size)
    }
}

fn transport(e: ureq::Error) -> BackendError {
    BackendError::Transport(e.to_string())
}

fn decode<T: DeserializeOwned>(mut response: ureq::http::Response<ureq::Body>) -> Result<T, BackendError> {
    let status = response.status().as_u16();
    let text = response.body_mut().with_config().limit(u64::MAX).read_to_string().map_err(transport)?;
    if status == 200 {
        return serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("bad response body: {e}")));
    }
    let (kind, detail) = match serde_json::from_str::<ErrorEnvelope>(&text) {
        Ok(env) => (Some(env.error.kind), env.error.detail),
        Err(_) => (None, text),
    };
    match (status, kind) {
        (503, _) | (_, Some(ErrorKind::Overloaded)) => Err(BackendError::Overloaded(detail)),
        (500..=599, _) => Err(BackendError::Transport(format!("HTTP {status}: {detail}"))),
        (_, Some(kind)) => Err(BackendError::Remote { kind: kind.as_str().into(), detail }),
        _ => Err(BackendError::Protocol(format!("HTTP {status}: {detail}"))),
    }
}

impl Backend for HttpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn next_logits(&self, contexts: &[Vec<TokenId>]) -> Result<Vec<LogitVector>, BackendError> {
        self.descriptor.check_contexts(contexts)?;
        self.request(LogitsRequest { contexts: contexts.to_vec(), mask: None, top: self.options.top })
    }

    fn next_logits_masked(&self, batch: &PaddedBatch) -> Result<Vec<LogitVector>, BackendError> {
        if !self.descriptor.supports_mask {
            return Err(BackendError::MaskUnsupported);
        }
        self.descriptor.check_contexts(batch.rows())?;
        self.request(LogitsRequest {
            contexts: batch.rows().to_vec(),
            mask: Some(batch.mask().to_vec()),
            top: self.options.top,
        })
    }
}
