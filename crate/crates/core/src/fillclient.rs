//! HTTP client for an external fill service speaking the `/v1/fill` protocol.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskfill::{Candidate, FillModel};
use crate::textproc::{TokenId, Vocabulary, MASK, RESERVED, UNK};

pub const MASK_TOKEN: &str = RESERVED[MASK as usize];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillRequest {
    pub tokens: Vec<String>,
    pub num_candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub token: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillResponse {
    pub tokens: Vec<String>,
    /// One ranked list per `[MASK]` of the request, left to right.
    pub candidates: Vec<Vec<WireCandidate>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model: String,
}

/// Checks a response against the request it answers.
pub fn validate_response(req: &FillRequest, resp: &FillResponse) -> Result<()> {
    if resp.tokens.len() != req.tokens.len() {
        return Err(Error::Protocol(format!(
            "response has {} tokens, request {}",
            resp.tokens.len(),
            req.tokens.len()
        )));
    }
    for (i, (a, b)) in req.tokens.iter().zip(&resp.tokens).enumerate() {
        if a != MASK_TOKEN && a != b {
            return Err(Error::Protocol(format!("non-mask token {i} changed from {a:?} to {b:?}")));
        }
    }
    let masks = req.tokens.iter().filter(|t| *t == MASK_TOKEN).count();
    if resp.candidates.len() != masks {
        return Err(Error::Protocol(format!(
            "{} candidate lists for {masks} masks",
            resp.candidates.len()
        )));
    }
    for (k, list) in resp.candidates.iter().enumerate() {
        if list.len() > req.num_candidates {
            return Err(Error::Protocol(format!(
                "blank {k}: {} candidates, at most {} requested",
                list.len(),
                req.num_candidates
            )));
        }
        if list.iter().any(|c| !c.score.is_finite()) {
            return Err(Error::Protocol(format!("blank {k}: non-finite score")));
        }
        if list.windows(2).any(|w| w[0].score < w[1].score) {
            return Err(Error::Protocol(format!("blank {k}: candidates not in descending score order")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub timeout: Duration,
    pub num_candidates: usize,
    pub max_in_flight: usize,
    /// Sleep before each retry; its length is the retry count.
    pub backoff: Vec<Duration>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            timeout: Duration::from_secs(30),
            num_candidates: 8,
            max_in_flight: 4,
            backoff: vec![Duration::from_millis(100), Duration::from_millis(400)],
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// A [`FillModel`] backed by a fill service.
pub struct FillClient {
    base: String,
    agent: ureq::Agent,
    vocab: Vocabulary,
    cfg: ClientConfig,
    limiter: Limiter,
    unknown: AtomicU64,
}

enum Failure {
    Retry(Error),
    Fatal(Error),
}

impl FillClient {
    pub fn new(endpoint: &str, vocab: Vocabulary, cfg: ClientConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        FillClient {
            base: endpoint.trim_end_matches('/').to_string(),
            agent,
            vocab,
            limiter: Limiter::new(cfg.max_in_flight),
            cfg,
            unknown: AtomicU64::new(0),
        }
    }

    /// Candidate tokens seen so far that the local vocabulary lacks.
    pub fn unknown_tokens(&self) -> u64 {
        self.unknown.load(Ordering::Relaxed)
    }

    pub fn health(&self) -> Result<Health> {
        self.with_retries(|| {
            let resp = self
                .agent
                .get(&format!("{}/v1/health", self.base))
                .call()
                .map_err(|e| Failure::Retry(Error::Transport(e.to_string())))?;
            Self::decode(resp)
        })
    }

    /// Sends one request and validates the answer.
    pub fn remote_fill(&self, req: &FillRequest) -> Result<FillResponse> {
        let resp: FillResponse = self.with_retries(|| {
            let resp = self
                .agent
                .post(&format!("{}/v1/fill", self.base))
                .header("Content-Type", "application/json")
                .send_json(req)
                .map_err(|e| Failure::Retry(Error::Transport(e.to_string())))?;
            Self::decode(resp)
        })?;
        validate_response(req, &resp)?;
        Ok(resp)
    }

    fn decode<T: serde::de::DeserializeOwned>(
        mut resp: ureq::http::Response<ureq::Body>,
    ) -> std::result::Result<T, Failure> {
        let status = resp.status();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retry(Error::Transport(e.to_string())))?;
        if status.is_server_error() {
            return Err(Failure::Retry(Error::Transport(format!("server answered {status}: {body}"))));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(Error::Protocol(format!("server answered {status}: {body}"))));
        }
        serde_json::from_str(&body).map_err(|e| Failure::Fatal(Error::Protocol(format!("malformed response: {e}"))))
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> std::result::Result<T, Failure>) -> Result<T> {
        let _permit = self.limiter.acquire();
        let mut attempt = 0;
        loop {
            match call() {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(e)) => match self.cfg.backoff.get(attempt) {
                    Some(&pause) => {
                        log::debug!("fill service attempt {} failed: {e}", attempt + 1);
                        thread::sleep(pause);
                        attempt += 1;
                    }
                    None => return Err(e),
                },
            }
        }
    }
}

impl FillModel for FillClient {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn candidates(&self, context: &[TokenId], blanks: &[usize]) -> Result<Vec<Vec<Candidate>>> {
        let req = FillRequest {
            tokens: self.vocab.decode(context),
            num_candidates: self.cfg.num_candidates,
        };
        let resp = self.remote_fill(&req)?;
        // candidate list index of each masked position
        let mask_slots: Vec<usize> = context
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == MASK)
            .map(|(i, _)| i)
            .collect();
        blanks
            .iter()
            .map(|b| {
                let slot = mask_slots
                    .binary_search(b)
                    .map_err(|_| Error::Invalid(format!("position {b} is not a blank")))?;
                Ok(resp.candidates[slot]
                    .iter()
                    .map(|c| {
                        let id = self.vocab.id(&c.token);
                        if id == UNK && c.token != RESERVED[UNK as usize] {
                            self.unknown.fetch_add(1, Ordering::Relaxed);
                        }
                        Candidate { token: id, score: c.score }
                    })
                    .collect())
            })
            .collect()
    }
}
