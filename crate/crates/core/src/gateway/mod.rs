//! Uniform access to text-completion backends.
//!
//! [`Gateway`] wraps one [`Backend`] with request validation, the context
//! window check and a bound on in-flight requests. Backends:
//!
//! * [`RemoteBackend`]: OpenAI-compatible chat completions with logprobs.
//! * [`ScriptedBackend`]: replays a cassette keyed by request hash.
//! * [`OracleBackend`]: answers from the ground truth embedded in the prompt
//!   footer, optionally flipping answers with a seeded probability.

mod config;
mod oracle;
mod remote;
mod scripted;

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{BackendConfig, BackendKind, RetryPolicy};
pub use oracle::{OracleBackend, OracleFooter, OracleTask};
pub use remote::RemoteBackend;
pub use scripted::{Cassette, CassetteEntry, RecordingBackend, ScriptedBackend};

/// Context window of the reference model, in tokens.
pub const DEFAULT_CONTEXT_WINDOW: usize = 8192;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimit { attempts: u32 },
    #[error("prompt needs ~{estimated} tokens, context window is {window}")]
    ContextLength { estimated: usize, window: usize },
    #[error("no recorded response for request hash {0}")]
    ScriptMiss(String),
    #[error("prompt carries no oracle footer")]
    OracleFooterMissing,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected backend response: {0}")]
    Protocol(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub want_logprobs_for: Option<Vec<String>>,
    pub model_name: String,
}

impl LlmRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        Ok(())
    }

    /// Conservative chars/4 token estimate of the prompt.
    pub fn estimated_prompt_tokens(&self) -> usize {
        let chars = self.system_text.chars().count() + self.user_text.chars().count();
        chars.div_ceil(4)
    }

    /// Stable hex digest of the request, used as cassette key.
    pub fn stable_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn without_oracle_footer(&self) -> LlmRequest {
        LlmRequest {
            user_text: oracle::strip_footer(&self.user_text).to_string(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    /// Natural-log probabilities of the requested candidate tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_logprobs: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub usage: Usage,
}

impl LlmResponse {
    pub fn text(text: impl Into<String>) -> Self {
        LlmResponse {
            text: text.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("response carries no log-probability for {0:?} or {1:?}")]
pub struct MissingLogprobsError(pub String, pub String);

/// Two-way softmax over the candidate labels. A missing label counts as
/// log-probability -inf; ties go to the first label.
pub fn label_probability(
    resp: &LlmResponse,
    labels: (&str, &str),
) -> Result<(String, f64), MissingLogprobsError> {
    let missing = || MissingLogprobsError(labels.0.into(), labels.1.into());
    let map = resp.label_logprobs.as_ref().ok_or_else(missing)?;
    let (a, b) = (map.get(labels.0).copied(), map.get(labels.1).copied());
    let (a, b) = match (a, b) {
        (None, None) => return Err(missing()),
        (a, b) => (
            a.unwrap_or(f64::NEG_INFINITY),
            b.unwrap_or(f64::NEG_INFINITY),
        ),
    };
    let (chosen, hi, lo) = if a >= b {
        (labels.0, a, b)
    } else {
        (labels.1, b, a)
    };
    // exp(hi)/(exp(hi)+exp(lo)) computed shift-invariantly
    let prob = 1.0 / (1.0 + (lo - hi).exp());
    Ok((chosen.to_string(), prob))
}

/// A completion backend. Implementations must be shareable across threads.
pub trait Backend: Send + Sync {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError>;

    fn name(&self) -> &str;

    /// Oracle backends read the machine-readable footer; all others get the
    /// prompt without it.
    fn reads_oracle_footer(&self) -> bool {
        false
    }
}

/// Counting semaphore bounding concurrent backend calls.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        InFlight {
            limit: limit.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    in_flight: InFlight,
    context_window: usize,
    model_name: String,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("max_parallel", &self.in_flight.limit)
            .field("context_window", &self.context_window)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, max_parallel: usize) -> Self {
        Gateway {
            backend,
            in_flight: InFlight::new(max_parallel),
            context_window: DEFAULT_CONTEXT_WINDOW,
            model_name: String::from("gpt-4"),
        }
    }

    pub fn with_context_window(mut self, tokens: usize) -> Self {
        self.context_window = tokens;
        self
    }

    pub fn with_model_name(mut self, model: impl Into<String>) -> Self {
        self.model_name = model.into();
        self
    }

    pub fn from_config(cfg: &BackendConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let backend: Arc<dyn Backend> = match &cfg.kind {
            BackendKind::Remote { record_to } => {
                let remote = RemoteBackend::from_config(cfg)?;
                match record_to {
                    Some(path) => Arc::new(RecordingBackend::new(remote, path.clone())),
                    None => Arc::new(remote),
                }
            }
            BackendKind::Scripted { cassette } => {
                Arc::new(ScriptedBackend::new(Cassette::load(cassette)?))
            }
            BackendKind::OracleMock => Arc::new(OracleBackend::exact()),
            BackendKind::NoisyOracleMock { flip_prob, seed } => {
                Arc::new(OracleBackend::noisy(*flip_prob, *seed))
            }
        };
        Ok(Gateway::new(backend, cfg.max_parallel)
            .with_context_window(cfg.context_window)
            .with_model_name(cfg.model.clone()))
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn max_parallel(&self) -> usize {
        self.in_flight.limit
    }

    pub fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        req.validate()?;
        let stripped;
        let req = if self.backend.reads_oracle_footer() {
            req
        } else {
            stripped = req.without_oracle_footer();
            &stripped
        };
        let estimated = req.estimated_prompt_tokens();
        if estimated > self.context_window {
            return Err(GatewayError::ContextLength {
                estimated,
                window: self.context_window,
            });
        }
        let _permit = self.in_flight.acquire();
        let resp = self.backend.complete(req)?;
        if let (Some(map), Some(wanted)) = (&resp.label_logprobs, &req.want_logprobs_for) {
            if map.values().any(|&lp| lp > 0.0) || map.keys().any(|k| !wanted.contains(k)) {
                return Err(GatewayError::Protocol(
                    "label log-probabilities must be <= 0 and requested".into(),
                ));
            }
        }
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::time::Duration;

    fn logprobs(pairs: &[(&str, f64)]) -> LlmResponse {
        LlmResponse {
            label_logprobs: Some(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()),
            ..Default::default()
        }
    }

    #[test]
    fn softmax_of_two_labels() {
        let (label, p) =
            label_probability(&logprobs(&[("1", -0.2231), ("0", -1.6094)]), ("1", "0")).unwrap();
        assert_eq!(label, "1");
        assert!((p - 0.8).abs() < 1e-4, "{p}");
    }

    #[test]
    fn tie_goes_to_first_label() {
        let (label, p) =
            label_probability(&logprobs(&[("1", -0.5), ("0", -0.5)]), ("1", "0")).unwrap();
        assert_eq!(label, "1");
        assert_eq!(p, 0.5);
    }

    #[test]
    fn single_label_is_certain() {
        let (label, p) = label_probability(&logprobs(&[("0", -0.1)]), ("1", "0")).unwrap();
        assert_eq!(label, "0");
        assert_eq!(p, 1.0);
    }

    #[test]
    fn no_labels_is_an_error() {
        assert!(label_probability(&logprobs(&[("yes", -0.1)]), ("1", "0")).is_err());
        assert!(label_probability(&LlmResponse::text("1"), ("1", "0")).is_err());
    }

    fn request(user: &str) -> LlmRequest {
        LlmRequest {
            system_text: String::new(),
            user_text: user.into(),
            temperature: 0.0,
            max_tokens: 1,
            want_logprobs_for: None,
            model_name: "m".into(),
        }
    }

    struct Counting {
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Backend for Counting {
        fn complete(&self, _req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok(LlmResponse::text("ok"))
        }

        fn name(&self) -> &str {
            "counting"
        }
    }

    #[test]
    fn in_flight_bound_is_respected() {
        let backend = Arc::new(Counting {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gw = Gateway::new(backend.clone(), 3);
        std::thread::scope(|s| {
            for _ in 0..16 {
                s.spawn(|| gw.complete(&request("x")).unwrap());
            }
        });
        let peak = backend.peak.load(Ordering::SeqCst);
        assert!((1..=3).contains(&peak), "peak {peak}");
    }

    #[test]
    fn context_window_enforced() {
        let gw = Gateway::new(Arc::new(OracleBackend::exact()), 1);
        let long = "x".repeat(4 * DEFAULT_CONTEXT_WINDOW + 4);
        assert!(matches!(
            gw.complete(&request(&long)),
            Err(GatewayError::ContextLength { window: 8192, .. })
        ));
    }

    #[test]
    fn invalid_temperature_rejected() {
        let mut req = request("x");
        req.temperature = 2.5;
        assert!(matches!(req.validate(), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = request("x");
        assert_eq!(a.stable_hash(), request("x").stable_hash());
        assert_ne!(a.stable_hash(), request("y").stable_hash());
        assert_eq!(a.stable_hash().len(), 64);
    }
}
