//! Fill-mask backends: a remote HTTP endpoint speaking the hosted fill-mask
//! JSON convention, and a deterministic synthetic model used as a test
//! oracle. [`batch_evaluate`] drives either with bounded concurrency and
//! exponential-backoff retries while preserving prompt order.

use std::future::Future;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{Prompt, MASK_PLACEHOLDER};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendError {
    #[error("render error: {message}")]
    Render { message: String },
    #[error("transport error: {message}")]
    Transport { message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {message}")]
    Parse { message: String },
    #[error("endpoint returned no predictions")]
    EmptyPredictions,
    #[error("invalid backend configuration: {message}")]
    Config { message: String },
}

impl BackendError {
    /// Transport failures, 5xx and 429 may succeed on a later attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport { .. } => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Identifies a model and how to reach it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub mask_token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding a bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token_env: Option<String>,
}

impl BackendDescriptor {
    pub fn synthetic(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            mask_token: "[MASK]".into(),
            endpoint: None,
            auth_token_env: None,
        }
    }

    pub fn remote(name: impl Into<String>, mask_token: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            mask_token: mask_token.into(),
            endpoint: Some(endpoint.into()),
            auth_token_env: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.mask_token.is_empty() {
            return Err(BackendError::Config {
                message: "mask_token must not be empty".into(),
            });
        }
        if self.mask_token.contains(MASK_PLACEHOLDER) {
            return Err(BackendError::Config {
                message: "mask_token must differ from the prompt placeholder".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProbability {
    pub token: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillMaskResult {
    /// Position of the prompt in the evaluated prompt set.
    pub prompt_id: usize,
    pub top_k: usize,
    pub predictions: Vec<TokenProbability>,
}

impl FillMaskResult {
    /// Sorts descending, truncates to `top_k` and checks score bounds.
    pub fn new(prompt_id: usize, top_k: usize, mut predictions: Vec<TokenProbability>) -> Result<Self, BackendError> {
        if predictions.is_empty() {
            return Err(BackendError::EmptyPredictions);
        }
        if let Some(bad) = predictions
            .iter()
            .find(|p| !(p.score.is_finite() && (0.0..=1.0).contains(&p.score)))
        {
            return Err(BackendError::Parse {
                message: format!("score {} for `{}` outside [0, 1]", bad.score, bad.token),
            });
        }
        predictions.sort_by(|a, b| b.score.total_cmp(&a.score));
        predictions.truncate(top_k);
        let total: f64 = predictions.iter().map(|p| p.score).sum();
        if total > 1.0 + 1e-6 {
            return Err(BackendError::Parse {
                message: format!("top-{top_k} scores sum to {total} > 1"),
            });
        }
        Ok(Self {
            prompt_id,
            top_k,
            predictions,
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.predictions.iter().map(|p| p.score).sum()
    }
}

/// Replaces the neutral placeholder with the backend's mask literal.
pub fn render_prompt(text: &str, descriptor: &BackendDescriptor) -> Result<String, BackendError> {
    let n = text.matches(MASK_PLACEHOLDER).count();
    if n != 1 {
        return Err(BackendError::Render {
            message: format!("expected exactly one {MASK_PLACEHOLDER} placeholder, found {n}"),
        });
    }
    Ok(text.replacen(MASK_PLACEHOLDER, &descriptor.mask_token, 1))
}

/// One masked text to score. `w_index` is only consulted by the synthetic
/// model; remote endpoints see `text` alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskQuery {
    pub text: String,
    pub w_index: usize,
}

pub trait FillMaskBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Scores one rendered text that contains the descriptor's mask token.
    fn fill_mask(
        &self,
        query: &MaskQuery,
        top_k: usize,
    ) -> impl Future<Output = Result<Vec<TokenProbability>, BackendError>> + Send;
}

fn check_mask(descriptor: &BackendDescriptor, text: &str) -> Result<(), BackendError> {
    let n = text.matches(descriptor.mask_token.as_str()).count();
    if n != 1 {
        return Err(BackendError::Render {
            message: format!("text must contain `{}` exactly once, found {n}", descriptor.mask_token),
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct FillMaskRequest<'a> {
    inputs: &'a str,
    parameters: FillMaskParameters,
}

#[derive(Serialize)]
struct FillMaskParameters {
    top_k: usize,
}

#[derive(Deserialize)]
struct WirePrediction {
    token_str: String,
    score: f64,
}

/// Parses a fill-mask response body: a JSON array of objects carrying
/// `token_str` and `score`; other fields are ignored.
pub fn parse_fill_mask_response(body: &str) -> Result<Vec<TokenProbability>, BackendError> {
    let wire: Vec<WirePrediction> =
        serde_json::from_str(body).map_err(|e| BackendError::Parse { message: e.to_string() })?;
    if wire.is_empty() {
        return Err(BackendError::EmptyPredictions);
    }
    Ok(wire
        .into_iter()
        .map(|w| TokenProbability {
            token: w.token_str,
            score: w.score,
        })
        .collect())
}

/// Client for a hosted fill-mask endpoint.
pub struct HttpBackend {
    descriptor: BackendDescriptor,
    endpoint: String,
    client: reqwest::Client,
    auth_token: Option<String>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("descriptor", &self.descriptor)
            .field("auth_token", &self.auth_token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpBackend {
    pub fn new(descriptor: BackendDescriptor) -> Result<Self, BackendError> {
        descriptor.validate()?;
        let endpoint = descriptor.endpoint.clone().ok_or_else(|| BackendError::Config {
            message: "remote backend requires an endpoint".into(),
        })?;
        let auth_token = match &descriptor.auth_token_env {
            Some(var) => std::env::var(var).ok().filter(|t| !t.is_empty()),
            None => None,
        };
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| BackendError::Config { message: e.to_string() })?;
        Ok(Self {
            descriptor,
            endpoint,
            client,
            auth_token,
        })
    }
}

impl FillMaskBackend for HttpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    async fn fill_mask(&self, query: &MaskQuery, top_k: usize) -> Result<Vec<TokenProbability>, BackendError> {
        check_mask(&self.descriptor, &query.text)?;
        let mut request = self.client.post(&self.endpoint).json(&FillMaskRequest {
            inputs: &query.text,
            parameters: FillMaskParameters { top_k },
        });
        if let Some(token) = &self.auth_token {
            request = request.bearer_auth(token);
        }
        let response = request
            .send()
            .await
            .map_err(|e| BackendError::Transport { message: e.to_string() })?;
        let status = response.status();
        let body = response
            .text()
            .await
            .map_err(|e| BackendError::Transport { message: e.to_string() })?;
        if !status.is_success() {
            let mut body = body;
            body.truncate(512);
            return Err(BackendError::Status {
                status: status.as_u16(),
                body,
            });
        }
        parse_fill_mask_response(&body)
    }
}

/// Parameters of the synthetic model. The normalized female share at axis
/// index `i` is `female_base + female_slope_per_index * i` (clamped to
/// [0, 1]); gendered tokens carry `1 - neutral_mass` in total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelConfig {
    pub female_base: f64,
    pub female_slope_per_index: f64,
    pub neutral_mass: f64,
    pub seed: u64,
    /// Amplitude of a seed- and text-dependent perturbation of the female
    /// share; zero gives the exact closed form.
    #[serde(default)]
    pub jitter: f64,
}

impl Default for SyntheticModelConfig {
    fn default() -> Self {
        Self {
            female_base: 0.22,
            female_slope_per_index: 0.01,
            neutral_mass: 0.06,
            seed: 0,
            jitter: 0.0,
        }
    }
}

/// Split of each gender's mass over its two pronouns.
pub const SYNTHETIC_PRIMARY_SHARE: f64 = 0.75;
/// Split of the neutral mass over "they", "it", "there".
pub const SYNTHETIC_NEUTRAL_SPLIT: [f64; 3] = [0.5, 1.0 / 3.0, 1.0 / 6.0];

impl SyntheticModelConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let finite = [
            self.female_base,
            self.female_slope_per_index,
            self.neutral_mass,
            self.jitter,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || !(0.0..=1.0).contains(&self.neutral_mass) || self.jitter < 0.0 {
            return Err(BackendError::Config {
                message: "synthetic config needs finite values, neutral_mass in [0, 1] and jitter >= 0".into(),
            });
        }
        Ok(())
    }

    pub fn female_share(&self, w_index: usize, text: &str) -> f64 {
        let mut share = self.female_base + self.female_slope_per_index * w_index as f64;
        if self.jitter > 0.0 {
            share += self.jitter * (2.0 * unit_hash(self.seed, text) - 1.0);
        }
        share.clamp(0.0, 1.0)
    }

    /// The full (untruncated) distribution, in a fixed token order.
    pub fn distribution(&self, w_index: usize, text: &str) -> Vec<TokenProbability> {
        let share = self.female_share(w_index, text);
        let gendered = 1.0 - self.neutral_mass;
        let female = share * gendered;
        let male = (1.0 - share) * gendered;
        let p = SYNTHETIC_PRIMARY_SHARE;
        let entry = |token: &str, score: f64| TokenProbability {
            token: token.to_string(),
            score,
        };
        vec![
            entry("she", female * p),
            entry("her", female * (1.0 - p)),
            entry("he", male * p),
            entry("his", male * (1.0 - p)),
            entry("they", self.neutral_mass * SYNTHETIC_NEUTRAL_SPLIT[0]),
            entry("it", self.neutral_mass * SYNTHETIC_NEUTRAL_SPLIT[1]),
            entry("there", self.neutral_mass * SYNTHETIC_NEUTRAL_SPLIT[2]),
        ]
    }
}

// FNV-1a over seed and text, mapped to [0, 1).
fn unit_hash(seed: u64, text: &str) -> f64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(text.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic stand-in for a fill-mask model.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    descriptor: BackendDescriptor,
    config: SyntheticModelConfig,
}

impl SyntheticBackend {
    pub fn new(descriptor: BackendDescriptor, config: SyntheticModelConfig) -> Result<Self, BackendError> {
        descriptor.validate()?;
        config.validate()?;
        Ok(Self { descriptor, config })
    }

    pub fn config(&self) -> &SyntheticModelConfig {
        &self.config
    }

    pub fn predict(&self, query: &MaskQuery) -> Result<Vec<TokenProbability>, BackendError> {
        check_mask(&self.descriptor, &query.text)?;
        Ok(self
            .config
            .distribution(query.w_index, &query.text)
            .into_iter()
            .filter(|t| t.score > 0.0)
            .collect())
    }
}

impl FillMaskBackend for SyntheticBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    async fn fill_mask(&self, query: &MaskQuery, _top_k: usize) -> Result<Vec<TokenProbability>, BackendError> {
        self.predict(query)
    }
}

/// Either backend kind behind one type.
#[derive(Debug)]
pub enum Backend {
    Http(HttpBackend),
    Synthetic(SyntheticBackend),
}

impl Backend {
    /// Remote when the descriptor names an endpoint, synthetic otherwise.
    pub fn from_descriptor(
        descriptor: BackendDescriptor,
        synthetic: Option<SyntheticModelConfig>,
    ) -> Result<Self, BackendError> {
        if descriptor.endpoint.is_some() {
            Ok(Backend::Http(HttpBackend::new(descriptor)?))
        } else {
            Ok(Backend::Synthetic(SyntheticBackend::new(
                descriptor,
                synthetic.unwrap_or_default(),
            )?))
        }
    }

    pub fn is_remote(&self) -> bool {
        matches!(self, Backend::Http(_))
    }
}

impl FillMaskBackend for Backend {
    fn descriptor(&self) -> &BackendDescriptor {
        match self {
            Backend::Http(b) => b.descriptor(),
            Backend::Synthetic(b) => b.descriptor(),
        }
    }

    async fn fill_mask(&self, query: &MaskQuery, top_k: usize) -> Result<Vec<TokenProbability>, BackendError> {
        match self {
            Backend::Http(b) => b.fill_mask(query, top_k).await,
            Backend::Synthetic(b) => b.fill_mask(query, top_k).await,
        }
    }
}

/// Renders `text`, queries the backend once and validates the result.
pub async fn fill_mask<B: FillMaskBackend>(
    backend: &B,
    prompt_id: usize,
    prompt: &Prompt,
    top_k: usize,
) -> Result<FillMaskResult, BackendError> {
    let query = MaskQuery {
        text: render_prompt(&prompt.text, backend.descriptor())?,
        w_index: prompt.w_index,
    };
    let predictions = backend.fill_mask(&query, top_k).await?;
    FillMaskResult::new(prompt_id, top_k, predictions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    /// Batch fails when more than this fraction of prompts fail.
    pub max_failure_fraction: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base_delay_ms: 250,
            max_delay_ms: 10_000,
            max_failure_fraction: 0.0,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptFailure {
    pub prompt_id: usize,
    pub attempts: u32,
    pub error: BackendError,
}

/// Per-prompt outcomes in prompt order. Failed prompts are flagged rather
/// than dropped so downstream statistics can report them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResults {
    pub outcomes: Vec<Result<FillMaskResult, PromptFailure>>,
}

impl BatchResults {
    pub fn successes(&self) -> impl Iterator<Item = &FillMaskResult> {
        self.outcomes.iter().filter_map(|o| o.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = &PromptFailure> {
        self.outcomes.iter().filter_map(|o| o.as_ref().err())
    }

    pub fn is_partial(&self) -> bool {
        self.failures().next().is_some()
    }
}

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("parallelism must be at least 1")]
    Parallelism,
    #[error("{failed} of {total} prompts failed (allowed fraction {allowed}); first error: {}", failures.first().map(|f| f.error.to_string()).unwrap_or_default())]
    TooManyFailures {
        failed: usize,
        total: usize,
        allowed: f64,
        failures: Vec<PromptFailure>,
    },
}

async fn evaluate_with_retry<B: FillMaskBackend>(
    backend: &B,
    prompt_id: usize,
    prompt: &Prompt,
    top_k: usize,
    policy: &RetryPolicy,
) -> Result<FillMaskResult, PromptFailure> {
    let mut attempt = 0;
    loop {
        match fill_mask(backend, prompt_id, prompt, top_k).await {
            Ok(result) => return Ok(result),
            Err(error) if error.is_retryable() && attempt < policy.max_retries => {
                tokio::time::sleep(policy.delay(attempt)).await;
                attempt += 1;
            }
            Err(error) => {
                return Err(PromptFailure {
                    prompt_id,
                    attempts: attempt + 1,
                    error,
                })
            }
        }
    }
}

/// Evaluates every prompt with up to `parallelism` requests in flight.
/// Outcomes come back in prompt order whatever the completion order.
pub async fn batch_evaluate<B: FillMaskBackend>(
    backend: &B,
    prompts: &[Prompt],
    top_k: usize,
    parallelism: usize,
    policy: &RetryPolicy,
) -> Result<BatchResults, BatchError> {
    if parallelism == 0 {
        return Err(BatchError::Parallelism);
    }
    // Indices rather than borrowed items keep the future `Send` in
    // generic contexts such as request handlers.
    let outcomes: Vec<_> = stream::iter(0..prompts.len())
        .map(|id| evaluate_with_retry(backend, id, &prompts[id], top_k, policy))
        .buffered(parallelism)
        .collect()
        .await;
    let results = BatchResults { outcomes };
    let failures: Vec<PromptFailure> = results.failures().cloned().collect();
    if !failures.is_empty() {
        let fraction = failures.len() as f64 / prompts.len() as f64;
        if fraction > policy.max_failure_fraction {
            return Err(BatchError::TooManyFailures {
                failed: failures.len(),
                total: prompts.len(),
                allowed: policy.max_failure_fraction,
                failures,
            });
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn prompt(text: &str, w_index: usize) -> Prompt {
        Prompt {
            text: text.into(),
            w_value: w_index.to_string(),
            w_index,
            tags: BTreeMap::new(),
        }
    }

    #[test]
    fn render_substitutes_mask() {
        let mut d = BackendDescriptor::synthetic("s");
        assert_eq!(
            render_prompt("«MASK» was a kid in 1801.", &d).unwrap(),
            "[MASK] was a kid in 1801."
        );
        d.mask_token = "<mask>".into();
        assert_eq!(render_prompt("«MASK» …", &d).unwrap(), "<mask> …");
        assert!(matches!(
            render_prompt("no placeholder", &d),
            Err(BackendError::Render { .. })
        ));
        assert!(render_prompt("«MASK» «MASK»", &d).is_err());
    }

    #[test]
    fn retry_classification() {
        let status = |s| BackendError::Status {
            status: s,
            body: String::new(),
        };
        assert!(status(429).is_retryable());
        assert!(status(503).is_retryable());
        assert!(!status(404).is_retryable());
        assert!(!status(400).is_retryable());
        assert!(BackendError::Transport { message: "x".into() }.is_retryable());
        assert!(!BackendError::EmptyPredictions.is_retryable());
        assert!(!BackendError::Parse { message: "x".into() }.is_retryable());
    }

    #[test]
    fn response_parsing() {
        let body = r#"[{"score":0.4,"token":1,"token_str":" she","sequence":"x"},{"score":0.3,"token_str":"he"}]"#;
        let preds = parse_fill_mask_response(body).unwrap();
        assert_eq!(preds.len(), 2);
        assert_eq!(preds[0].token, " she");
        assert_eq!(parse_fill_mask_response("[]"), Err(BackendError::EmptyPredictions));
        assert!(matches!(
            parse_fill_mask_response("{\"error\":1}"),
            Err(BackendError::Parse { .. })
        ));
    }

    #[test]
    fn result_is_sorted_and_truncated() {
        let preds = ["a", "b", "c", "d", "e", "f"]
            .iter()
            .enumerate()
            .map(|(i, t)| TokenProbability {
                token: t.to_string(),
                score: 0.01 * (i + 1) as f64,
            })
            .collect();
        let r = FillMaskResult::new(0, 5, preds).unwrap();
        assert_eq!(r.predictions.len(), 5);
        assert!(r.predictions.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(r.predictions[0].token, "f");
        let bad = vec![TokenProbability {
            token: "x".into(),
            score: 1.5,
        }];
        assert!(FillMaskResult::new(0, 5, bad).is_err());
    }

    #[test]
    fn synthetic_closed_form() {
        let cfg = SyntheticModelConfig {
            female_base: 0.2,
            female_slope_per_index: 0.01,
            neutral_mass: 0.1,
            seed: 7,
            jitter: 0.0,
        };
        let backend = SyntheticBackend::new(BackendDescriptor::synthetic("syn"), cfg).unwrap();
        let q = MaskQuery {
            text: "[MASK] was a kid in 1801.".into(),
            w_index: 0,
        };
        let preds = backend.predict(&q).unwrap();
        let she = preds.iter().find(|p| p.token == "she").unwrap().score;
        let her = preds.iter().find(|p| p.token == "her").unwrap().score;
        assert!((she + her - 0.2 * (1.0 - 0.1)).abs() < 1e-15);
        let total: f64 = preds.iter().map(|p| p.score).sum();
        assert!((total - 1.0).abs() < 1e-12);

        let r = FillMaskResult::new(0, 5, preds).unwrap();
        assert!(r.predictions.len() <= 5);
    }

    #[test]
    fn synthetic_is_deterministic_and_clamped() {
        let cfg = SyntheticModelConfig {
            jitter: 0.05,
            seed: 3,
            ..Default::default()
        };
        let b = SyntheticBackend::new(BackendDescriptor::synthetic("syn"), cfg.clone()).unwrap();
        let q = MaskQuery {
            text: "In 1900, [MASK] is a kid.".into(),
            w_index: 4,
        };
        assert_eq!(b.predict(&q).unwrap(), b.predict(&q).unwrap());
        let other = SyntheticBackend::new(
            BackendDescriptor::synthetic("syn"),
            SyntheticModelConfig { seed: 4, ..cfg },
        )
        .unwrap();
        assert_ne!(b.predict(&q).unwrap(), other.predict(&q).unwrap());

        let steep = SyntheticModelConfig {
            female_slope_per_index: 0.5,
            ..Default::default()
        };
        assert_eq!(steep.female_share(10, "x"), 1.0);
    }

    #[test]
    fn retry_delay_is_capped() {
        let p = RetryPolicy {
            base_delay_ms: 100,
            max_delay_ms: 1000,
            ..Default::default()
        };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(400));
        assert_eq!(p.delay(10), Duration::from_millis(1000));
        assert_eq!(p.delay(80), Duration::from_millis(1000));
    }

    #[tokio::test]
    async fn batch_preserves_order_and_cardinality() {
        let backend = SyntheticBackend::new(BackendDescriptor::synthetic("syn"), Default::default()).unwrap();
        let prompts: Vec<Prompt> = (0..50).map(|i| prompt("«MASK» was here.", i % 7)).collect();
        let out = batch_evaluate(&backend, &prompts, 5, 8, &RetryPolicy::default())
            .await
            .unwrap();
        assert_eq!(out.outcomes.len(), 50);
        for (i, o) in out.outcomes.iter().enumerate() {
            assert_eq!(o.as_ref().unwrap().prompt_id, i);
        }
        assert!(matches!(
            batch_evaluate(&backend, &prompts, 5, 0, &RetryPolicy::default()).await,
            Err(BatchError::Parallelism)
        ));
    }
}
