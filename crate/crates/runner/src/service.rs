//! Stateless JSON API over the evaluation pipeline.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mgt_core::backend::{Backend, BackendDescriptor, RetryPolicy, SyntheticModelConfig, DEFAULT_TOP_K};
use mgt_core::schema::{
    builtin_winogender_schema, default_date_axis, default_place_axis, default_winogender_axis, expand_custom_prompts,
    expand_winogender_prompts, GenderLexicon, OccupationStats, Participant, WAxis, WinogenderRecord,
};
use mgt_core::stats::{aggregate_gender_mass, FitDiff, FitSummary, DEFAULT_N_EDGE};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cache::CachedBackend;
use crate::experiment::{evaluate, summarize, winogender_scores, Basis, DateRange, WinogenderScore, TOOL_VERSION};

/// Shared read-only service configuration.
#[derive(Debug, Clone)]
pub struct ServiceState {
    pub lexicon: GenderLexicon,
    pub records: Vec<WinogenderRecord>,
    pub stats: Vec<OccupationStats>,
    pub parallelism: usize,
    pub retry: RetryPolicy,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ServiceState {
    fn default() -> Self {
        let (records, stats) = builtin_winogender_schema();
        Self {
            lexicon: GenderLexicon::default(),
            records,
            stats,
            parallelism: 8,
            retry: RetryPolicy::default(),
            cache_dir: None,
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "invalid_request",
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            kind: "not_found",
            message: message.into(),
        }
    }

    fn bad_gateway(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_GATEWAY,
            kind: "backend_failure",
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.kind, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid payload: {e}")))
}

fn default_model() -> String {
    "synthetic".into()
}

fn default_mask_token() -> String {
    "[MASK]".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendRequest {
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_mask_token")]
    pub mask_token: String,
    /// Synthetic model parameters when no endpoint is given.
    #[serde(default)]
    pub synthetic: Option<SyntheticModelConfig>,
}

impl Default for BackendRequest {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: default_model(),
            mask_token: default_mask_token(),
            synthetic: None,
        }
    }
}

impl BackendRequest {
    fn build(&self, state: &ServiceState) -> Result<CachedBackend, ApiError> {
        let descriptor = BackendDescriptor {
            name: self.model.clone(),
            mask_token: self.mask_token.clone(),
            endpoint: self.endpoint.clone(),
            auth_token_env: None,
        };
        let backend = Backend::from_descriptor(descriptor, self.synthetic.clone())
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        Ok(CachedBackend::new(backend, state.cache_dir.clone()))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AxisRequest {
    Date {
        #[serde(default)]
        start: Option<i64>,
        #[serde(default)]
        end: Option<i64>,
        #[serde(default)]
        count: Option<usize>,
    },
    Place,
}

impl Default for AxisRequest {
    fn default() -> Self {
        AxisRequest::Date {
            start: None,
            end: None,
            count: None,
        }
    }
}

impl AxisRequest {
    fn axis(&self) -> Result<WAxis, ApiError> {
        match self {
            AxisRequest::Date { start, end, count } => {
                let d = DateRange::MGT;
                default_date_axis(start.unwrap_or(d.start), end.unwrap_or(d.end), count.unwrap_or(d.count))
                    .map_err(|e| ApiError::bad_request(e.to_string()))
            }
            AxisRequest::Place => Ok(default_place_axis()),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRequest {
    pub template: String,
    #[serde(default)]
    pub axis: AxisRequest,
    #[serde(default)]
    pub backend: BackendRequest,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub n_edge: Option<usize>,
    #[serde(default)]
    pub basis: Option<Basis>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SeriesPoint {
    pub w_index: usize,
    pub w_value: String,
    pub female_mass: f64,
    pub male_mass: f64,
    pub female_share: Option<f64>,
    pub fit_lower: f64,
    pub fit_fitted: f64,
    pub fit_upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitPair {
    pub female: FitSummary,
    pub male: FitSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvaluateResponse {
    pub axis_kind: String,
    pub basis: Basis,
    /// Points with the female fit's band.
    pub series: Vec<SeriesPoint>,
    pub fits: FitPair,
    pub fit_diff: FitDiff,
    /// Percentage points.
    pub uncertainty: f64,
    pub n_edge: usize,
    pub n_prompts: usize,
    pub n_failed: usize,
}

fn check_knobs(top_k: usize, n_edge: usize, points: usize) -> Result<(), ApiError> {
    if top_k == 0 {
        return Err(ApiError::bad_request("top_k must be at least 1"));
    }
    if n_edge == 0 || 2 * n_edge > points {
        return Err(ApiError::bad_request(format!(
            "n_edge {n_edge} needs an axis of at least {} values, have {points}",
            2 * n_edge.max(1)
        )));
    }
    Ok(())
}

async fn evaluate_handler(State(state): State<Arc<ServiceState>>, body: Bytes) -> ApiResult<EvaluateResponse> {
    let req: EvaluateRequest = parse_body(&body)?;
    let axis = req.axis.axis()?;
    let prompts = expand_custom_prompts(&req.template, &axis).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let top_k = req.top_k.unwrap_or(DEFAULT_TOP_K);
    let n_edge = req.n_edge.unwrap_or(DEFAULT_N_EDGE);
    let basis = req.basis.unwrap_or_default();
    check_knobs(top_k, n_edge, axis.len())?;
    let backend = req.backend.build(&state)?;

    let (results, failures) = evaluate(&backend, &prompts, top_k, state.parallelism, &state.retry)
        .await
        .map_err(|e| ApiError::bad_gateway(e.to_string()))?;
    let series = aggregate_gender_mass(&results, &prompts, &axis, &state.lexicon)
        .map_err(|e| ApiError::bad_gateway(e.to_string()))?;
    let summary = summarize(&series, basis, n_edge).map_err(|e| ApiError::bad_gateway(e.to_string()))?;
    let points = summary
        .points
        .iter()
        .zip(&summary.fits.female.ci95_band)
        .map(|(p, b)| SeriesPoint {
            w_index: p.w_index,
            w_value: p.w_value.clone(),
            female_mass: p.female_mass,
            male_mass: p.male_mass,
            female_share: p.female_share(),
            fit_lower: b.lower,
            fit_fitted: b.fitted,
            fit_upper: b.upper,
        })
        .collect();
    Ok(Json(EvaluateResponse {
        axis_kind: axis.kind().to_string(),
        basis,
        series: points,
        fits: FitPair {
            female: summary.fits.female,
            male: summary.fits.male,
        },
        fit_diff: summary.fit_diff,
        uncertainty: summary.uncertainty.value,
        n_edge,
        n_prompts: prompts.len(),
        n_failed: failures.len(),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OccupationEntry {
    pub occupation: String,
    pub pct_female: f64,
    pub other_participant: String,
}

/// Occupations ordered by female share, ascending.
async fn occupations_handler(State(state): State<Arc<ServiceState>>) -> Json<Vec<OccupationEntry>> {
    let mut out: Vec<OccupationEntry> = state
        .stats
        .iter()
        .map(|s| OccupationEntry {
            occupation: s.occupation.clone(),
            pct_female: s.pct_female,
            other_participant: state
                .records
                .iter()
                .find(|r| r.occupation == s.occupation)
                .map(|r| r.other_participant.clone())
                .unwrap_or_default(),
        })
        .filter(|e| !e.other_participant.is_empty())
        .collect();
    out.sort_by(|a, b| {
        a.pct_female
            .total_cmp(&b.pct_female)
            .then_with(|| a.occupation.cmp(&b.occupation))
    });
    Json(out)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WinogenderRequest {
    pub occupation: String,
    #[serde(default)]
    pub backend: BackendRequest,
    #[serde(default)]
    pub dates: Option<DateRange>,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub n_edge: Option<usize>,
    #[serde(default)]
    pub basis: Option<Basis>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WinogenderResponse {
    pub occupation: String,
    pub pct_female: f64,
    /// One row per sentence variant, by sentence id.
    pub rows: Vec<WinogenderScore>,
    pub n_prompts: usize,
    pub n_failed: usize,
}

async fn winogender_handler(State(state): State<Arc<ServiceState>>, body: Bytes) -> ApiResult<WinogenderResponse> {
    let req: WinogenderRequest = parse_body(&body)?;
    let records: Vec<WinogenderRecord> = state
        .records
        .iter()
        .filter(|r| r.occupation == req.occupation)
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(ApiError::not_found(format!("unknown occupation `{}`", req.occupation)));
    }
    let axis = match req.dates {
        Some(d) => d.axis().map_err(|e| ApiError::bad_request(e.to_string()))?,
        None => default_winogender_axis(),
    };
    let top_k = req.top_k.unwrap_or(DEFAULT_TOP_K);
    let n_edge = req.n_edge.unwrap_or(DEFAULT_N_EDGE);
    check_knobs(top_k, n_edge, axis.len())?;
    let basis = req.basis.unwrap_or_default();
    let backend = req.backend.build(&state)?;
    let prompts = expand_winogender_prompts(&records, &Participant::ALL, &axis)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let (results, failures) = evaluate(&backend, &prompts, top_k, state.parallelism, &state.retry)
        .await
        .map_err(|e| ApiError::bad_gateway(e.to_string()))?;
    let mut rows = winogender_scores(&records, &state.stats, &axis, &results, &state.lexicon, basis, n_edge)
        .map_err(|e| ApiError::bad_gateway(e.to_string()))?;
    rows.sort_by_key(|r| r.sentence_id);
    Ok(Json(WinogenderResponse {
        occupation: req.occupation,
        pct_female: rows.first().map(|r| r.pct_female).unwrap_or(f64::NAN),
        rows,
        n_prompts: prompts.len(),
        n_failed: failures.len(),
    }))
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "version": TOOL_VERSION}))
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/evaluate", post(evaluate_handler))
        .route("/winogender/occupations", get(occupations_handler))
        .route("/winogender/evaluate", post(winogender_handler))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: ServiceState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
