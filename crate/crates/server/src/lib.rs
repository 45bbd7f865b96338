//! HTTP/JSON API over precomputed level fits.
//!
//! Fits are computed (or loaded) once at startup. `POST /levels/{id}/refit`
//! recomputes one level off the async runtime and swaps it in atomically, so
//! readers see either the old or the new fit.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;

use movefit_core::analytics::{self, ClusterLabel};
use movefit_core::fitting::{initial_guess_search, FitResult, FitterConfig};
use movefit_core::ingestion::EmpiricalLevelData;
use movefit_core::report::{self, AnalyticsReport, FitRecord};
use movefit_core::validation::Correction;
use movefit_core::whatif::{self, WhatIfQuery};
use movefit_core::Error;

/// Moves past the limit covered by `/curve` when `to` is omitted.
pub const DEFAULT_CURVE_EXTENSION: u32 = 10;
const MAX_CURVE_POINTS: u32 = 100_000;

#[derive(Debug)]
pub struct LevelEntry {
    pub level: EmpiricalLevelData,
    pub fit: FitResult,
}

/// Shared service state.
#[derive(Debug)]
pub struct AppState {
    levels: RwLock<BTreeMap<String, Arc<LevelEntry>>>,
    analytics: RwLock<Arc<AnalyticsReport>>,
    config: FitterConfig,
    correction: Option<Correction>,
}

impl AppState {
    /// Pairs each level with its fit. Every level needs exactly one fit.
    pub fn new(
        levels: Vec<EmpiricalLevelData>,
        fits: Vec<FitResult>,
        config: FitterConfig,
        correction: Option<Correction>,
    ) -> Result<Self, Error> {
        let mut by_id: BTreeMap<String, FitResult> = BTreeMap::new();
        for fit in fits {
            if by_id.insert(fit.level_id.clone(), fit).is_some() {
                return Err(Error::InputContract("duplicate fit level_id".into()));
            }
        }
        let mut entries = BTreeMap::new();
        for level in levels {
            let fit = by_id
                .remove(level.level_id())
                .ok_or_else(|| Error::InputContract(format!("no fit for level {}", level.level_id())))?;
            if fit.move_limit != level.move_limit() {
                return Err(Error::InputContract(format!(
                    "level {}: fit move limit {} differs from data move limit {}",
                    level.level_id(),
                    fit.move_limit,
                    level.move_limit()
                )));
            }
            entries.insert(level.level_id().to_string(), Arc::new(LevelEntry { level, fit }));
        }
        if let Some(extra) = by_id.keys().next() {
            return Err(Error::InputContract(format!("fit for unknown level {extra}")));
        }
        let analytics = RwLock::new(Arc::new(compute_analytics(&entries)));
        Ok(Self {
            levels: RwLock::new(entries),
            analytics,
            config,
            correction,
        })
    }

    /// Fits every level with `config`, then builds the state.
    pub fn fit_all(
        levels: Vec<EmpiricalLevelData>,
        config: FitterConfig,
        correction: Option<Correction>,
    ) -> Result<Self, Error> {
        let fits = levels
            .iter()
            .map(|l| initial_guess_search(l, &config))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(levels, fits, config, correction)
    }

    pub fn entry(&self, level_id: &str) -> Option<Arc<LevelEntry>> {
        self.levels.read().expect("level table poisoned").get(level_id).cloned()
    }

    pub fn level_ids(&self) -> Vec<String> {
        self.levels
            .read()
            .expect("level table poisoned")
            .keys()
            .cloned()
            .collect()
    }

    fn snapshot(&self) -> Vec<Arc<LevelEntry>> {
        self.levels
            .read()
            .expect("level table poisoned")
            .values()
            .cloned()
            .collect()
    }

    fn replace(&self, entry: LevelEntry) {
        let id = entry.level.level_id().to_string();
        let mut table = self.levels.write().expect("level table poisoned");
        table.insert(id, Arc::new(entry));
        let report = compute_analytics(&table);
        drop(table);
        *self.analytics.write().expect("analytics poisoned") = Arc::new(report);
    }
}

fn compute_analytics(entries: &BTreeMap<String, Arc<LevelEntry>>) -> AnalyticsReport {
    let levels: Vec<EmpiricalLevelData> = entries.values().map(|e| e.level.clone()).collect();
    let fits: Vec<FitResult> = entries.values().map(|e| e.fit.clone()).collect();
    report::analyze(&levels, &fits)
}

#[derive(Debug)]
enum ApiError {
    UnknownLevel,
    NotConverged,
    BadRequest(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::UnknownLevel => (StatusCode::NOT_FOUND, json!({"error": "unknown_level"})),
            ApiError::NotConverged => (StatusCode::CONFLICT, json!({"error": "fit_not_converged"})),
            ApiError::BadRequest(detail) => (
                StatusCode::BAD_REQUEST,
                json!({"error": "bad_request", "detail": detail}),
            ),
            ApiError::Internal(detail) => (
                StatusCode::INTERNAL_SERVER_ERROR,
                json!({"error": "internal", "detail": detail}),
            ),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn lookup(state: &AppState, id: &str) -> Result<Arc<LevelEntry>, ApiError> {
    state.entry(id).ok_or(ApiError::UnknownLevel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level_id: String,
    pub move_limit: u32,
    pub total_attempts: u64,
    pub observed_completion: f64,
    pub fitted_completion: f64,
    pub n: f64,
    pub p: f64,
    #[serde(rename = "D")]
    pub ks_distance: f64,
    pub converged: bool,
    pub cluster: ClusterLabel,
}

impl From<&LevelEntry> for LevelSummary {
    fn from(e: &LevelEntry) -> Self {
        Self {
            level_id: e.level.level_id().to_string(),
            move_limit: e.level.move_limit(),
            total_attempts: e.level.total_attempts(),
            observed_completion: e.level.completion_rate(),
            fitted_completion: e.fit.fitted_completion,
            n: e.fit.params.n(),
            p: e.fit.params.p(),
            ks_distance: e.fit.ks_distance,
            converged: e.fit.converged,
            cluster: analytics::classify_cluster(&e.fit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBar {
    pub m: u32,
    pub count: u64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDetail {
    pub level_id: String,
    pub move_limit: u32,
    pub total_attempts: u64,
    pub observed_completion: f64,
    pub histogram: Vec<HistogramBar>,
    pub fit: FitRecord,
    pub cluster: ClusterLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub m: u64,
    pub pmf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub level_id: String,
    pub n: f64,
    pub p: f64,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Deserialize)]
struct CurveParams {
    from: Option<u32>,
    to: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WhatIfBody {
    delta: i64,
    #[serde(default)]
    apply_correction: bool,
}

async fn list_levels(State(state): State<Arc<AppState>>) -> Json<Vec<LevelSummary>> {
    Json(
        state
            .snapshot()
            .iter()
            .map(|e| LevelSummary::from(e.as_ref()))
            .collect(),
    )
}

async fn level_detail(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<LevelDetail> {
    let e = lookup(&state, &id)?;
    let histogram = e
        .level
        .histogram()
        .iter()
        .map(|(&m, &count)| HistogramBar {
            m,
            count,
            density: e.level.density(m),
        })
        .collect();
    Ok(Json(LevelDetail {
        level_id: id,
        move_limit: e.level.move_limit(),
        total_attempts: e.level.total_attempts(),
        observed_completion: e.level.completion_rate(),
        histogram,
        fit: FitRecord::from(&e.fit),
        cluster: analytics::classify_cluster(&e.fit),
    }))
}

async fn curve(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(params): Query<CurveParams>,
) -> ApiResult<Curve> {
    let e = lookup(&state, &id)?;
    let from = params.from.unwrap_or(1);
    let to = params.to.unwrap_or(e.level.move_limit() + DEFAULT_CURVE_EXTENSION);
    if from > to {
        return Err(ApiError::BadRequest(format!("from {from} exceeds to {to}")));
    }
    if to - from >= MAX_CURVE_POINTS {
        return Err(ApiError::BadRequest(format!(
            "at most {MAX_CURVE_POINTS} points per request"
        )));
    }
    let points = (u64::from(from)..=u64::from(to))
        .map(|m| CurvePoint {
            m,
            pmf: e.fit.params.pmf(m),
        })
        .collect();
    Ok(Json(Curve {
        level_id: id,
        n: e.fit.params.n(),
        p: e.fit.params.p(),
        points,
    }))
}

async fn whatif_handler(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<whatif::WhatIfResponse> {
    let e = lookup(&state, &id)?;
    let body: WhatIfBody = serde_json::from_slice(&body).map_err(|err| ApiError::BadRequest(err.to_string()))?;
    let query = WhatIfQuery {
        level_id: id,
        delta: body.delta,
        apply_correction: body.apply_correction,
        correction: state.correction,
    };
    whatif::answer(&e.fit, &query).map(Json).map_err(|err| match err {
        Error::UnusableFit(_) => ApiError::NotConverged,
        Error::Domain(msg) => ApiError::BadRequest(msg),
        other => ApiError::Internal(other.to_string()),
    })
}

async fn analytics_handler(State(state): State<Arc<AppState>>) -> Json<AnalyticsReport> {
    let report = state.analytics.read().expect("analytics poisoned").clone();
    Json(report.as_ref().clone())
}

async fn refit(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<FitRecord> {
    let e = lookup(&state, &id)?;
    let config = state.config.clone();
    let level = e.level.clone();
    let fit = tokio::task::spawn_blocking(move || initial_guess_search(&level, &config))
        .await
        .map_err(|err| ApiError::Internal(err.to_string()))?
        .map_err(|err| ApiError::Internal(err.to_string()))?;
    let record = FitRecord::from(&fit);
    state.replace(LevelEntry {
        level: e.level.clone(),
        fit,
    });
    Ok(Json(record))
}

pub fn router(state: Arc<AppState>, permissive_cors: bool) -> Router {
    let router = Router::new()
        .route("/levels", get(list_levels))
        .route("/levels/{id}", get(level_detail))
        .route("/levels/{id}/curve", get(curve))
        .route("/levels/{id}/whatif", post(whatif_handler))
        .route("/levels/{id}/refit", post(refit))
        .route("/analytics", get(analytics_handler))
        .with_state(state);
    if permissive_cors {
        router.layer(CorsLayer::permissive())
    } else {
        router
    }
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr, permissive_cors: bool) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state, permissive_cors)).await
}
