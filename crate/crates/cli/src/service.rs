//! JSON-over-HTTP inference service for a loaded model. Handlers only read
//! the model, so identical requests always produce identical bodies.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ndarray::{Array1, Array2, ArrayView2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use segma::latent::{class_intensity, decode_codes, interpolation_path, resolve_source, transfer_path, LatentCode};
use segma::{Error, ModelState};

use crate::sample_class;

/// Largest `n` accepted by `/sample` and `steps` accepted by path endpoints.
pub const MAX_ITEMS: usize = 4096;

pub struct ServeState {
    pub model: ModelState,
    requests: AtomicU64,
}

impl ServeState {
    pub fn new(model: ModelState) -> Self {
        Self {
            model,
            requests: AtomicU64::new(0),
        }
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }
}

pub fn router(model: ModelState) -> Router {
    let state = Arc::new(ServeState::new(model));
    Router::new()
        .route("/model/info", get(info))
        .route("/encode", post(encode))
        .route("/decode", post(decode))
        .route("/sample", post(sample))
        .route("/interpolate", post(interpolate))
        .route("/transfer", post(transfer))
        .route("/intensity", post(intensity))
        .fallback(not_found)
        .with_state(state)
}

#[derive(Debug)]
pub enum ApiError {
    /// Body is not valid JSON for the endpoint; names the offending field.
    Malformed { field: String, message: String },
    /// Well-formed request the model cannot serve.
    Unprocessable(String),
    NotFound,
    Internal(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::DimensionMismatch { .. }
            | Error::InvalidClass { .. }
            | Error::InvalidArgument(_)
            | Error::NonFinite(_) => ApiError::Unprocessable(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::Malformed { field, message } => (
                StatusCode::BAD_REQUEST,
                json!({ "error": format!("malformed field `{field}`: {message}"), "field": field }),
            ),
            ApiError::Unprocessable(message) => (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": message })),
            ApiError::NotFound => (StatusCode::NOT_FOUND, json!({ "error": "no such route" })),
            ApiError::Internal(message) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": message })),
        };
        (status, Json(body)).into_response()
    }
}

/// Decodes a JSON body, reporting the path of the first bad field.
fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let mut de = serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let path = err.path().to_string();
        let message = err.inner().to_string();
        let field = if path.is_empty() || path == "." {
            missing_field(&message).unwrap_or_else(|| "body".to_string())
        } else {
            path
        };
        ApiError::Malformed { field, message }
    })
}

fn missing_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("missing field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Shared = State<Arc<ServeState>>;

fn count(state: &ServeState) {
    state.requests.fetch_add(1, Ordering::Relaxed);
}

fn rows(m: ArrayView2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn code(model: &ModelState, z: Vec<f64>) -> Result<LatentCode, ApiError> {
    model.check_dims(None, Some(z.len()))?;
    Ok(LatentCode::new(Array1::from(z))?)
}

fn check_count(what: &str, n: usize) -> Result<(), ApiError> {
    if n > MAX_ITEMS {
        return Err(ApiError::Unprocessable(format!("{what} {n} exceeds the limit of {MAX_ITEMS}")));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct InfoResponse {
    pub latent_dim: usize,
    pub classes: usize,
    pub means: Vec<Vec<f64>>,
    pub masses: Vec<f64>,
    pub input_shape: Vec<usize>,
}

async fn info(State(state): Shared) -> Json<InfoResponse> {
    count(&state);
    let m = &state.model;
    Json(InfoResponse {
        latent_dim: m.latent_dim(),
        classes: m.n_classes(),
        means: rows(m.prior.means().view()),
        masses: m.prior.masses().to_vec(),
        input_shape: m.input_shape.clone(),
    })
}

#[derive(Debug, Deserialize)]
struct EncodeRequest {
    x: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct EncodeResponse {
    pub z: Vec<f64>,
    pub posterior: Vec<f64>,
    pub class: usize,
}

async fn encode(State(state): Shared, body: Bytes) -> ApiResult<EncodeResponse> {
    count(&state);
    let req: EncodeRequest = parse_body(&body)?;
    let m = &state.model;
    m.check_dims(Some(req.x.len()), None)?;
    let x = Array2::from_shape_vec((1, req.x.len()), req.x).map_err(|e| ApiError::Internal(e.to_string()))?;
    let z = m.encode(x.view())?.row(0).to_owned();
    if z.iter().any(|v| !v.is_finite()) {
        return Err(ApiError::Unprocessable("input produced a non-finite code".into()));
    }
    Ok(Json(EncodeResponse {
        posterior: m.prior.posterior(z.view())?.to_vec(),
        class: m.prior.classify(z.view())?,
        z: z.to_vec(),
    }))
}

#[derive(Debug, Deserialize)]
struct DecodeRequest {
    z: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DecodeResponse {
    pub x: Vec<f64>,
}

async fn decode(State(state): Shared, body: Bytes) -> ApiResult<DecodeResponse> {
    count(&state);
    let req: DecodeRequest = parse_body(&body)?;
    let z = code(&state.model, req.z)?;
    let x = decode_codes(&state.model, &[z])?;
    Ok(Json(DecodeResponse { x: x.row(0).to_vec() }))
}

#[derive(Debug, Deserialize)]
struct SampleRequest {
    class: usize,
    n: usize,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SampleResponse {
    pub xs: Vec<Vec<f64>>,
}

async fn sample(State(state): Shared, body: Bytes) -> ApiResult<SampleResponse> {
    count(&state);
    let req: SampleRequest = parse_body(&body)?;
    check_count("n", req.n)?;
    let xs = sample_class(&state.model, req.class, req.n, req.seed)?;
    Ok(Json(SampleResponse { xs: rows(xs.view()) }))
}

#[derive(Debug, Deserialize)]
struct InterpolateRequest {
    z1: Vec<f64>,
    z2: Vec<f64>,
    steps: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PathResponse {
    pub path: Vec<Vec<f64>>,
}

async fn interpolate(State(state): Shared, body: Bytes) -> ApiResult<PathResponse> {
    count(&state);
    let req: InterpolateRequest = parse_body(&body)?;
    check_count("steps", req.steps)?;
    let m = &state.model;
    let path = interpolation_path(&code(m, req.z1)?, &code(m, req.z2)?, req.steps)?;
    Ok(Json(PathResponse {
        path: rows(decode_codes(m, &path)?.view()),
    }))
}

#[derive(Debug, Deserialize)]
struct TransferRequest {
    z: Vec<f64>,
    #[serde(default)]
    source: Option<usize>,
    target: usize,
    steps: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TransferResponse {
    pub path: Vec<Vec<f64>>,
    pub posteriors: Vec<Vec<f64>>,
    pub source: usize,
}

async fn transfer(State(state): Shared, body: Bytes) -> ApiResult<TransferResponse> {
    count(&state);
    let req: TransferRequest = parse_body(&body)?;
    check_count("steps", req.steps)?;
    let m = &state.model;
    let z = code(m, req.z)?;
    let source = resolve_source(&z, req.source, &m.prior)?;
    let path = transfer_path(&z, source, req.target, &m.prior, req.steps)?;
    let posteriors = path
        .iter()
        .map(|c| m.prior.posterior(c.z.view()).map(|p| p.to_vec()))
        .collect::<Result<_, _>>()?;
    Ok(Json(TransferResponse {
        path: rows(decode_codes(m, &path)?.view()),
        posteriors,
        source,
    }))
}

#[derive(Debug, Deserialize)]
struct IntensityRequest {
    z: Vec<f64>,
    #[serde(default)]
    source: Option<usize>,
    anti_target: usize,
    alpha: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct IntensityResponse {
    pub x: Vec<f64>,
    pub posterior: Vec<f64>,
}

async fn intensity(State(state): Shared, body: Bytes) -> ApiResult<IntensityResponse> {
    count(&state);
    let req: IntensityRequest = parse_body(&body)?;
    let m = &state.model;
    let z = code(m, req.z)?;
    let source = resolve_source(&z, req.source, &m.prior)?;
    let shifted = class_intensity(&z, source, req.anti_target, req.alpha, &m.prior)?;
    let x = decode_codes(m, std::slice::from_ref(&shifted))?;
    Ok(Json(IntensityResponse {
        x: x.row(0).to_vec(),
        posterior: m.prior.posterior(shifted.z.view())?.to_vec(),
    }))
}

async fn not_found() -> ApiError {
    ApiError::NotFound
}
