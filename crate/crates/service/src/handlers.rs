use std::collections::BTreeMap;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::Json;
use disentangle_core::latent_ops::{alphas, interpolate as interpolate_codes, mix as mix_codes, swap, MixMode};
use disentangle_tensor::{no_grad, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::state::{png_base64, ServiceState};
use crate::Shared;

type ApiResult<T> = Result<Json<T>, ApiError>;

pub const MIN_STEPS: usize = 2;
pub const MAX_STEPS: usize = 32;
pub const DEFAULT_STEPS: usize = 8;
const DEFAULT_PAGE: usize = 50;

fn rejected(e: JsonRejection) -> ApiError {
    ApiError::new(e.status(), e.body_text())
}

fn loaded(shared: &Shared) -> Result<&ServiceState, ApiError> {
    shared.get().ok_or_else(ApiError::unavailable)
}

/// Runs model work off the async executor.
async fn blocking<T: Send + 'static>(
    shared: Shared,
    endpoint: &'static str,
    f: impl FnOnce(&ServiceState) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    let state = loaded(&shared)?;
    state.count(endpoint);
    tokio::task::spawn_blocking(move || f(shared.get().expect("checked above")))
        .await
        .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaAttribute {
    pub name: String,
    pub class_count: usize,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaResponse {
    pub attributes: Vec<SchemaAttribute>,
    pub image_size: usize,
    pub code_shape: [usize; 3],
    pub checkpoint_sha256: String,
}

pub async fn schema(State(shared): State<Shared>) -> ApiResult<SchemaResponse> {
    let s = loaded(&shared)?;
    s.count("schema");
    let attributes = s
        .nets
        .schema
        .attributes()
        .iter()
        .enumerate()
        .map(|(i, a)| SchemaAttribute {
            name: a.name.clone(),
            class_count: a.class_count,
            classes: (0..a.class_count).map(|c| s.class_name(i + 1, c)).collect(),
        })
        .collect();
    Ok(Json(SchemaResponse {
        attributes,
        image_size: s.nets.config.image_size,
        code_shape: s.nets.config.code_shape(),
        checkpoint_sha256: s.checkpoint_sha256.clone(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageQuery {
    limit: Option<usize>,
    offset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub labels: BTreeMap<String, String>,
    pub thumbnail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesPage {
    pub total: usize,
    pub offset: usize,
    pub samples: Vec<Sample>,
}

pub async fn samples(
    State(shared): State<Shared>,
    query: Result<Query<PageQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<SamplesPage> {
    let s = loaded(&shared)?;
    s.count("samples");
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let total = s.catalog.len();
    let offset = q.offset.unwrap_or(0);
    if offset > total {
        return Err(ApiError::bad_request(format!("offset {offset} beyond catalog of {total}")));
    }
    let limit = q.limit.unwrap_or(DEFAULT_PAGE);
    let samples = s.catalog[offset..]
        .iter()
        .take(limit)
        .map(|e| Sample {
            id: e.id,
            labels: s.named_labels(&e.labels),
            thumbnail: e.thumbnail.clone(),
        })
        .collect();
    Ok(Json(SamplesPage { total, offset, samples }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferRequest {
    pub source_id: usize,
    pub donors: BTreeMap<String, usize>,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResponse {
    pub image: String,
    /// Classifier PMF per attribute on the synthesized image.
    pub predicted: BTreeMap<String, Vec<f64>>,
    /// Source labels with each swapped attribute replaced by its donor's.
    pub expected_labels: BTreeMap<String, String>,
}

fn predictions(s: &ServiceState, image: &Tensor<f32>) -> Result<BTreeMap<String, Vec<f64>>, ApiError> {
    s.nets
        .schema
        .attributes()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let p = no_grad(|| s.nets.classify_image(image, i + 1))?;
            Ok((a.name.clone(), p.data().iter().map(|&v| v as f64).collect()))
        })
        .collect()
}

pub async fn transfer(State(shared): State<Shared>, body: Result<Json<TransferRequest>, JsonRejection>) -> ApiResult<TransferResponse> {
    let Json(req) = body.map_err(rejected)?;
    blocking(shared, "transfer", move |s| {
        if req.attributes.is_empty() {
            return Err(ApiError::unprocessable("attributes must name at least one attribute"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &req.attributes {
            if !seen.insert(name) {
                return Err(ApiError::unprocessable(format!("attribute '{name}' listed twice")));
            }
        }
        if let Some(extra) = req.donors.keys().find(|k| !req.attributes.contains(k)) {
            return Err(ApiError::unprocessable(format!("donor given for '{extra}', which is not being swapped")));
        }
        let source = s.entry(req.source_id)?;
        let mut labels = source.labels.clone();
        let mut donors = BTreeMap::new();
        for name in &req.attributes {
            let m = s.attribute(name)?;
            let id = *req
                .donors
                .get(name)
                .ok_or_else(|| ApiError::unprocessable(format!("no donor for attribute '{name}'")))?;
            let donor = s.entry(id)?;
            labels[m - 1] = donor.labels[m - 1];
            donors.insert(m, donor.image.clone());
        }
        let image = swap(&s.nets, &source.image, &donors)?;
        Ok(Json(TransferResponse {
            image: png_base64(&image, 0)?,
            predicted: predictions(s, &image)?,
            expected_labels: s.named_labels(&labels),
        }))
    })
    .await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixComponent {
    pub id: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixRequest {
    pub attribute: String,
    pub components: Vec<MixComponent>,
    /// Supplies every code except the mixed one; defaults to the first component.
    #[serde(default)]
    pub base_id: Option<usize>,
    #[serde(default)]
    pub mode: MixMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixResponse {
    pub image: String,
    pub mode: MixMode,
    /// True for signed (extrapolating) weights.
    pub exploratory: bool,
    pub base_id: usize,
}

pub async fn mix(State(shared): State<Shared>, body: Result<Json<MixRequest>, JsonRejection>) -> ApiResult<MixResponse> {
    let Json(req) = body.map_err(rejected)?;
    blocking(shared, "mix", move |s| {
        let m = s.attribute(&req.attribute)?;
        let first = req
            .components
            .first()
            .ok_or_else(|| ApiError::unprocessable("mix needs at least one component"))?;
        let base_id = req.base_id.unwrap_or(first.id);
        let components = req
            .components
            .iter()
            .map(|c| Ok((s.entry(c.id)?.image.clone(), c.weight)))
            .collect::<Result<Vec<_>, ApiError>>()?;
        let image = mix_codes(&s.nets, m, &components, &s.entry(base_id)?.image, req.mode)?;
        Ok(Json(MixResponse {
            image: png_base64(&image, 0)?,
            mode: req.mode,
            exploratory: req.mode == MixMode::Signed,
            base_id,
        }))
    })
    .await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateRequest {
    pub attribute: String,
    pub id_i: usize,
    pub id_j: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Supplies every code except the interpolated one; defaults to `id_j`.
    #[serde(default)]
    pub base_id: Option<usize>,
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolateResponse {
    /// Frame k decodes `alpha_k z(i) + (1 - alpha_k) z(j)`.
    pub images: Vec<String>,
    pub alphas: Vec<f64>,
    pub base_id: usize,
}

pub async fn interpolate(State(shared): State<Shared>, body: Result<Json<InterpolateRequest>, JsonRejection>) -> ApiResult<InterpolateResponse> {
    let Json(req) = body.map_err(rejected)?;
    blocking(shared, "interpolate", move |s| {
        if !(MIN_STEPS..=MAX_STEPS).contains(&req.steps) {
            return Err(ApiError::unprocessable(format!(
                "steps must be in [{MIN_STEPS}, {MAX_STEPS}] (got {})",
                req.steps
            )));
        }
        let m = s.attribute(&req.attribute)?;
        let base_id = req.base_id.unwrap_or(req.id_j);
        let (xi, xj) = (&s.entry(req.id_i)?.image, &s.entry(req.id_j)?.image);
        let base = &s.entry(base_id)?.image;
        let frames = interpolate_codes(&s.nets, m, xi, xj, req.steps, Some(base))?;
        let images = (0..req.steps)
            .map(|k| png_base64(&frames, k))
            .collect::<Result<_, _>>()?;
        Ok(Json(InterpolateResponse {
            images,
            alphas: alphas(req.steps),
            base_id,
        }))
    })
    .await
}

pub async fn spec_index(State(shared): State<Shared>) -> Json<BTreeMap<&'static str, serde_json::Value>> {
    if let Some(s) = shared.get() {
        s.count("spec");
    }
    Json(crate::schemas())
}

pub async fn spec_one(Path(name): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    crate::schemas()
        .remove(name.trim_end_matches(".json"))
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no schema named '{name}'")))
}

pub async fn stats(State(shared): State<Shared>) -> ApiResult<BTreeMap<String, u64>> {
    Ok(Json(loaded(&shared)?.request_counts()))
}
