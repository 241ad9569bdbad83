use std::sync::atomic::Ordering;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::Json;
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tint_core::inference::{recommend_shade, Recommendation, Shade};
use tint_core::weakcolor::RegionKind;
use tint_core::{ImageTensor, LabColor};

use crate::error::ApiError;
use crate::{AppState, SCHEMA_VERSION};

/// Wire color: `[L, a, b]`.
pub type WireLab = [f64; 3];

fn to_wire(c: LabColor) -> WireLab {
    c.rounded(4).to_array()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    #[default]
    Lips,
    #[serde(alias = "eyes")]
    Eyeshadow,
}

impl From<Region> for RegionKind {
    fn from(r: Region) -> Self {
        match r {
            Region::Lips => RegionKind::Lips,
            Region::Eyeshadow => RegionKind::Eyeshadow,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    #[serde(default)]
    pub region: Region,
    pub image: String,
    /// Nearest catalog shades to include; none when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    #[serde(default)]
    pub region: Region,
    pub image: String,
    pub target: WireLab,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    #[serde(default)]
    pub region: Region,
    pub source: String,
    pub reference: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireShade {
    pub id: String,
    pub name: String,
    pub color: WireLab,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_e: Option<f64>,
}

impl WireShade {
    fn plain(s: &Shade) -> Self {
        Self {
            id: s.id.clone(),
            name: s.name.clone(),
            color: to_wire(s.color),
            delta_e: None,
        }
    }

    fn ranked(r: Recommendation) -> Self {
        Self {
            delta_e: Some((r.delta_e * 1e4).round() / 1e4),
            ..Self::plain(&r.shade)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResponse {
    pub schema_version: u32,
    pub region: Region,
    pub color: WireLab,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub recommendations: Vec<WireShade>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResponse {
    pub schema_version: u32,
    pub region: Region,
    pub width: usize,
    pub height: usize,
    pub image: String,
    /// Color estimated from the reference, for transfers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimated: Option<WireLab>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadesResponse {
    pub schema_version: u32,
    pub shades: Vec<WireShade>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
    pub schema_version: u32,
    pub regions: Vec<Region>,
    pub requests: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadeQuery {
    pub l: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub top_k: Option<usize>,
}

pub fn encode_image(img: &ImageTensor) -> String {
    STANDARD.encode(img.encode_png())
}

pub fn decode_image(field: &str, b64: &str) -> Result<ImageTensor, ApiError> {
    let bytes = STANDARD
        .decode(b64.trim())
        .map_err(|e| ApiError::bad_request(format!("{field}: invalid base64: {e}")))?;
    ImageTensor::decode(&bytes).map_err(|e| ApiError::bad_request(format!("{field}: {e}")))
}

fn parse<T: DeserializeOwned>(body: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    let bytes = body.map_err(|r| {
        if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::too_large("request body exceeds the configured limit")
        } else {
            ApiError::bad_request(r.body_text())
        }
    })?;
    serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))
}

fn check_version(v: Option<u32>) -> Result<(), ApiError> {
    match v {
        None | Some(SCHEMA_VERSION) => Ok(()),
        Some(other) => Err(ApiError::bad_request(format!(
            "unsupported schema_version {other}, expected {SCHEMA_VERSION}"
        ))),
    }
}

fn lab(v: WireLab) -> Result<LabColor, ApiError> {
    let c = LabColor::from_array(v);
    if !c.is_finite() {
        return Err(ApiError::bad_request("target must be finite"));
    }
    Ok(c)
}

/// Runs model work on the blocking pool once a worker slot is free.
async fn run<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> Result<T, ApiError> + Send + 'static,
{
    state.shared.requests.fetch_add(1, Ordering::Relaxed);
    let _permit = state.shared.workers.acquire().await.map_err(|_| ApiError::internal())?;
    let st = state.clone();
    tokio::task::spawn_blocking(move || f(&st)).await.map_err(|e| {
        log::error!("worker failed: {e}");
        ApiError::internal()
    })?
}

pub async fn estimate(
    State(state): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<EstimateResponse>, ApiError> {
    let req: EstimateRequest = parse(body)?;
    check_version(req.schema_version)?;
    let res = run(&state, move |st| {
        let image = decode_image("image", &req.image)?;
        let color = st.shared.session.estimate(req.region.into(), &image)?;
        let recommendations = match req.top_k {
            Some(k) if k > 0 => {
                if st.shared.catalog.entries.is_empty() {
                    return Err(ApiError::not_found("no shade catalog loaded"));
                }
                recommend_shade(color, &st.shared.catalog, k)?
                    .into_iter()
                    .map(WireShade::ranked)
                    .collect()
            }
            _ => Vec::new(),
        };
        Ok(EstimateResponse {
            schema_version: SCHEMA_VERSION,
            region: req.region,
            color: to_wire(color),
            recommendations,
        })
    })
    .await?;
    Ok(Json(res))
}

pub async fn synthesize(
    State(state): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<ImageResponse>, ApiError> {
    let req: SynthesizeRequest = parse(body)?;
    check_version(req.schema_version)?;
    let target = lab(req.target)?;
    let res = run(&state, move |st| {
        let image = decode_image("image", &req.image)?;
        let out = st.shared.session.synthesize(req.region.into(), &image, target)?;
        Ok(ImageResponse {
            schema_version: SCHEMA_VERSION,
            region: req.region,
            width: out.width(),
            height: out.height(),
            image: encode_image(&out),
            estimated: None,
        })
    })
    .await?;
    Ok(Json(res))
}

pub async fn transfer(
    State(state): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<ImageResponse>, ApiError> {
    let req: TransferRequest = parse(body)?;
    check_version(req.schema_version)?;
    let res = run(&state, move |st| {
        let source = decode_image("source", &req.source)?;
        let reference = decode_image("reference", &req.reference)?;
        let (out, estimated) = st.shared.session.transfer(req.region.into(), &source, &reference)?;
        Ok(ImageResponse {
            schema_version: SCHEMA_VERSION,
            region: req.region,
            width: out.width(),
            height: out.height(),
            image: encode_image(&out),
            estimated: Some(to_wire(estimated)),
        })
    })
    .await?;
    Ok(Json(res))
}

pub async fn shades(
    State(state): State<AppState>,
    query: Result<Query<ShadeQuery>, QueryRejection>,
) -> Result<Json<ShadesResponse>, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    state.shared.requests.fetch_add(1, Ordering::Relaxed);
    let catalog = &state.shared.catalog;
    let shades = match (q.l, q.a, q.b) {
        (None, None, None) => {
            let mut v: Vec<WireShade> = catalog.entries.iter().map(WireShade::plain).collect();
            if let Some(k) = q.top_k {
                v.truncate(k);
            }
            v
        }
        (Some(l), Some(a), Some(b)) => {
            if catalog.entries.is_empty() {
                return Err(ApiError::not_found("no shade catalog loaded"));
            }
            let c = lab([l, a, b])?;
            let k = q.top_k.unwrap_or(catalog.entries.len());
            recommend_shade(c, catalog, k)?.into_iter().map(WireShade::ranked).collect()
        }
        _ => return Err(ApiError::bad_request("a ranked query needs all of l, a and b")),
    };
    Ok(Json(ShadesResponse {
        schema_version: SCHEMA_VERSION,
        shades,
    }))
}

pub async fn health(State(state): State<AppState>) -> Json<HealthResponse> {
    let regions = state
        .shared
        .session
        .regions()
        .into_iter()
        .filter_map(|r| match r {
            RegionKind::Lips => Some(Region::Lips),
            RegionKind::Eyeshadow => Some(Region::Eyeshadow),
            RegionKind::Background => None,
        })
        .collect();
    Json(HealthResponse {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        schema_version: SCHEMA_VERSION,
        regions,
        requests: state.requests_served(),
    })
}
