use axum::body::{Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tint_core::inference::{GanModel, InferenceSession, MakeupModel, ShadeCatalog};
use tint_core::networks::{init_params, ArchSpec};
use tint_core::weakcolor::RegionKind;
use tint_core::{Error, ImageTensor, LabColor, Result};
use tint_service::*;
use tower::ServiceExt;

const CATALOG: &str = "r01\tRuby\t42.0\t60.0\t32.0\np02\tPeony\t62.5\t35.0\t-2.0\nn03\tNude\t68.0\t14.0\t18.0\n";

fn model() -> GanModel {
    let arch = ArchSpec {
        base_width: 4,
        stages: 1,
        res_blocks: 1,
        critic_depth: 2,
        ..ArchSpec::default()
    };
    let mut p = init_params::<f32>(&arch, 3).unwrap();
    p.input_size = Some(32);
    GanModel::new(p).unwrap()
}

fn app_with(limit: usize) -> Router {
    let session = InferenceSession::new().with_model(RegionKind::Lips, Box::new(model())).unwrap();
    router(AppState::new(session, ShadeCatalog::parse(CATALOG).unwrap(), 2, limit))
}

fn app() -> Router {
    app_with(1 << 20)
}

fn png(w: usize, h: usize, seed: u32) -> String {
    let data = (0..w * h * 3)
        .map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed.wrapping_mul(97)) >> 24) as f32 / 255.0)
        .collect();
    encode_image(&ImageTensor::new(w, h, tint_core::ValueRange::Unit, data).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Bytes) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes())
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, b) = call(app, "POST", uri, Some(serde_json::to_vec(&body).unwrap())).await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn has_four_decimals(v: &Value) -> bool {
    let x = v.as_f64().unwrap();
    ((x * 1e4).round() / 1e4 - x).abs() < 1e-12
}

#[tokio::test]
async fn health_reports_version_and_regions() {
    let (s, b) = call(&app(), "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    let h: HealthResponse = serde_json::from_slice(&b).unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.version, env!("CARGO_PKG_VERSION"));
    assert_eq!(h.schema_version, SCHEMA_VERSION);
    assert_eq!(h.regions, vec![Region::Lips]);
}

#[tokio::test]
async fn estimate_schema() {
    let app = app();
    let img = png(32, 32, 1);
    let (s, v) = post(&app, "/estimate", json!({ "image": img })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["region"], "lips");
    let color = v["color"].as_array().unwrap();
    assert_eq!(color.len(), 3);
    assert!(color.iter().all(has_four_decimals));
    assert!(v.get("recommendations").is_none());

    let direct = model()
        .estimate(&ImageTensor::decode(&STANDARD.decode(&img).unwrap()).unwrap())
        .unwrap()
        .rounded(4);
    let got: EstimateResponse = serde_json::from_value(v).unwrap();
    assert_eq!(got.color, direct.to_array());

    let (_, v) = post(&app, "/estimate", json!({ "image": img, "top_k": 2, "schema_version": 1 })).await;
    let recs = v["recommendations"].as_array().unwrap();
    assert_eq!(recs.len(), 2);
    assert!(recs[0]["delta_e"].as_f64().unwrap() <= recs[1]["delta_e"].as_f64().unwrap());
}

#[tokio::test]
async fn synthesize_keeps_dimensions() {
    let app = app();
    for (w, h) in [(32, 32), (48, 40), (20, 64)] {
        let (s, v) = post(&app, "/synthesize", json!({ "image": png(w, h, 2), "target": [45.0, 40.0, 15.0] })).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        let r: ImageResponse = serde_json::from_value(v).unwrap();
        assert_eq!((r.width, r.height), (w, h));
        let out = ImageTensor::decode(&STANDARD.decode(&r.image).unwrap()).unwrap();
        assert_eq!(out.dims(), (w, h));
        assert_eq!(r.estimated, None);
    }
}

#[tokio::test]
async fn transfer_returns_the_reference_estimate() {
    let app = app();
    let (source, reference) = (png(32, 32, 5), png(40, 40, 6));
    let (s, v) = post(&app, "/transfer", json!({ "source": source, "reference": reference })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let t: ImageResponse = serde_json::from_value(v).unwrap();
    let (_, e) = post(&app, "/estimate", json!({ "image": reference })).await;
    let e: EstimateResponse = serde_json::from_value(e).unwrap();
    assert_eq!(t.estimated, Some(e.color));
    assert_eq!((t.width, t.height), (32, 32));
}

#[tokio::test]
async fn repeated_requests_are_byte_identical() {
    let app = app();
    let bodies = [
        ("/estimate", json!({ "image": png(32, 32, 7), "top_k": 3 })),
        ("/synthesize", json!({ "image": png(36, 30, 8), "target": [50.0, 20.0, 5.0] })),
        ("/transfer", json!({ "source": png(32, 32, 9), "reference": png(32, 32, 10) })),
    ];
    for (uri, body) in bodies {
        let bytes = serde_json::to_vec(&body).unwrap();
        let (s1, a) = call(&app, "POST", uri, Some(bytes.clone())).await;
        let (s2, b) = call(&app, "POST", uri, Some(bytes)).await;
        assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
        assert_eq!(a, b, "{uri}");
    }
    let (_, a) = call(&app, "GET", "/shades?l=50&a=30&b=10", None).await;
    let (_, b) = call(&app, "GET", "/shades?l=50&a=30&b=10", None).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn concurrent_requests_agree() {
    let app = app();
    let body = serde_json::to_vec(&json!({ "image": png(32, 32, 11), "target": [60.0, 10.0, 10.0] })).unwrap();
    let tasks: Vec<_> = (0..8)
        .map(|_| {
            let (app, body) = (app.clone(), body.clone());
            tokio::spawn(async move { call(&app, "POST", "/synthesize", Some(body)).await })
        })
        .collect();
    let mut outs = Vec::new();
    for t in tasks {
        let (s, b) = t.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        outs.push(b);
    }
    assert!(outs.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn malformed_requests_are_400() {
    let app = app();
    let img = png(16, 16, 3);
    let cases = [
        json!({ "image": "not base64!!" }),
        json!({ "image": STANDARD.encode(b"plain text") }),
        json!({ "img": img }),
        json!({ "image": img, "region": "cheeks" }),
        json!({ "image": img, "schema_version": 2 }),
        json!({ "image": img, "region": "eyeshadow" }),
    ];
    for body in cases {
        let (s, v) = post(&app, "/estimate", body.clone()).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body} -> {v}");
        assert_eq!(v["error"]["code"], "bad_request");
    }
    let (s, _) = call(&app, "POST", "/estimate", Some(b"{".to_vec())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    for target in [json!([120.0, 0.0, 0.0]), json!([50.0, 0.0]), json!("red")] {
        let (s, _) = post(&app, "/synthesize", json!({ "image": img, "target": target })).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{target}");
    }
    let (s, _) = call(&app, "GET", "/shades?l=50", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "GET", "/shades?l=abc&a=0&b=0", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn oversize_bodies_are_413() {
    let app = app_with(4096);
    let (s, b) = call(&app, "POST", "/synthesize", Some(serde_json::to_vec(&json!({ "image": png(64, 64, 1), "target": [50.0, 0.0, 0.0] })).unwrap())).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["error"]["code"], "payload_too_large");
}

struct Broken;

impl MakeupModel for Broken {
    fn estimate(&self, _: &ImageTensor) -> Result<LabColor> {
        Err(Error::Checkpoint {
            path: "/srv/secret/weights.ckpt".into(),
            reason: "truncated".into(),
        })
    }

    fn synthesize(&self, _: &ImageTensor, _: LabColor) -> Result<ImageTensor> {
        Err(Error::NonFinite("generator output".into()))
    }
}

#[tokio::test]
async fn internal_failures_do_not_leak() {
    let session = InferenceSession::new().with_model(RegionKind::Lips, Box::new(Broken)).unwrap();
    let app = router(AppState::new(session, ShadeCatalog::new(vec![]).unwrap(), 1, 1 << 20));
    let (s, b) = call(&app, "POST", "/estimate", Some(serde_json::to_vec(&json!({ "image": png(8, 8, 0) })).unwrap())).await;
    assert_eq!(s, StatusCode::INTERNAL_SERVER_ERROR);
    let text = String::from_utf8(b.to_vec()).unwrap();
    assert!(!text.contains("secret") && !text.contains("truncated"), "{text}");
    assert_eq!(serde_json::from_str::<Value>(&text).unwrap()["error"]["message"], "internal error");
}

#[tokio::test]
async fn shade_listing_and_ranking() {
    let app = app();
    let (s, b) = call(&app, "GET", "/shades", None).await;
    assert_eq!(s, StatusCode::OK);
    let list: ShadesResponse = serde_json::from_slice(&b).unwrap();
    assert_eq!(list.shades.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["r01", "p02", "n03"]);
    assert!(list.shades.iter().all(|s| s.delta_e.is_none()));

    let (_, b) = call(&app, "GET", "/shades?l=68&a=14&b=18&top_k=2", None).await;
    let ranked: ShadesResponse = serde_json::from_slice(&b).unwrap();
    assert_eq!(ranked.shades.len(), 2);
    assert_eq!(ranked.shades[0].id, "n03");
    assert_eq!(ranked.shades[0].delta_e, Some(0.0));
}
