use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine as _;
use flic_core::bitstream::extract_roi;
use flic_core::codec::{decode_image, encode_image, DecodeMode, RgbImage};
use flic_core::roi::{ImageRect, RoiSet};
use flic_core::model::{FlicConfig, FlicModel};
use flic_service::{router, AppState, EnhanceResponse, SessionResponse, Stats};
use http_body_util::BodyExt;
use serde_json::json;
use tower::ServiceExt;

fn model() -> &'static FlicModel<f32> {
    static MODEL: OnceLock<FlicModel<f32>> = OnceLock::new();
    MODEL.get_or_init(|| FlicModel::new(FlicConfig::tiny(), 7).unwrap())
}

fn app(capacity: usize) -> Router {
    router(AppState::new(model().clone(), capacity))
}

fn picture(w: usize, h: usize) -> RgbImage {
    let mut data = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        for x in 0..w {
            data.extend_from_slice(&[(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x ^ y) * 3 % 256) as u8]);
        }
    }
    RgbImage::new(w, h, data).unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>, Option<String>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let ctype = res.headers().get("content-type").map(|v| v.to_str().unwrap().to_string());
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body, ctype)
}

async fn upload(app: &Router, bytes: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::post("/sessions").body(Body::from(bytes)).unwrap();
    let (s, b, _) = send(app, req).await;
    (s, b)
}

async fn enhance(app: &Router, id: &str, rois: serde_json::Value) -> (StatusCode, Vec<u8>) {
    let req = Request::post(format!("/sessions/{id}/enhance"))
        .header("content-type", "application/json")
        .body(Body::from(json!({ "rois": rois }).to_string()))
        .unwrap();
    let (s, b, _) = send(app, req).await;
    (s, b)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>, Option<String>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

fn png(b64: &str) -> RgbImage {
    RgbImage::decode(&base64::engine::general_purpose::STANDARD.decode(b64).unwrap()).unwrap()
}

#[tokio::test]
async fn upload_returns_the_base_reconstruction() {
    let app = app(4);
    let img = picture(30, 22);
    let (status, body) = upload(&app, img.to_ppm()).await;
    assert_eq!(status, StatusCode::OK);
    let s: SessionResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!((s.width, s.height), (30, 22));
    let (c, report) = encode_image(&img, model()).unwrap();
    assert_eq!(png(&s.image), decode_image(&c, &DecodeMode::Base, model()).unwrap());
    assert_eq!(s.bpp_base, report.bpp_base);
    assert_eq!(s.bpp_enh_total, report.bpp_enh);
    assert_eq!(s.bpp_enh_sent, 0.0);
    assert!(s.rois.is_empty());

    let (status, body) = upload(&app, img.to_png().unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let t: SessionResponse = serde_json::from_slice(&body).unwrap();
    assert_ne!(s.id, t.id);
}

#[tokio::test]
async fn malformed_upload_is_rejected() {
    let app = app(4);
    let (status, body) = upload(&app, b"P6\n4 4\n255\nshort".to_vec()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let err: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert!(err["error"].as_str().unwrap().len() > 3);
    let (status, _) = upload(&app, Vec::new()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_sessions_are_404() {
    let app = app(4);
    assert_eq!(get(&app, "/sessions/nope").await.0, StatusCode::NOT_FOUND);
    assert_eq!(enhance(&app, "nope", json!([[0, 0, 4, 4]])).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/sessions/nope/spectrum?mode=base").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn enhancement_contract() {
    let app = app(4);
    let img = picture(32, 24);
    let (_, body) = upload(&app, img.to_ppm()).await;
    let s: SessionResponse = serde_json::from_slice(&body).unwrap();

    let (status, body) = enhance(&app, &s.id, json!([[0, 0, 8, 8]])).await;
    assert_eq!(status, StatusCode::OK);
    let first: EnhanceResponse = serde_json::from_slice(&body).unwrap();
    assert!(first.bpp_enh_sent_delta > 0.0);
    assert_eq!(first.bpp_enh_sent, first.bpp_enh_sent_delta);
    assert_eq!(first.rois, vec![[0, 0, 8, 8]]);
    let after_first = png(&first.image);
    let (c, _) = encode_image(&img, model()).unwrap();
    let rois = RoiSet::new(vec![ImageRect::new(0, 0, 8, 8)]).unwrap();
    let tiled = extract_roi(&c, &rois, model()).unwrap();
    assert_eq!(after_first, decode_image(&tiled, &DecodeMode::Roi(rois), model()).unwrap());

    // Same region again: nothing new is sent and nothing changes.
    let (_, body) = enhance(&app, &s.id, json!([[0, 0, 8, 8], [2, 2, 3, 3]])).await;
    let again: EnhanceResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(again.bpp_enh_sent_delta, 0.0);
    assert_eq!(again.new_tiles, 0);
    assert_eq!(again.bpp_enh_sent, first.bpp_enh_sent);
    assert_eq!(png(&again.image), after_first);

    // A disjoint region far away leaves the first region's pixels alone.
    let (_, body) = enhance(&app, &s.id, json!([[24, 16, 8, 8]])).await;
    let second: EnhanceResponse = serde_json::from_slice(&body).unwrap();
    assert!(second.bpp_enh_sent_delta > 0.0);
    assert!(second.bpp_enh_sent > first.bpp_enh_sent);
    let after_second = png(&second.image);
    for y in 0..8 {
        for x in 0..8 {
            assert_eq!(after_second.pixel(x, y), after_first.pixel(x, y));
        }
    }

    let (status, body, _) = get(&app, &format!("/sessions/{}", s.id)).await;
    assert_eq!(status, StatusCode::OK);
    let stats: Stats = serde_json::from_slice(&body).unwrap();
    assert_eq!(stats.bpp_enh_sent, second.bpp_enh_sent);
    assert_eq!(stats.rois.len(), 3);
    assert!(stats.psnr_base > 0.0 && stats.psnr_current > 0.0 && stats.psnr_full > 0.0);
}

#[tokio::test]
async fn full_cover_matches_full_decode() {
    let app = app(4);
    let img = picture(27, 19);
    let (_, body) = upload(&app, img.to_ppm()).await;
    let s: SessionResponse = serde_json::from_slice(&body).unwrap();
    let (_, body) = enhance(&app, &s.id, json!([[0, 0, 27, 19]])).await;
    let e: EnhanceResponse = serde_json::from_slice(&body).unwrap();
    let (c, report) = encode_image(&img, model()).unwrap();
    assert_eq!(png(&e.image), decode_image(&c, &DecodeMode::Full, model()).unwrap());
    // Tiles are coded separately, so they may cost a little more than one chunk.
    assert!(e.bpp_enh_sent >= report.bpp_enh * 0.9);
    let (_, png_full, ctype) = get(&app, &format!("/sessions/{}/image?mode=full", s.id)).await;
    assert_eq!(ctype.as_deref(), Some("image/png"));
    let (_, png_current, _) = get(&app, &format!("/sessions/{}/image?mode=current", s.id)).await;
    assert_eq!(RgbImage::decode(&png_full).unwrap(), RgbImage::decode(&png_current).unwrap());
}

#[tokio::test]
async fn bad_enhance_requests_are_400() {
    let app = app(4);
    let (_, body) = upload(&app, picture(16, 16).to_ppm()).await;
    let s: SessionResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(enhance(&app, &s.id, json!([[10, 10, 8, 8]])).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(enhance(&app, &s.id, json!([[0, 0, 0, 4]])).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(enhance(&app, &s.id, json!([])).await.0, StatusCode::BAD_REQUEST);
    let req = Request::post(format!("/sessions/{}/enhance", s.id))
        .header("content-type", "application/json")
        .body(Body::from("{\"rois\": 3}"))
        .unwrap();
    assert!(send(&app, req).await.0.is_client_error());
    let (_, body, _) = get(&app, &format!("/sessions/{}", s.id)).await;
    let stats: Stats = serde_json::from_slice(&body).unwrap();
    assert_eq!(stats.bpp_enh_sent, 0.0);
    assert!(stats.rois.is_empty());
}

#[tokio::test]
async fn spectrum_views() {
    let app = app(4);
    let (_, body) = upload(&app, picture(20, 12).to_ppm()).await;
    let s: SessionResponse = serde_json::from_slice(&body).unwrap();
    for mode in ["base", "current", "full"] {
        let (status, body, ctype) = get(&app, &format!("/sessions/{}/spectrum?mode={mode}", s.id)).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(ctype.as_deref(), Some("image/png"));
        let img = RgbImage::decode(&body).unwrap();
        assert_eq!((img.width(), img.height()), (32, 16));
    }
    let (status, _, _) = get(&app, &format!("/sessions/{}/spectrum?mode=sideways", s.id)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn least_recently_used_session_is_evicted() {
    let app = app(2);
    let mut ids = Vec::new();
    for _ in 0..2 {
        let (_, body) = upload(&app, picture(8, 8).to_ppm()).await;
        ids.push(serde_json::from_slice::<SessionResponse>(&body).unwrap().id);
    }
    // Touch the first so the second becomes the oldest.
    assert_eq!(get(&app, &format!("/sessions/{}", ids[0])).await.0, StatusCode::OK);
    let (_, body) = upload(&app, picture(8, 8).to_ppm()).await;
    let third = serde_json::from_slice::<SessionResponse>(&body).unwrap().id;
    assert_eq!(get(&app, &format!("/sessions/{}", ids[0])).await.0, StatusCode::OK);
    assert_eq!(get(&app, &format!("/sessions/{}", ids[1])).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, &format!("/sessions/{third}")).await.0, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_sessions_stay_isolated() {
    let app = app(8);
    let a_img = picture(16, 16);
    let b_img = RgbImage::new(16, 16, vec![90; 768]).unwrap();
    let (_, a) = upload(&app, a_img.to_ppm()).await;
    let (_, b) = upload(&app, b_img.to_ppm()).await;
    let a: SessionResponse = serde_json::from_slice(&a).unwrap();
    let b: SessionResponse = serde_json::from_slice(&b).unwrap();
    let (ra, rb) = tokio::join!(
        enhance(&app, &a.id, json!([[0, 0, 16, 16]])),
        enhance(&app, &b.id, json!([[0, 0, 4, 4]]))
    );
    let ra: EnhanceResponse = serde_json::from_slice(&ra.1).unwrap();
    let rb: EnhanceResponse = serde_json::from_slice(&rb.1).unwrap();
    let (ca, _) = encode_image(&a_img, model()).unwrap();
    assert_eq!(png(&ra.image), decode_image(&ca, &DecodeMode::Full, model()).unwrap());
    assert_eq!(rb.rois, vec![[0, 0, 4, 4]]);
    assert_eq!(ra.rois, vec![[0, 0, 16, 16]]);
}
