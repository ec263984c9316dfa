mod common;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use qac_service::http::{router, ClickAck, ErrorBody};
use qac_service::{Health, ServiceConfig, SessionStore, SuggestResponse, SuggestService};
use serde::de::DeserializeOwned;
use tower::ServiceExt;

use common::{fixture, service};

async fn call<T: DeserializeOwned>(app: axum::Router, req: Request<Body>) -> (StatusCode, T) {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), 1 << 20).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_json(uri: &str, body: &str) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

#[tokio::test]
async fn suggest_click_and_health_routes() {
    let app = router(service(ServiceConfig::default()));
    let (s, h): (_, Health) = call(app.clone(), get("/health")).await;
    assert_eq!(s, StatusCode::OK);
    assert!(h.model_loaded && h.trie_queries > 0);

    let (s, ack): (_, ClickAck) = call(app.clone(), post_json("/click", r#"{"uid":"w","text":"tent cheap","kind":"clicked_item"}"#)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ack.history_len, 1);

    let (s, r): (_, SuggestResponse) = call(app.clone(), get("/suggest?uid=w&prefix=t&k=3&debug=true")).await;
    assert_eq!(s, StatusCode::OK);
    assert!(r.suggestions.len() <= 3 && !r.suggestions.is_empty());
    assert_eq!(r.debug.unwrap().len(), r.suggestions.len());
}

#[tokio::test]
async fn errors_carry_json_codes() {
    let app = router(service(ServiceConfig::default()));
    let (s, e): (_, ErrorBody) = call(app.clone(), get("/suggest?uid=w")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(e.code, "bad-request");
    let (s, e): (_, ErrorBody) = call(app.clone(), get("/suggest?uid=w&prefix=%21%21")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(e.code, "bad-request");
    let (s, e): (_, ErrorBody) = call(app.clone(), post_json("/click", r#"{"uid":"w","text":"x","kind":"buy"}"#)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(e.code, "bad-request");
    let (s, _): (_, ErrorBody) = call(app, post_json("/click", "not json")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unloaded_model_is_503() {
    let f = fixture();
    let svc = SuggestService::new(ServiceConfig::default(), SessionStore::new(f.model.config.views.clone()));
    let app = router(std::sync::Arc::new(svc));
    let (s, e): (_, ErrorBody) = call(app, get("/suggest?uid=w&prefix=l")).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(e.code, "service-unavailable");
}
