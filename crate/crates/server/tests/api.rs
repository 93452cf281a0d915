use attnscope::{Mode, Model, ModelConfig, Thresholds, Vocabulary};
use attnscope_server::{router, AppState, Workbench};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

fn config(mode: Mode) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_ff: 16,
        vocab_size: 64,
        max_seq: 16,
        mode,
    }
}

fn app(mode: Mode) -> Router {
    let model = Model::synthetic(config(mode), 42).unwrap();
    let wb = Workbench::new(model, Vocabulary::builtin(), Thresholds::default(), None).unwrap();
    router(AppState::ready(wb), None)
}

async fn call(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, bytes)
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn health_and_not_ready() {
    let (status, body) = call(&app(Mode::Causal), "GET", "/api/health", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, br#"{"status":"ok"}"#);

    let cold = router(AppState::new(), None);
    for (m, uri) in [
        ("GET", "/api/health"),
        ("GET", "/api/model"),
        ("POST", "/api/trace"),
    ] {
        let (status, body) = call(&cold, m, uri, r#"{"text":"a"}"#).await;
        assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
        assert_eq!(json(&body)["error"], "not_ready");
    }
}

#[tokio::test]
async fn model_descriptor() {
    let app = app(Mode::Causal);
    let (status, body) = call(&app, "GET", "/api/model", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        String::from_utf8(body.clone()).unwrap(),
        r#"{"d_head":4,"heads":2,"layers":2,"max_seq":16,"mode":"causal","vocab_size":64}"#
    );
    assert_eq!(call(&app, "GET", "/api/model", "").await.1, body);
}

#[tokio::test]
async fn single_token_trace() {
    let (status, body) = call(&app(Mode::Causal), "POST", "/api/trace", r#"{"text":"a"}"#).await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&body);
    assert_eq!(
        v["attn"],
        serde_json::json!([[[[1]], [[1]]], [[[1]], [[1]]]])
    );
    assert!(v.get("q").is_none());
    assert_eq!(v["tokens"], serde_json::json!(["a"]));
}

#[tokio::test]
async fn trace_matches_golden_and_core_serializer() {
    let (status, body) = call(
        &app(Mode::Causal),
        "POST",
        "/api/trace",
        r#"{"text":"The quick, brown fox jumps over the lazy"}"#,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let golden = include_bytes!("../../core/tests/golden/trace_fox.json");
    assert_eq!(body, golden.to_vec());
}

#[tokio::test]
async fn include_qk() {
    let (_, body) = call(
        &app(Mode::Causal),
        "POST",
        "/api/trace",
        r#"{"text":"the cat","include_qk":true}"#,
    )
    .await;
    let v = json(&body);
    assert_eq!(v["q"][1][1].as_array().unwrap().len(), 2);
    assert_eq!(v["k"][0][0][0].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn error_contract() {
    let app = app(Mode::Causal);
    let cases = [
        (
            "/api/trace",
            r#"{"text":""}"#,
            StatusCode::BAD_REQUEST,
            "invalid_input",
        ),
        (
            "/api/trace",
            r#"{"text":"a","text_b":"b"}"#,
            StatusCode::BAD_REQUEST,
            "mode_error",
        ),
        (
            "/api/trace",
            r#"{"text":"a a a a a a a a a a a a a a a a a"}"#,
            StatusCode::PAYLOAD_TOO_LARGE,
            "too_long",
        ),
        (
            "/api/trace",
            r#"{"text":"a""#,
            StatusCode::UNPROCESSABLE_ENTITY,
            "malformed_json",
        ),
        (
            "/api/trace",
            r#"{"txt":"a"}"#,
            StatusCode::UNPROCESSABLE_ENTITY,
            "malformed_json",
        ),
        (
            "/api/heads",
            r#"{"text":"  "}"#,
            StatusCode::BAD_REQUEST,
            "invalid_input",
        ),
        (
            "/api/neuron",
            r#"{"text":"a b","layer":0,"head":0,"token_index":-1}"#,
            StatusCode::UNPROCESSABLE_ENTITY,
            "malformed_json",
        ),
    ];
    for (uri, body, status, code) in cases {
        let (got, resp) = call(&app, "POST", uri, body).await;
        assert_eq!(got, status, "{uri} {body}");
        let v = json(&resp);
        assert_eq!(v["error"], code);
        assert!(v["detail"].is_string());
        assert_eq!(v.as_object().unwrap().len(), 2);
    }
}

#[tokio::test]
async fn neuron_endpoint() {
    let app = app(Mode::Causal);
    let (status, body) = call(
        &app,
        "POST",
        "/api/neuron",
        r#"{"text":"the cat sat","layer":1,"head":0,"token_index":0}"#,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&body);
    assert_eq!(v["softmax"], serde_json::json!([1]));
    for key in [
        "q",
        "k",
        "elementwise",
        "dot",
        "scaled",
        "softmax",
        "targets",
    ] {
        assert!(v.get(key).is_some(), "{key}");
    }

    let (_, body) = call(
        &app,
        "POST",
        "/api/neuron",
        r#"{"text":"the cat sat","layer":1,"head":1,"token_index":2}"#,
    )
    .await;
    let v = json(&body);
    assert_eq!(v["dot"].as_array().unwrap().len(), 3);
    assert_eq!(v["target_tokens"], serde_json::json!(["the", "cat", "sat"]));

    for (field, req) in [
        (
            "layer",
            r#"{"text":"the cat","layer":2,"head":0,"token_index":0}"#,
        ),
        (
            "head",
            r#"{"text":"the cat","layer":0,"head":2,"token_index":0}"#,
        ),
        (
            "token_index",
            r#"{"text":"the cat","layer":0,"head":0,"token_index":2}"#,
        ),
    ] {
        let (status, body) = call(&app, "POST", "/api/neuron", req).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        let v = json(&body);
        assert_eq!(v["error"], "out_of_range");
        assert!(v["detail"].as_str().unwrap().starts_with(field), "{v}");
    }
}

#[tokio::test]
async fn heads_endpoint() {
    let (status, body) = call(
        &app(Mode::Causal),
        "POST",
        "/api/heads",
        r#"{"text":"the quick brown fox"}"#,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&body);
    let items = v.as_array().unwrap();
    assert_eq!(items.len(), 4);
    for (idx, item) in items.iter().enumerate() {
        assert_eq!(item["layer"], idx / 2);
        assert_eq!(item["head"], idx % 2);
        assert!(item.get("inter_sentence_fraction").is_none());
        assert!(item["decay_slope"].is_number());
        assert!(item["label"].is_string());
        assert_eq!(item["thumbnail"].as_array().unwrap().len(), 4);
    }

    let (_, body) = call(
        &app(Mode::Bidirectional),
        "POST",
        "/api/heads",
        r#"{"text":"the cat sat on the mat","text_b":"the cat lay on the rug"}"#,
    )
    .await;
    let v = json(&body);
    let items = v.as_array().unwrap();
    assert_eq!(items.len(), 4);
    for item in items {
        let f = item["inter_sentence_fraction"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f));
        assert!(item.get("decay_slope").is_none());
        assert_eq!(item["thumbnail"].as_array().unwrap().len(), 15);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_requests() {
    let app = app(Mode::Bidirectional);
    let body =
        r#"{"text":"the cat sat on the mat","text_b":"the cat lay on the rug","include_qk":true}"#;
    let tasks: Vec<_> = (0..24)
        .map(|_| {
            let app = app.clone();
            tokio::spawn(async move { call(&app, "POST", "/api/trace", body).await })
        })
        .collect();
    let mut bodies = Vec::new();
    for t in tasks {
        let (status, b) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        bodies.push(b);
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn cors_preflight() {
    let app = app(Mode::Causal);
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/api/trace")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}

#[tokio::test]
async fn static_assets() {
    let dir = std::env::temp_dir().join(format!("attnscope-static-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("index.html"), "<!doctype html><title>ui</title>").unwrap();
    let model = Model::synthetic(config(Mode::Causal), 42).unwrap();
    let wb = Workbench::new(model, Vocabulary::builtin(), Thresholds::default(), None).unwrap();
    let app = router(AppState::ready(wb), Some(dir.clone()));
    let (status, body) = call(&app, "GET", "/", "").await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(body)
        .unwrap()
        .contains("<title>ui</title>"));
    let (status, _) = call(&app, "GET", "/api/health", "").await;
    assert_eq!(status, StatusCode::OK);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn workbench_limits() {
    let model = Model::synthetic(config(Mode::Causal), 42).unwrap();
    assert!(Workbench::new(
        model.clone(),
        Vocabulary::builtin(),
        Thresholds::default(),
        Some(17)
    )
    .is_err());
    let small = ModelConfig {
        vocab_size: 8,
        ..config(Mode::Causal)
    };
    let tiny = Model::synthetic(small, 1).unwrap();
    assert!(Workbench::new(tiny, Vocabulary::builtin(), Thresholds::default(), None).is_err());

    let wb = Workbench::new(model, Vocabulary::builtin(), Thresholds::default(), Some(3)).unwrap();
    assert!(matches!(
        wb.trace("a b c d", None, false),
        Err(attnscope::Error::Length { len: 4, max: 3 })
    ));
}
