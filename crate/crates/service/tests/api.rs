use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;
use vip_core::concept::{AnswerMatrix, LabeledDataset, MatrixManifest, Query, QuerySet, Split};
use vip_core::engine::{infer, Checkpoint, CheckpointMeta, MlpConfig, VipModel};
use vip_core::trajectory::{RowSource, StopRule};
use vip_service::*;

const N_QUERIES: usize = 6;
const N_CLASSES: usize = 3;
const N_SAMPLES: usize = 8;

fn checkpoint() -> Checkpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mlp = MlpConfig {
        hidden_width: 16,
        ..MlpConfig::default()
    };
    let model = VipModel::new(mlp, N_QUERIES, N_CLASSES, &mut rng).unwrap();
    let meta = CheckpointMeta {
        class_names: vec!["wren".into(), "finch".into(), "gull".into()],
        ..CheckpointMeta::default()
    };
    Checkpoint::new(model, meta)
}

fn queries() -> QuerySet {
    let qs = (0..N_QUERIES)
        .map(|id| Query {
            id,
            text: format!("feature {id}"),
            attribute: format!("feature {id}"),
            value: "present".into(),
            origin_class: "bird".into(),
        })
        .collect();
    QuerySet::new("birds", qs).unwrap()
}

fn samples() -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let values = (0..N_SAMPLES * N_QUERIES).map(|_| f64::from(rng.random_range(-2.0f32..2.0))).collect();
    let labels = (0..N_SAMPLES).map(|i| i % N_CLASSES).collect();
    let names = vec!["wren".into(), "finch".into(), "gull".into()];
    LabeledDataset::new(Split::Test, labels, names, AnswerMatrix::new(N_SAMPLES, N_QUERIES, values).unwrap()).unwrap()
}

fn state() -> AppState {
    let mut registry = ModelRegistry::new();
    registry.insert(LoadedModel::new("birds", checkpoint(), Some(queries()), Some(samples())).unwrap());
    AppState::new(registry, SessionStore::new(DEFAULT_SESSION_TIMEOUT))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn create(app: &Router, body: Value) -> (String, Value) {
    let (status, v) = call(app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    (v["session_id"].as_str().unwrap().to_string(), v)
}

async fn answer(app: &Router, id: &str, query: u64, answer: Value) -> (StatusCode, Value) {
    call(
        app,
        Method::POST,
        &format!("/sessions/{id}/answers"),
        Some(json!({"query_id": query, "answer": answer})),
    )
    .await
}

fn assert_error(v: &Value, code: &str) {
    assert_eq!(v["code"], code, "{v}");
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()));
}

fn posterior(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[tokio::test]
async fn lists_models() {
    let app = app(state());
    let (status, v) = call(&app, Method::GET, "/models", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v[0]["name"], "birds");
    assert_eq!(v[0]["n_queries"], N_QUERIES);
    assert_eq!(v[0]["n_samples"], N_SAMPLES);
    assert_eq!(v[0]["class_names"][2], "gull");
}

#[tokio::test]
async fn create_session_contract() {
    let app = app(state());
    let (_, v) = create(&app, json!({"model": "birds", "threshold": 0.9})).await;
    let q = v["next_query"]["id"].as_u64().unwrap() as usize;
    assert_eq!(v["next_query"]["text"], format!("feature {q}"));
    assert_eq!(v["status"], "active");
    assert_eq!(v["answer_scale"], "standardized");

    let (s, v) = call(&app, Method::POST, "/sessions", Some(json!({"model": "nope", "threshold": 0.9}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&v, "unknown_model");
    for t in [0.0, -0.1, 1.5] {
        let (s, v) = call(&app, Method::POST, "/sessions", Some(json!({"model": "birds", "threshold": t}))).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "threshold {t}");
        assert_error(&v, "invalid_request");
    }
    let (s, _) = call(&app, Method::POST, "/sessions", Some(json!({"model": "birds", "threshold": 1.0}))).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, v) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({"model": "birds", "threshold": 0.9, "mode": {"type": "dataset_row", "sample": 99}})),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&v, "unknown_sample");
    let (s, v) = call(&app, Method::POST, "/sessions", Some(json!({"model": "birds"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "invalid_request");
    let (s, _) = call(&app, Method::POST, "/sessions", Some(json!({"model": "birds", "threshold": 0.9, "budget": 7}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn answers_follow_the_pending_query() {
    let app = app(state());
    let (id, v) = create(&app, json!({"model": "birds", "threshold": 1.0, "budget": 3})).await;
    let mut pending = v["next_query"]["id"].as_u64().unwrap();

    let wrong = (pending + 1) % N_QUERIES as u64;
    let (s, v) = answer(&app, &id, wrong, json!(0.5)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_error(&v, "stale_query");

    for k in 0..3 {
        let (s, v) = answer(&app, &id, pending, json!(-1.0)).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        let p = posterior(&v["posterior"]);
        assert_eq!(p.len(), N_CLASSES);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        if k < 2 {
            assert_eq!(v["stopped"], false);
            assert!(v["prediction"].is_null());
            pending = v["next_query"]["id"].as_u64().unwrap();
        } else {
            assert_eq!(v["stopped"], true);
            assert_eq!(v["stop_reason"], "budget");
            assert!(v["next_query"].is_null());
            assert!(v["prediction"]["class"].as_u64().unwrap() < N_CLASSES as u64);
        }
    }
    let (s, v) = answer(&app, &id, pending, json!(1.0)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_error(&v, "session_stopped");

    let (_, v) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(v["status"], "stopped");
    assert_eq!(v["n_steps"], 3);
}

#[tokio::test]
async fn threshold_stop_includes_prediction() {
    let app = app(state());
    let (id, v) = create(&app, json!({"model": "birds", "threshold": 0.01})).await;
    let q = v["next_query"]["id"].as_u64().unwrap();
    let (_, v) = answer(&app, &id, q, json!(0.3)).await;
    assert_eq!(v["stopped"], true);
    assert_eq!(v["stop_reason"], "threshold");
    let p = posterior(&v["posterior"]);
    let class = v["prediction"]["class"].as_u64().unwrap() as usize;
    assert_eq!(v["prediction"]["probability"].as_f64().unwrap(), p[class]);
    assert!(p.iter().all(|&x| x <= p[class]));
}

#[tokio::test]
async fn bad_answers_are_rejected() {
    let app = app(state());
    let (id, v) = create(&app, json!({"model": "birds", "threshold": 0.9})).await;
    let q = v["next_query"]["id"].as_u64().unwrap();
    let (s, v) = answer(&app, &id, q, json!("auto")).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "invalid_request");
    let (s, _) = answer(&app, &id, q, json!("maybe")).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = answer(&app, &id, q, json!([1.0])).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, v) = call(&app, Method::GET, &format!("/sessions/{id}/trajectory"), None).await;
    assert_eq!(v["steps"].as_array().unwrap().len(), 0);
}

#[tokio::test]
async fn trajectory_views() {
    let app = app(state());
    let (id, v) = create(&app, json!({"model": "birds", "threshold": 1.0})).await;
    let (s, t) = call(&app, Method::GET, &format!("/sessions/{id}/trajectory"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(t["steps"].as_array().unwrap().is_empty());
    let mut q = v["next_query"]["id"].as_u64().unwrap();
    for k in 1..=4 {
        let (_, v) = answer(&app, &id, q, json!(0.25 * k as f64)).await;
        q = v["next_query"]["id"].as_u64().unwrap_or(0);
        let (_, t) = call(&app, Method::GET, &format!("/sessions/{id}/trajectory"), None).await;
        let steps = t["steps"].as_array().unwrap();
        assert_eq!(steps.len(), k);
        assert_eq!(steps[k - 1]["answer"].as_f64().unwrap(), 0.25 * k as f64);
        assert_eq!(steps[k - 1]["query_text"], format!("feature {}", steps[k - 1]["query_id"]));
        assert_eq!(posterior(&steps[k - 1]["posterior"]), posterior(&v["posterior"]));
    }
    let (s, v) = call(&app, Method::GET, "/sessions/missing/trajectory", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&v, "session_not_found");
}

#[tokio::test]
async fn auto_session_replays_like_the_engine() {
    let st = state();
    let app = app(st.clone());
    let model = st.registry.get("birds").unwrap();
    let data = samples();
    for sample in 0..N_SAMPLES {
        let (id, v) = create(
            &app,
            json!({"model": "birds", "threshold": 0.6, "budget": 4, "mode": {"type": "dataset_row", "sample": sample}}),
        )
        .await;
        let mut next = v["next_query"]["id"].as_u64();
        while let Some(q) = next {
            let (s, v) = answer(&app, &id, q, json!("auto")).await;
            assert_eq!(s, StatusCode::OK);
            next = v["next_query"]["id"].as_u64();
        }
        let (_, t) = call(&app, Method::GET, &format!("/sessions/{id}/trajectory"), None).await;
        let engine = infer(
            &model.checkpoint.model,
            &mut RowSource(data.answers.row(sample)),
            StopRule::new(0.6, 4),
        )
        .unwrap();
        let served: TrajectoryView = serde_json::from_value(t).unwrap();
        assert_eq!(served.steps.len(), engine.steps.len());
        for (a, b) in served.steps.iter().zip(&engine.steps) {
            assert_eq!(a.query_id, b.query);
            assert_eq!(a.answer.to_bits(), b.answer.to_bits());
            assert_eq!(a.posterior, b.posterior);
        }
        assert_eq!(served.prediction.class, engine.prediction);
        assert_eq!(served.stop_reason, Some(engine.stop_reason));
    }
}

#[tokio::test]
async fn interventions() {
    let app = app(state());
    let (id, v) = create(&app, json!({"model": "birds", "threshold": 1.0, "budget": 4})).await;
    let mut next = v["next_query"]["id"].as_u64();
    let mut k = 0.0;
    while let Some(q) = next {
        k += 0.5;
        let (_, v) = answer(&app, &id, q, json!(k - 1.0)).await;
        next = v["next_query"]["id"].as_u64();
    }
    let url = format!("/sessions/{id}/intervene");
    let (_, before) = call(&app, Method::GET, &format!("/sessions/{id}/trajectory"), None).await;
    let old = before["steps"][1]["answer"].clone();
    let (s, same) = call(&app, Method::POST, &url, Some(json!({"step": 1, "new_answer": old, "mode": "reanswer"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(same, before);

    let (s, v) = call(&app, Method::POST, &url, Some(json!({"step": 4, "new_answer": 0.0, "mode": "reanswer"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "index_out_of_range");

    let (s, v) = call(&app, Method::POST, &url, Some(json!({"step": 2, "new_answer": -3.0, "mode": "reanswer"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["steps"].as_array().unwrap().len(), 4);
    assert_eq!(v["steps"][2]["answer"], -3.0);
    for i in [0, 1, 3] {
        assert_eq!(v["steps"][i]["query_id"], before["steps"][i]["query_id"]);
    }
    assert_eq!(v["steps"][1]["posterior"], before["steps"][1]["posterior"]);

    let (s, v) = call(&app, Method::POST, &url, Some(json!({"step": 1, "new_answer": 2.0, "mode": "replay"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["steps"].as_array().unwrap().len(), 2);
    assert_eq!(v["status"], "active");
    let q = v["next_query"]["id"].as_u64().unwrap();
    let (s, v) = answer(&app, &id, q, json!(0.1)).await;
    assert_eq!(s, StatusCode::OK, "{v}");

    let (s, _) = call(
        &app,
        Method::POST,
        "/sessions/missing/intervene",
        Some(json!({"step": 0, "new_answer": 0.0, "mode": "replay"})),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn interleaved_sessions_match_serial_runs() {
    let app = app(state());
    let answers = [[0.9, -0.4, 1.2, 0.0, -1.5, 0.3], [-0.2, 0.8, -1.1, 2.0, 0.6, -0.7]];
    let body = json!({"model": "birds", "threshold": 1.0});

    let mut serial = Vec::new();
    for a in &answers {
        let (id, v) = create(&app, body.clone()).await;
        let mut q = v["next_query"]["id"].as_u64();
        let mut i = 0;
        while let Some(qq) = q {
            let (_, v) = answer(&app, &id, qq, json!(a[i])).await;
            q = v["next_query"]["id"].as_u64();
            i += 1;
        }
        serial.push(call(&app, Method::GET, &format!("/sessions/{id}/trajectory"), None).await.1["steps"].clone());
    }

    let (a, va) = create(&app, body.clone()).await;
    let (b, vb) = create(&app, body).await;
    let mut qa = va["next_query"]["id"].as_u64();
    let mut qb = vb["next_query"]["id"].as_u64();
    let mut i = 0;
    while qa.is_some() || qb.is_some() {
        if let Some(q) = qa {
            qa = answer(&app, &a, q, json!(answers[0][i])).await.1["next_query"]["id"].as_u64();
        }
        if let Some(q) = qb {
            qb = answer(&app, &b, q, json!(answers[1][i])).await.1["next_query"]["id"].as_u64();
        }
        i += 1;
    }
    for (id, want) in [(a, &serial[0]), (b, &serial[1])] {
        let (_, t) = call(&app, Method::GET, &format!("/sessions/{id}/trajectory"), None).await;
        assert_eq!(&t["steps"], want);
    }
}

#[tokio::test]
async fn delete_and_unknown_routes() {
    let app = app(state());
    let (id, _) = create(&app, json!({"model": "birds", "threshold": 0.9})).await;
    let (s, _) = call(&app, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, v) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&v, "session_not_found");
    let (s, _) = call(&app, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, v) = call(&app, Method::GET, "/nowhere", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&v, "not_found");
}

#[tokio::test]
async fn cors_headers_are_present() {
    let app = app(state());
    let req = Request::builder()
        .method(Method::GET)
        .uri("/models")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}

#[test]
fn idle_sessions_are_evicted() {
    let st = state();
    let model = st.registry.get("birds").unwrap();
    let store = SessionStore::new(Duration::from_secs(60));
    let s = Session::new("a".into(), model.clone(), SessionMode::Manual, 0.9, None).unwrap();
    store.insert(s);
    assert_eq!(store.evict_idle(Instant::now()), 0);
    assert!(store.get("a").is_ok());
    assert_eq!(store.evict_idle(Instant::now() + Duration::from_secs(61)), 1);
    assert!(matches!(store.get("a"), Err(ServiceError::SessionNotFound(_))));

    let expired = SessionStore::new(Duration::ZERO);
    expired.insert(Session::new("b".into(), model, SessionMode::Manual, 0.9, None).unwrap());
    std::thread::sleep(Duration::from_millis(5));
    assert!(expired.get("b").is_err());
    assert!(expired.is_empty());
}

#[test]
fn model_directory_loading() {
    let dir = tempfile::tempdir().unwrap();
    checkpoint().write(dir.path().join("birds.vipckpt")).unwrap();
    queries().write_json(dir.path().join("birds.queries.json")).unwrap();
    let manifest = MatrixManifest {
        dataset: "birds".into(),
        query_set: "birds".into(),
        stats: None,
    };
    samples().save_dir(dir.path().join("birds.samples"), &manifest).unwrap();
    checkpoint().write(dir.path().join("bare.vipckpt")).unwrap();
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();

    let registry = ModelRegistry::load_dir(dir.path()).unwrap();
    assert_eq!(registry.len(), 2);
    let birds = registry.get("birds").unwrap();
    assert_eq!(birds.checkpoint, checkpoint());
    assert_eq!(birds.query_text(2), "feature 2");
    assert_eq!(birds.samples.as_ref().unwrap(), &samples());
    let bare = registry.get("bare").unwrap();
    assert_eq!(bare.query_text(2), "query 2");
    assert!(bare.samples.is_none());

    let mut short = queries();
    short.queries.pop();
    assert!(LoadedModel::new("x", checkpoint(), Some(short), None).is_err());
}
