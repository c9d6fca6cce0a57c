use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use uslink_core::gold::with_abstraction_ids;
use uslink_core::synth::{self, SynthConfig};
use uslink_service::{app, build_state, ServiceConfig};

fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        data_dir: dir.to_path_buf(),
        backend_config: Some("oracle-mock".into()),
        ..ServiceConfig::default()
    }
}

fn router(dir: &Path) -> Router {
    let cfg = config(dir);
    app(build_state(&cfg).unwrap(), &cfg).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, headers: &[(&str, &str)]) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
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
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

/// A generated GUI with two implemented stories and one whose annotated
/// components were removed before upload.
fn fixture() -> Value {
    let data = synth::dataset(&SynthConfig::small(1, 3), 4);
    let proto = with_abstraction_ids(data.store.iter().next().unwrap());
    let removed = &data.pairs[2].gold_component_ids;
    let mut shown = proto.clone();
    for g in &mut shown.groups {
        g.components.retain(|c| !removed.contains(&c.id));
    }
    shown.groups.retain(|g| !g.components.is_empty());
    let stories: Vec<Value> = data
        .pairs
        .iter()
        .map(|p| json!({ "us_id": p.us_id(), "text": p.story.text, "gold_component_ids": p.gold_component_ids }))
        .collect();
    json!({ "project_id": "demo", "prototype": serde_json::to_value(&shown).unwrap(), "stories": stories })
}

fn component_count(proto: &Value) -> usize {
    proto["groups"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| g["components"].as_array().unwrap().len())
        .sum()
}

#[tokio::test]
async fn full_workflow_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(dir.path());

    let (status, created) = call(&app, "POST", "/api/v1/projects", Some(fixture()), &[]).await;
    assert_eq!(status, StatusCode::CREATED, "{created}");
    assert_eq!(created["revision"], 1);
    let base = "/api/v1/projects/demo";

    let (status, body) = call(&app, "POST", &format!("{base}/feedback"), Some(json!({"us_id": "US001", "verdict_shown": 1, "user_judgment": "Correct"})), &[]).await;
    assert_eq!(status, StatusCode::CONFLICT, "feedback needs a verdict: {body}");

    let (status, validated) = call(&app, "POST", &format!("{base}/validate"), None, &[]).await;
    assert_eq!(status, StatusCode::OK, "{validated}");
    assert_eq!(validated["cached"], false);
    let verdicts = validated["verdicts"].as_array().unwrap();
    assert_eq!(verdicts.len(), 3);
    let labels: Vec<u64> = verdicts.iter().map(|v| v["label"].as_u64().unwrap()).collect();
    assert_eq!(labels, [1, 1, 0]);
    assert_eq!(verdicts[2]["us_id"], "US003");
    assert!(verdicts.iter().all(|v| v["probability"].as_f64().unwrap() == 1.0));

    let (_, again) = call(&app, "POST", &format!("{base}/validate"), None, &[]).await;
    assert_eq!(again["cached"], true);
    assert_eq!(again["verdicts"], validated["verdicts"]);

    let (status, hl) = call(&app, "GET", &format!("{base}/stories/US001/highlights"), None, &[]).await;
    assert_eq!(status, StatusCode::OK, "{hl}");
    let ids: Vec<u64> = hl["components"].as_array().unwrap().iter().map(|c| c["component_id"].as_u64().unwrap()).collect();
    let gold: Vec<u64> = fixture()["stories"][0]["gold_component_ids"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(ids, gold);

    let (status, fb) = call(&app, "POST", &format!("{base}/feedback"), Some(json!({"us_id": "US003", "verdict_shown": 0, "user_judgment": "Correct", "free_text": "missing indeed"})), &[]).await;
    assert_eq!(status, StatusCode::CREATED, "{fb}");
    assert_eq!(fb["revision"], 2);
    let (status, _) = call(&app, "POST", &format!("{base}/feedback"), Some(json!({"us_id": "US999", "verdict_shown": 0, "user_judgment": "Correct"})), &[]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, recs) = call(&app, "GET", &format!("{base}/stories/US003/recommendations?k=2"), None, &[]).await;
    assert_eq!(status, StatusCode::OK, "{recs}");
    assert_eq!(recs["recommendations"].as_array().unwrap().len(), 2);

    let apply = format!("{base}/stories/US003/recommendations/1/apply");
    let (status, _) = call(&app, "POST", &apply, None, &[]).await;
    assert_eq!(status, StatusCode::PRECONDITION_REQUIRED);
    let (status, _) = call(&app, "POST", &format!("{base}/stories/US003/recommendations/9/apply"), None, &[("if-match", "\"2\"")]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, before) = call(&app, "GET", base, None, &[]).await;
    let (status, applied) = call(&app, "POST", &apply, None, &[("if-match", "\"2\"")]).await;
    assert_eq!(status, StatusCode::OK, "{applied}");
    assert_eq!(applied["revision"], 3);
    let added = applied["group"]["components"].as_array().unwrap().len();
    assert!(added > 0);
    assert_eq!(component_count(&applied["prototype"]), component_count(&before["prototype"]) + added);
    let (status, conflict) = call(&app, "POST", &apply, None, &[("x-expected-revision", "2")]).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(conflict["current_revision"], 3);

    let (_, revalidated) = call(&app, "POST", &format!("{base}/validate"), None, &[]).await;
    assert_eq!(revalidated["cached"], false);

    drop(app);
    let app = router(dir.path());
    let (status, reloaded) = call(&app, "GET", base, None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(reloaded["revision"], 3);
    assert_eq!(reloaded["feedback_count"], 1);
    assert_eq!(reloaded["prototype"], applied["prototype"]);
    assert_eq!(reloaded["validation"]["cached"], true);
    let (_, feedback) = call(&app, "GET", &format!("{base}/feedback"), None, &[]).await;
    assert_eq!(feedback[0]["free_text"], "missing indeed");
}

#[tokio::test]
async fn schema_errors_and_unknown_projects() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(dir.path());
    let (status, body) = call(&app, "POST", "/api/v1/projects", Some(json!({"prototype": {"gui_id": "x"}, "stories": []})), &[]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "schema");
    let (status, _) = call(&app, "GET", "/api/v1/projects/nope", None, &[]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/api/v1/projects", Some(fixture()), &[]).await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, _) = call(&app, "POST", "/api/v1/projects", Some(fixture()), &[]).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "POST", "/api/v1/projects/demo/validate?prompt=bogus", None, &[]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "GET", "/api/v1/projects/demo/stories/US001/recommendations?k=0", None, &[]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn concurrent_applies_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(dir.path());
    call(&app, "POST", "/api/v1/projects", Some(fixture()), &[]).await;
    call(&app, "GET", "/api/v1/projects/demo/stories/US003/recommendations?k=1", None, &[]).await;
    let uri = "/api/v1/projects/demo/stories/US003/recommendations/1/apply";
    let (a, b) = tokio::join!(
        call(&app, "POST", uri, None, &[("if-match", "1")]),
        call(&app, "POST", uri, None, &[("if-match", "1")])
    );
    let mut statuses = [a.0, b.0];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
}
