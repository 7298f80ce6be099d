use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mqm_core::campaign::{Campaign, DocumentSpec, Project, ProjectMode};
use mqm_core::corpus::SegmentText;
use mqm_core::SegmentKey;
use mqm_server::{router, AppState};
use serde::Deserialize;
use serde_json::{json, Value};
use tower::ServiceExt;

const TOKEN: &str = "s3cret";
const SYSTEMS: [&str; 3] = ["Tohoku-AIP-NTT.890", "OPPO.1535", "Human-B.0"];

#[derive(Deserialize)]
struct Suite {
    source: String,
    target: String,
    cases: Vec<Case>,
}

#[derive(Deserialize)]
struct Case {
    name: String,
    mode: ProjectMode,
    payload: Value,
    accept: bool,
    rules: Vec<String>,
}

fn text(source: &str, target: &str) -> SegmentText {
    SegmentText { source: source.into(), target: target.into() }
}

fn app(data_dir: &Path) -> Router {
    router(Arc::new(AppState::load(data_dir, Some(TOKEN.into())).unwrap()))
}

/// Three systems, two documents of three segments, four raters.
fn news_campaign(data_dir: &Path, mode: ProjectMode) -> Campaign {
    let docs = vec![
        DocumentSpec { doc_id: "news-1".into(), n_segments: 3 },
        DocumentSpec { doc_id: "news-2".into(), n_segments: 3 },
    ];
    let mut project = Project::new(
        "news",
        SYSTEMS.iter().map(|s| s.to_string()).collect(),
        docs,
        ["ann1", "ann2", "ann3", "ann4"].map(String::from).to_vec(),
    );
    project.mode = mode;
    let mut texts = BTreeMap::new();
    for sys in SYSTEMS {
        for doc in ["news-1", "news-2"] {
            for i in 0..3 {
                texts.insert(
                    SegmentKey::new(sys, doc, i),
                    text(&format!("Source sentence {i}."), &format!("Zielsatz {i} von {doc}.")),
                );
            }
        }
    }
    Campaign::create(data_dir.join("news"), project, texts).unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, String) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, String) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, body: impl Into<Body>) -> (StatusCode, String) {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(body.into())
        .unwrap();
    send(app, req).await
}

fn rules_of(body: &str) -> Vec<String> {
    let v: Value = serde_json::from_str(body).unwrap();
    v["rules"]
        .as_array()
        .map(|a| a.iter().map(|r| r["rule"].as_str().unwrap().to_string()).collect())
        .unwrap_or_default()
}

#[tokio::test]
async fn shared_payload_suite() {
    let suite: Suite = serde_json::from_str(include_str!("../../core/tests/fixtures/payloads.json")).unwrap();
    for case in &suite.cases {
        let dir = tempfile::tempdir().unwrap();
        let mut project = Project::new(
            "suite",
            vec!["only".into()],
            vec![DocumentSpec { doc_id: "doc".into(), n_segments: 1 }],
            vec!["r1".into(), "r2".into(), "r3".into()],
        );
        project.mode = case.mode;
        let texts = BTreeMap::from([(SegmentKey::new("only", "doc", 0), text(&suite.source, &suite.target))]);
        let campaign = Campaign::create(dir.path().join("suite"), project, texts).unwrap();
        let alias = campaign.plan().queues["r1"][0].alias.clone();
        drop(campaign);

        let app = app(dir.path());
        let body = json!({
            "rater_id": "r1",
            "segment": {"alias": alias, "doc_id": "doc", "seg_index": 0},
            "payload": case.payload,
        });
        let (status, resp) = post(&app, "/projects/suite/annotations", body.to_string()).await;
        if case.accept {
            assert_eq!(status, StatusCode::OK, "{}: {resp}", case.name);
            let event: Value = serde_json::from_str(&resp).unwrap();
            assert_eq!(event["seq"], 1, "{}", case.name);
        } else {
            assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{}: {resp}", case.name);
            assert_eq!(rules_of(&resp), case.rules, "{}", case.name);
        }
    }
}

#[tokio::test]
async fn malformed_and_misrouted_requests() {
    let dir = tempfile::tempdir().unwrap();
    news_campaign(dir.path(), ProjectMode::Mqm);
    let app = app(dir.path());

    let (status, body) = post(&app, "/projects/news/annotations", "{not json").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(rules_of(&body), ["malformed_payload"]);

    let (status, _) = get(&app, "/projects/nope/progress").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get(&app, "/projects/news/tasks?rater=stranger").await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = get(&app, "/projects/news/tasks").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = get(&app, "/taxonomy").await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.contains("Accuracy/Mistranslation") && body.contains("Non-translation"));
}

#[tokio::test]
async fn responses_never_reveal_system_names() {
    let dir = tempfile::tempdir().unwrap();
    news_campaign(dir.path(), ProjectMode::Mqm);
    let app = app(dir.path());
    let leaks = |body: &str| SYSTEMS.iter().any(|s| body.contains(s.split('.').next().unwrap()));

    let mut seen = Vec::new();
    for rater in ["ann1", "ann2", "ann3", "ann4"] {
        let (status, body) = get(&app, &format!("/projects/news/tasks?rater={rater}")).await;
        assert_eq!(status, StatusCode::OK);
        assert!(!leaks(&body), "{body}");
        let task: Value = serde_json::from_str(&body).unwrap();
        let alias = task["alias"].as_str().unwrap().to_string();
        assert!(alias.starts_with("sys-"));

        let uri = format!("/projects/news/documents/{}?rater={rater}&alias={alias}", task["doc_id"].as_str().unwrap());
        let (status, body) = get(&app, &uri).await;
        assert_eq!(status, StatusCode::OK);
        assert!(!leaks(&body));

        let sub = json!({
            "rater_id": rater,
            "segment": {"alias": alias, "doc_id": task["doc_id"], "seg_index": 0},
            "payload": {"kind": "mqm", "annotations": []},
        });
        let (status, body) = post(&app, "/projects/news/annotations", sub.to_string()).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert!(!leaks(&body));
        seen.push(alias);
    }
    let (_, body) = get(&app, "/projects/news/progress").await;
    assert!(!leaks(&body));

    // Only the authorized export carries real names.
    let (status, _) = get(&app, "/projects/news/export").await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let wrong = Request::get("/projects/news/export")
        .header(header::AUTHORIZATION, "Bearer guess")
        .body(Body::empty())
        .unwrap();
    assert_eq!(send(&app, wrong).await.0, StatusCode::UNAUTHORIZED);
    let right = Request::get("/projects/news/export")
        .header(header::AUTHORIZATION, format!("Bearer {TOKEN}"))
        .body(Body::empty())
        .unwrap();
    let (status, tsv) = send(&app, right).await;
    assert_eq!(status, StatusCode::OK);
    assert!(leaks(&tsv));
    assert!(!tsv.contains("sys-"));
    assert_eq!(tsv.lines().count(), 1 + seen.len());
}

#[tokio::test]
async fn export_is_refused_without_a_configured_token() {
    let dir = tempfile::tempdir().unwrap();
    news_campaign(dir.path(), ProjectMode::Mqm);
    let app = router(Arc::new(AppState::load(dir.path(), None).unwrap()));
    let req = Request::get("/projects/news/export")
        .header(header::AUTHORIZATION, "Bearer ")
        .body(Body::empty())
        .unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn closed_projects_reject_submissions() {
    let dir = tempfile::tempdir().unwrap();
    let mut campaign = news_campaign(dir.path(), ProjectMode::Sqm);
    let alias = campaign.plan().queues["ann1"][0].clone();
    campaign.close().unwrap();
    drop(campaign);
    let app = app(dir.path());
    let sub = json!({
        "rater_id": "ann1",
        "segment": {"alias": alias.alias, "doc_id": alias.doc_id, "seg_index": 0},
        "payload": {"kind": "sqm", "value": 4.0},
    });
    let (status, _) = post(&app, "/projects/news/annotations", sub.to_string()).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submissions_are_all_logged() {
    let dir = tempfile::tempdir().unwrap();
    let campaign = news_campaign(dir.path(), ProjectMode::Sqm);
    let queues = campaign.plan().queues.clone();
    drop(campaign);
    let app = app(dir.path());

    let mut handles = Vec::new();
    for (rater, queue) in &queues {
        for task in queue {
            for seg in 0..3 {
                let app = app.clone();
                let body = json!({
                    "rater_id": rater,
                    "segment": {"alias": task.alias, "doc_id": task.doc_id, "seg_index": seg},
                    "payload": {"kind": "sqm", "value": seg as f64},
                });
                handles.push(tokio::spawn(async move {
                    post(&app, "/projects/news/annotations", body.to_string()).await
                }));
            }
        }
    }
    let total = handles.len();
    let mut seqs = Vec::new();
    for h in handles {
        let (status, body) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK, "{body}");
        let event: Value = serde_json::from_str(&body).unwrap();
        seqs.push(event["seq"].as_u64().unwrap());
    }
    seqs.sort_unstable();
    assert_eq!(seqs, (1..=total as u64).collect::<Vec<_>>());

    // Every rater is done, and the log replays to the same state.
    for rater in queues.keys() {
        let (status, _) = get(&app, &format!("/projects/news/tasks?rater={rater}")).await;
        assert_eq!(status, StatusCode::NO_CONTENT);
    }
    let reopened = Campaign::open(dir.path().join("news")).unwrap();
    assert_eq!(reopened.events().len(), total);
    let (_, progress) = get(&app, "/projects/news/progress").await;
    let progress: Value = serde_json::from_str(&progress).unwrap();
    for (rater, p) in reopened.progress() {
        assert_eq!(progress[&rater]["completed"], p.completed);
        assert_eq!(p.completed, p.assigned);
    }
}
