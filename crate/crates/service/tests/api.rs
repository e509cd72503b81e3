use std::fs;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use scopetree::gateway::{CompletionExchange, FixtureStore, Gateway, ModelParams};
use scopetree::hierarchy::TopicPath;
use scopetree::prompt::{render_prompt, PromptRequest, PromptStrategy};
use scopetree::run::{run_experiment, ExperimentConfig, RunStore, FIXTURES_DIR};
use scopetree::testsuite::TestSuite;
use scopetree_service::{router, ServiceConfig, RUNS_DIR};
use serde_json::{json, Value};
use tower::ServiceExt;

fn add_fixture(store: &Path, strategy: PromptStrategy, path: &[&str], items: &[&str]) {
    let fixtures = FixtureStore::open(store.join(FIXTURES_DIR)).unwrap();
    let path = TopicPath::new(path.iter().copied()).unwrap();
    let prompt = render_prompt(&PromptRequest::new(strategy, path)).unwrap();
    let raw: String = items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}\n", i + 1))
        .collect();
    fixtures
        .record(&CompletionExchange::new(
            prompt,
            ModelParams::default(),
            raw,
        ))
        .unwrap();
}

const CS_AREAS: [&str; 5] = [
    "Algorithms",
    "Databases",
    "Networks",
    "Security",
    "Graphics",
];

fn app(store: &Path) -> Router {
    router(ServiceConfig::new(store)).unwrap()
}

async fn call(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<(&str, String)>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some((ct, text)) => {
            req = req.header(header::CONTENT_TYPE, ct);
            Body::from(text)
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(
        app,
        Method::POST,
        uri,
        Some(("application/json", body.to_string())),
    )
    .await
}

async fn new_tree(app: &Router, root: &str) -> String {
    let (status, body) = post_json(app, "/trees", json!({ "root_label": root })).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["tree_id"].as_str().unwrap().to_string()
}

fn labels(tree: &Value) -> Vec<String> {
    tree["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|n| n["label"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn expand_root_in_replay_adds_five_level_two_children() {
    let dir = tempfile::tempdir().unwrap();
    add_fixture(
        dir.path(),
        PromptStrategy::FullPathPlusCurrent,
        &["Computer Science"],
        &CS_AREAS,
    );
    let app = app(dir.path());
    let id = new_tree(&app, "Computer Science").await;

    let (status, tree) = call(&app, Method::GET, &format!("/trees/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(tree["nodes"].as_array().unwrap().len(), 1);
    assert_eq!(tree["nodes"][0]["level"], 1);

    let (status, body) = post_json(
        &app,
        &format!("/trees/{id}/expand"),
        json!({ "node_id": 0, "strategy": "full", "k": 5, "mode": "replay" }),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["record"]["status"], "ok");
    assert_eq!(body["new_node_ids"], json!([1, 2, 3, 4, 5]));

    let (_, tree) = call(&app, Method::GET, &format!("/trees/{id}"), None).await;
    let nodes = tree["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), 6);
    assert!(nodes[1..]
        .iter()
        .all(|n| n["level"] == 2 && n["parent"] == 0));
    assert_eq!(labels(&tree)[1..], CS_AREAS.map(String::from));

    let log =
        fs::read_to_string(dir.path().join("trees").join(&id).join("expansions.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);

    // A fresh server on the same store sees the same tree.
    let again = router(ServiceConfig::new(dir.path())).unwrap();
    let (_, reloaded) = call(&again, Method::GET, &format!("/trees/{id}"), None).await;
    assert_eq!(reloaded, tree);
}

#[tokio::test]
async fn level_five_node_cannot_be_expanded() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let doc = json!({
        "root": { "label": "A", "children": [
            { "label": "B", "children": [
                { "label": "C", "children": [
                    { "label": "D", "children": [ { "label": "E" } ] } ] } ] } ] }
    });
    let (status, body) = post_json(&app, "/trees", doc).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = body["tree_id"].as_str().unwrap();
    assert_eq!(body["tree"]["nodes"][4]["level"], 5);
    let (status, body) = post_json(
        &app,
        &format!("/trees/{id}/expand"),
        json!({ "node_id": 4, "strategy": "current" }),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");
    assert!(body["error"].as_str().unwrap().contains("depth exceeded"));
}

#[tokio::test]
async fn gateway_failure_is_502_and_record_is_kept() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = new_tree(&app, "Chemistry").await;
    let (status, body) = post_json(
        &app,
        &format!("/trees/{id}/expand"),
        json!({ "node_id": 0, "strategy": "root" }),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY, "{body}");
    assert_eq!(body["record"]["status"], "transport_error");
    assert!(body["error"]
        .as_str()
        .unwrap()
        .contains("List 5 subtopics of Chemistry."));

    let log =
        fs::read_to_string(dir.path().join("trees").join(&id).join("expansions.jsonl")).unwrap();
    let logged: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(logged["status"], "transport_error");
    let (_, tree) = call(&app, Method::GET, &format!("/trees/{id}"), None).await;
    assert_eq!(tree["nodes"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());

    let dup =
        json!({ "root": { "label": "A", "children": [ { "label": "x" }, { "label": " X " } ] } });
    let (status, body) = post_json(&app, "/trees", dup).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["violations"][0]["kind"], "duplicate_sibling");

    let (status, _) = call(
        &app,
        Method::POST,
        "/trees",
        Some(("application/json", "{".into())),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = call(&app, Method::GET, "/trees/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::GET, "/trees/..", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let id = new_tree(&app, "Physics").await;
    let expand = format!("/trees/{id}/expand");
    let (status, body) = post_json(
        &app,
        &expand,
        json!({ "node_id": 0, "strategy": "sideways" }),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    let (status, _) = post_json(
        &app,
        &expand,
        json!({ "node_id": 0, "strategy": "full", "k": 0 }),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post_json(&app, &expand, json!({ "node_id": 9, "strategy": "full" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = post_json(
        &app,
        &expand,
        json!({ "node_id": 0, "strategy": "full", "mode": "live" }),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("live mode"));
}

#[tokio::test]
async fn suite_documents_can_seed_a_tree() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let suite: Value = serde_json::from_str(&TestSuite::computer_science().to_json()).unwrap();
    let (status, body) = post_json(&app, "/trees", suite).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(
        body["tree"]["nodes"].as_array().unwrap().len(),
        TestSuite::computer_science().tree().len()
    );

    let (status, body) = call(&app, Method::GET, "/levels", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["levels"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn prune_removes_subtree_but_never_root() {
    let dir = tempfile::tempdir().unwrap();
    add_fixture(
        dir.path(),
        PromptStrategy::CurrentTopic,
        &["Computer Science"],
        &CS_AREAS,
    );
    let app = app(dir.path());
    let id = new_tree(&app, "Computer Science").await;
    post_json(
        &app,
        &format!("/trees/{id}/expand"),
        json!({ "node_id": 0, "strategy": "current" }),
    )
    .await;

    let (status, _) = call(&app, Method::DELETE, &format!("/trees/{id}/nodes/0"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, body) = call(&app, Method::DELETE, &format!("/trees/{id}/nodes/2"), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["removed"], 1);

    let (_, tree) = call(&app, Method::GET, &format!("/trees/{id}"), None).await;
    assert_eq!(
        labels(&tree),
        [
            "Computer Science",
            "Algorithms",
            "Networks",
            "Security",
            "Graphics"
        ]
    );
    let ids: Vec<u64> = tree["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|n| n["id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids, [0, 1, 3, 4, 5]);

    let (status, _) = call(&app, Method::DELETE, &format!("/trees/{id}/nodes/x"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::DELETE, &format!("/trees/{id}/nodes/77"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn concurrent_expansions_of_one_tree_both_land() {
    let dir = tempfile::tempdir().unwrap();
    let root = ["Computer Science"];
    add_fixture(
        dir.path(),
        PromptStrategy::RootPlusCurrent,
        &root,
        &CS_AREAS,
    );
    add_fixture(
        dir.path(),
        PromptStrategy::RootPlusCurrent,
        &["Computer Science", "Algorithms"],
        &["Sorting", "Searching"],
    );
    add_fixture(
        dir.path(),
        PromptStrategy::RootPlusCurrent,
        &["Computer Science", "Graphics"],
        &["Ray Tracing", "Shading"],
    );
    let app = app(dir.path());
    let id = new_tree(&app, "Computer Science").await;
    let uri = format!("/trees/{id}/expand");
    post_json(&app, &uri, json!({ "node_id": 0, "strategy": "root" })).await;

    // Lenient policy keeps the short lists.
    let (a, b) = tokio::join!(
        post_json(&app, &uri, json!({ "node_id": 1, "strategy": "root" })),
        post_json(&app, &uri, json!({ "node_id": 5, "strategy": "root" })),
    );
    assert_eq!(a.0, StatusCode::OK, "{}", a.1);
    assert_eq!(b.0, StatusCode::OK, "{}", b.1);
    assert_eq!(a.1["record"]["status"], "count_mismatch");

    let (_, tree) = call(&app, Method::GET, &format!("/trees/{id}"), None).await;
    assert_eq!(tree["nodes"].as_array().unwrap().len(), 10);

    // Strict policy keeps nothing from a short list.
    let (status, body) = post_json(
        &app,
        &uri,
        json!({ "node_id": 0, "strategy": "root", "count_policy": "strict" }),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["new_node_ids"], json!([]));
}

/// A one-target run (3 records of 5 subtopics) in `<store>/runs`.
fn seed_run(store: &Path) -> String {
    let suite = TestSuite::lone_root("tiny", "Computer Science").unwrap();
    for s in PromptStrategy::ALL {
        add_fixture(store, s, &["Computer Science"], &CS_AREAS);
    }
    let fixtures = Arc::new(FixtureStore::open(store.join(FIXTURES_DIR)).unwrap());
    let runs = RunStore::open(store.join(RUNS_DIR)).unwrap();
    let out = run_experiment(
        &suite,
        &ExperimentConfig::default(),
        &Gateway::replay(fixtures),
        &runs,
    )
    .unwrap();
    out.manifest.run_id
}

fn annotation_csv(run: &Value, annotator: &str, label: impl Fn(usize) -> &'static str) -> String {
    let mut text = String::from("record_id,subtopic_index,annotator_id,label\n");
    for r in run["records"].as_array().unwrap() {
        for i in 0..r["subtopics"].as_array().unwrap().len() {
            text += &format!(
                "{},{i},{annotator},{}\n",
                r["record_id"].as_str().unwrap(),
                label(i)
            );
        }
    }
    text
}

#[tokio::test]
async fn annotate_and_report_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let run_id = seed_run(dir.path());
    let app = app(dir.path());

    let (status, runs) = call(&app, Method::GET, "/runs", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(runs[0]["run_id"], run_id.as_str());
    let (status, run) = call(&app, Method::GET, &format!("/runs/{run_id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(run["records"].as_array().unwrap().len(), 3);
    let (status, _) = call(&app, Method::GET, "/runs/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let annotations = format!("/runs/{run_id}/annotations");
    let report = format!("/runs/{run_id}/report");
    let first = run["records"][0]["record_id"].as_str().unwrap();

    let bad = json!([{ "record_id": first, "subtopic_index": 0, "annotator_id": "a1", "label": "TooBroad" }]);
    let (status, body) = call(
        &app,
        Method::PUT,
        &annotations,
        Some(("application/json", bad.to_string())),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(
        body["error"].as_str().unwrap().contains("TooBroad"),
        "{body}"
    );

    let (status, body) = call(&app, Method::GET, &report, None).await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");

    // One label short of complete.
    let partial = json!({ "annotations": [{ "record_id": first, "subtopic_index": 0, "annotator_id": "a1", "label": "Good" }] });
    let (status, body) = call(
        &app,
        Method::PUT,
        &annotations,
        Some(("application/json", partial.to_string())),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["upserted"], 1);
    let (status, body) = call(&app, Method::GET, &report, None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["missing"].as_array().unwrap().len(), 14);

    let csv = annotation_csv(&run, "a1", |i| if i < 3 { "Good" } else { "TooGeneral" });
    let (status, body) = call(&app, Method::PUT, &annotations, Some(("text/csv", csv))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["upserted"], 15);
    assert_eq!(body["total"], 15);

    let (status, body) = call(&app, Method::GET, &report, None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["strategies"].as_array().unwrap().len(), 3);
    assert!((body["strategies"][0]["accuracy"].as_f64().unwrap() - 0.6).abs() < 1e-12);
    assert!(body["agreement"].is_null());

    let csv = annotation_csv(&run, "a2", |i| if i < 3 { "Good" } else { "TooGeneral" });
    call(&app, Method::PUT, &annotations, Some(("text/csv", csv))).await;
    let (_, body) = call(&app, Method::GET, &report, None).await;
    assert!((body["agreement"]["average_kappa"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let (status, _) = call(
        &app,
        Method::PUT,
        "/runs/missing/annotations",
        Some((
            "text/csv",
            "record_id,subtopic_index,annotator_id,label\n".into(),
        )),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn static_ui_is_served_when_configured() {
    let dir = tempfile::tempdir().unwrap();
    let ui = dir.path().join("ui");
    fs::create_dir_all(&ui).unwrap();
    fs::write(ui.join("index.html"), "<html>scopetree</html>").unwrap();
    let mut config = ServiceConfig::new(dir.path().join("store"));
    config.ui_dir = Some(ui);
    let app = router(config).unwrap();
    let (status, body) = call(&app, Method::GET, "/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, "<html>scopetree</html>");
    let (status, _) = call(&app, Method::GET, "/trees", None).await;
    assert_eq!(status, StatusCode::OK);
}
