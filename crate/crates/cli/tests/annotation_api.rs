use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use docrepair::pipeline::annotation::{build_tasks, Aggregate, AnnotationTask, TaskStore};
use docrepair_cli::server::router;
use serde_json::{json, Value};
use tower::ServiceExt;

fn tasks(n: usize) -> Vec<AnnotationTask> {
    let s: Vec<Vec<String>> = (0..n).map(|i| vec![format!("src {i}")]).collect();
    let b: Vec<Vec<String>> = (0..n).map(|i| vec![format!("base {i}")]).collect();
    let r: Vec<Vec<String>> = (0..n).map(|i| vec![format!("rep {i}")]).collect();
    build_tasks(&s, &b, &r, 11)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

fn repaired_choice(task: &Value) -> &'static str {
    if task["a"][0].as_str().unwrap().starts_with("rep") {
        "A"
    } else {
        "B"
    }
}

#[tokio::test]
async fn tasks_are_served_blind() {
    let app = router(TaskStore::in_memory(tasks(3)), None);
    let (st, t) = call(&app, "GET", "/api/tasks/next?annotator=ann", None).await;
    assert_eq!(st, StatusCode::OK);
    let keys: Vec<&String> = t.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["a", "b", "id", "source"]);
    assert!(!t.to_string().contains("origin"));
    let (st, _) = call(&app, "GET", "/api/tasks/next", None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn judgments_are_immutable_and_aggregated() {
    let app = router(TaskStore::in_memory(tasks(4)), None);
    let (_, s0) = call(&app, "GET", "/api/stats", None).await;
    let s0: Aggregate = serde_json::from_value(s0).unwrap();
    assert_eq!((s0.total, s0.judged, s0.pct_equal, s0.decided_preference), (4, 0, 0.0, 0.0));

    let mut plan = vec!["repaired", "repaired", "baseline", "equal"].into_iter();
    loop {
        let (st, t) = call(&app, "GET", "/api/tasks/next?annotator=ann", None).await;
        if st == StatusCode::NO_CONTENT {
            break;
        }
        let id = t["id"].as_str().unwrap().to_string();
        let choice = match plan.next().unwrap() {
            "repaired" => repaired_choice(&t),
            "baseline" => if repaired_choice(&t) == "A" { "B" } else { "A" },
            _ => "equal",
        };
        let uri = format!("/api/tasks/{id}/judgment");
        let (st, _) = call(&app, "POST", &uri, Some(json!({"annotator": "ann", "choice": choice}))).await;
        assert_eq!(st, StatusCode::CREATED);
        let (st, _) = call(&app, "POST", &uri, Some(json!({"annotator": "ann", "choice": "A"}))).await;
        assert_eq!(st, StatusCode::CONFLICT);
    }
    let (_, s) = call(&app, "GET", "/api/stats", None).await;
    let s: Aggregate = serde_json::from_value(s).unwrap();
    assert_eq!((s.repaired_better, s.baseline_better, s.equal, s.pending), (2, 1, 1, 0));
    assert!((s.decided_preference - 200.0 / 3.0).abs() < 1e-9);
    let (_, e) = call(&app, "GET", "/api/export", None).await;
    assert_eq!(e.as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn bad_submissions_are_rejected() {
    let ts = tasks(2);
    let id = ts[0].id.clone();
    let app = router(TaskStore::in_memory(ts), None);
    let (st, _) = call(&app, "POST", "/api/tasks/nope/judgment", Some(json!({"annotator": "x", "choice": "A"}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let uri = format!("/api/tasks/{id}/judgment");
    for body in [json!({"annotator": "x", "choice": "C"}), json!({"choice": "A"}), json!({"annotator": "", "choice": "A"})] {
        let (st, _) = call(&app, "POST", &uri, Some(body)).await;
        assert_eq!(st, StatusCode::BAD_REQUEST);
    }
}

#[tokio::test]
async fn judgments_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("judgments.jsonl");
    let ts = tasks(3);
    let id = ts[1].id.clone();
    {
        let app = router(TaskStore::open(ts.clone(), &path).unwrap(), None);
        let (st, _) = call(&app, "POST", &format!("/api/tasks/{id}/judgment"), Some(json!({"annotator": "x", "choice": "equal"}))).await;
        assert_eq!(st, StatusCode::CREATED);
    }
    let app = router(TaskStore::open(ts, &path).unwrap(), None);
    let (st, _) = call(&app, "POST", &format!("/api/tasks/{id}/judgment"), Some(json!({"annotator": "y", "choice": "A"}))).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (_, s) = call(&app, "GET", "/api/stats", None).await;
    assert_eq!(s["equal"], 1);
}

#[tokio::test]
async fn static_route_serves_files_only_inside_root() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>ui</html>").unwrap();
    let app = router(TaskStore::in_memory(tasks(1)), Some(dir.path().to_path_buf()));
    let resp = app.clone().oneshot(Request::get("/").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/html; charset=utf-8");
    let resp = app.clone().oneshot(Request::get("/../Cargo.toml").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
}
