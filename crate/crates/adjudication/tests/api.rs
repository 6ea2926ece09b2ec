use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use labelcraft::annotation::{cohen_kappa, Annotation, Label};
use labelcraft::corpus::{write_corpus, Message, Source};
use labelcraft_adjudication::store::{LOG_FILE, DEFAULT_SNAPSHOT_EVERY};
use labelcraft_adjudication::{router, serve_on, Service, ServiceOptions, StateConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

/// Ten split items. q0..q8 have a clear crowd plurality (A); q9 is tied.
const CROWD: [(&str, &str); 12] = [
    ("q0", "AAADD"),
    ("q1", "AAADB"),
    ("q2", "AAACD"),
    ("q3", "AAABB"),
    ("q4", "AAADD"),
    ("q5", "AAACC"),
    ("q6", "AAADB"),
    ("q7", "AAADD"),
    ("q8", "AAADD"),
    ("q9", "BBCCD"),
    ("u0", "AAAAA"),
    ("u1", "DDDDD"),
];

fn write_inputs(dir: &Path) -> ServiceOptions {
    let mut anns = Vec::new();
    let mut msgs = Vec::new();
    for (id, labels) in CROWD {
        for (w, c) in labels.chars().enumerate() {
            anns.push(Annotation::crowd(id, &format!("w{w}"), c.to_string().parse().unwrap()));
        }
        msgs.push(Message::new(id, format!("message {id} from @someone"), Source::Synthetic));
    }
    write_corpus(&dir.join("corpus.jsonl"), &msgs).unwrap();
    let text: String = anns.iter().map(|a| a.to_json_line() + "\n").collect();
    fs::write(dir.join("annotations.jsonl"), text).unwrap();
    ServiceOptions {
        corpus_path: dir.join("corpus.jsonl"),
        annotations_path: dir.join("annotations.jsonl"),
        state_dir: dir.join("state"),
        state: StateConfig::default(),
        snapshot_every: DEFAULT_SNAPSHOT_EVERY,
    }
}

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, String) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, String) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_label(app: &axum::Router, item: &str, expert: &str, label: &str) -> (StatusCode, Value) {
    let req = Request::post(format!("/api/items/{item}/labels"))
        .header("content-type", "application/json")
        .body(Body::from(json!({ "expert": expert, "label": label }).to_string()))
        .unwrap();
    let (status, body) = call(app, req).await;
    (status, serde_json::from_str(&body).unwrap_or(Value::Null))
}

#[tokio::test]
async fn ten_item_session_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = write_inputs(tmp.path());
    let svc = Arc::new(Service::open(&opts).unwrap());
    let app = router(svc.clone(), None);

    // q0..q6 agree, q7 and q8 disagree over an A plurality, q9 disagrees
    // over a tied crowd.
    let plan: Vec<(&str, &str, &str)> = vec![
        ("q0", "A", "A"),
        ("q1", "A", "A"),
        ("q2", "B", "B"),
        ("q3", "A", "A"),
        ("q4", "D", "D"),
        ("q5", "A", "A"),
        ("q6", "C", "C"),
        ("q7", "A", "D"),
        ("q8", "B", "A"),
        ("q9", "B", "C"),
    ];
    let mut r1 = BTreeMap::new();
    let mut r2 = BTreeMap::new();
    for (item, a, b) in &plan {
        for (expert, label) in [("expert1", a), ("expert2", b)] {
            let (_, next) = get(&app, &format!("/api/queue/next?expert={expert}")).await;
            let next: Value = serde_json::from_str(&next).unwrap();
            assert_eq!(next["item_id"], json!(item), "served in id order");
            assert!(next.get("crowd_distribution").is_none(), "crowd votes hidden by default");
            let (status, _) = post_label(&app, item, expert, label).await;
            assert_eq!(status, StatusCode::OK);
        }
        r1.insert(item.to_string(), a.parse::<Label>().unwrap());
        r2.insert(item.to_string(), b.parse::<Label>().unwrap());
    }

    let (status, body) = get(&app, "/api/queue/next?expert=expert1").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap(), json!({ "done": true }));

    let resp = app
        .clone()
        .oneshot(Request::get("/api/export?dropped=true").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.headers()["content-type"], "text/csv; charset=utf-8");
    let csv = String::from_utf8(resp.into_body().collect().await.unwrap().to_bytes().to_vec()).unwrap();
    let count = |p: &str| csv.lines().filter(|l| l.ends_with(&format!(",{p}"))).count();
    assert_eq!(csv.lines().next(), Some("item_id,label,provenance"));
    assert_eq!((count("R1U"), count("R2U"), count("R2S"), count("dropped")), (2, 7, 2, 1));
    assert!(csv.contains("q7,A,R2S") && csv.contains("q8,A,R2S") && csv.contains("q9,,dropped"));

    let (_, stats) = get(&app, "/api/stats").await;
    let stats: Value = serde_json::from_str(&stats).unwrap();
    let expected = cohen_kappa(&r1, &r2).unwrap().kappa;
    assert!((stats["kappa"].as_f64().unwrap() - expected).abs() < 1e-12);
    assert_eq!(stats["progress"], json!({"total": 10, "pending": 0, "half_labeled": 0, "resolved": 9, "dropped": 1}));
    assert_eq!(stats["by_provenance"], json!({"R2U": 7, "R2S": 2}));
}

#[tokio::test]
async fn error_statuses() {
    let tmp = tempfile::tempdir().unwrap();
    let app = router(Arc::new(Service::open(&write_inputs(tmp.path())).unwrap()), None);

    assert_eq!(get(&app, "/api/queue/next?expert=mallory").await.0, StatusCode::FORBIDDEN);
    assert_eq!(post_label(&app, "q0", "mallory", "A").await.0, StatusCode::FORBIDDEN);
    assert_eq!(post_label(&app, "nope", "expert1", "A").await.0, StatusCode::NOT_FOUND);
    assert_eq!(post_label(&app, "u0", "expert1", "A").await.0, StatusCode::NOT_FOUND, "unanimous items are not queued");
    assert_eq!(post_label(&app, "q0", "expert1", "Z").await.0, StatusCode::BAD_REQUEST);

    assert_eq!(post_label(&app, "q0", "expert1", "A").await.0, StatusCode::OK);
    let (status, body) = post_label(&app, "q0", "expert1", "B").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("already labeled"));

    let (status, body) = post_label(&app, "q0", "expert1", "A").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["outcome"], json!("recorded"));

    post_label(&app, "q0", "expert2", "A").await;
    assert_eq!(post_label(&app, "q0", "expert2", "D").await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn crowd_counts_when_enabled() {
    let tmp = tempfile::tempdir().unwrap();
    let mut opts = write_inputs(tmp.path());
    opts.state.show_crowd = true;
    let app = router(Arc::new(Service::open(&opts).unwrap()), None);
    let (_, body) = get(&app, "/api/queue/next?expert=expert2").await;
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["crowd_distribution"], json!({"A": 3, "B": 0, "C": 0, "D": 2}));
    assert_eq!(v["anon_text"], json!("message q0 from @SOMEONE"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_submissions_store_one_event() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = write_inputs(tmp.path());
    let app = router(Arc::new(Service::open(&opts).unwrap()), None);
    let tasks: Vec<_> = (0..16)
        .map(|_| {
            let app = app.clone();
            tokio::spawn(async move { post_label(&app, "q3", "expert2", "B").await.0 })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let log = fs::read_to_string(opts.state_dir.join(LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[tokio::test]
async fn restart_loses_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = write_inputs(tmp.path());
    let before = {
        let svc = Service::open(&opts).unwrap();
        svc.submit("expert1", "q0", Label::A).unwrap();
        svc.submit("expert2", "q0", Label::A).unwrap();
        svc.submit("expert1", "q1", Label::B).unwrap();
        svc.snapshot_state()
        // Dropped without persisting to the annotations file: a crash.
    };
    let svc = Service::open(&opts).unwrap();
    assert_eq!(svc.snapshot_state(), before);
    // Labels are still write-once after the restart.
    assert!(svc.submit("expert1", "q1", Label::C).is_err());
}

#[tokio::test]
async fn shutdown_without_input_leaves_annotations_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = write_inputs(tmp.path());
    let original = fs::read(&opts.annotations_path).unwrap();
    let svc = Arc::new(Service::open(&opts).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let added = serve_on(listener, svc, None, async {}).await.unwrap();
    assert_eq!(added, 0);
    assert_eq!(fs::read(&opts.annotations_path).unwrap(), original);
}

#[tokio::test]
async fn shutdown_appends_one_pair_and_restart_is_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = write_inputs(tmp.path());
    let original = fs::read_to_string(&opts.annotations_path).unwrap();
    let svc = Arc::new(Service::open(&opts).unwrap());
    svc.submit("expert1", "q2", Label::C).unwrap();
    svc.submit("expert2", "q2", Label::C).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    assert_eq!(serve_on(listener, svc.clone(), None, async {}).await.unwrap(), 2);

    let after = fs::read_to_string(&opts.annotations_path).unwrap();
    assert!(after.starts_with(&original));
    assert_eq!(after.lines().count(), original.lines().count() + 2);
    let tail: Vec<Annotation> = after.lines().skip(original.lines().count()).map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(tail, vec![Annotation::expert("q2", "expert1", Label::C), Annotation::expert("q2", "expert2", Label::C)]);

    // The file now holds the labels and the log replays them again.
    let reopened = Service::open(&opts).unwrap();
    assert_eq!(reopened.stats(), svc.stats());
    assert_eq!(reopened.persist_annotations().unwrap(), 0);
}

#[tokio::test]
async fn static_bundle_is_served_at_root() {
    let tmp = tempfile::tempdir().unwrap();
    let ui = tmp.path().join("ui");
    fs::create_dir(&ui).unwrap();
    fs::write(ui.join("index.html"), "<html>adjudicate</html>").unwrap();
    let app = router(Arc::new(Service::open(&write_inputs(tmp.path())).unwrap()), Some(ui));
    let (status, body) = get(&app, "/").await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.contains("adjudicate"));
    assert_eq!(get(&app, "/api/stats").await.0, StatusCode::OK);
}
