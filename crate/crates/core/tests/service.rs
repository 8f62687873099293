mod common;

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use contactsense::audio::smoothed_envelope;
use contactsense::segmentation::{ContactSegment, ReviewState, SegmentDocument, SegmentKind};
use contactsense::service::{router, AppState, ErrorBody, REVIEW_LOG};
use contactsense::workspace::{segment_recording, ProjectConfig, Workspace};
use contactsense::ContactClass;

fn setup() -> (tempfile::TempDir, Workspace) {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path().join("ws"));
    ws.create().unwrap();
    common::write_trial(
        &ws.trials_dir(),
        "t1",
        ContactClass::Twig,
        contactsense::dataset::Embodiment::Probe,
        11,
        true,
    );
    (dir, ws)
}

fn app(ws: &Workspace) -> Router {
    router(
        Arc::new(AppState::new(ws.clone(), ProjectConfig::default())),
        None,
    )
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
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

async fn json_call(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn contact_ids(detail: &Value) -> Vec<u64> {
    detail["session"]["segments"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|s| s["segment_id"].as_u64())
        .collect()
}

#[tokio::test]
async fn unknown_trial_is_404() {
    let (_d, ws) = setup();
    let app = app(&ws);
    let (s, body) = json_call(&app, "GET", "/trials/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("nope"));
    let (s, _) = call(&app, "GET", "/trials/t1/frames/123.png", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(
        &app,
        "POST",
        "/trials/t1/segments/99/review",
        Some(json!({"action": "accept"})),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn listing_detail_envelope_and_frames() {
    let (_d, ws) = setup();
    let app = app(&ws);
    let (s, list) = json_call(&app, "GET", "/trials", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list[0]["trial_id"], "t1");
    assert_eq!(list[0]["declared_class"], "twig");
    assert_eq!(list[0]["n_frames"], 40);

    let (s, detail) = json_call(&app, "GET", "/trials/t1", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(contact_ids(&detail), vec![0, 1]);
    assert!((detail["duration_s"].as_f64().unwrap() - common::TRIAL_SECONDS).abs() < 1e-9);

    let (s, env) = json_call(&app, "GET", "/trials/t1/envelope?points=100", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(env["points"].as_array().unwrap().len() <= 100);
    for bad in ["0", "4001"] {
        let (s, body) = json_call(
            &app,
            "GET",
            &format!("/trials/t1/envelope?points={bad}"),
            None,
        )
        .await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(body["fields"], json!(["points"]));
    }

    let (s, frames) = json_call(&app, "GET", "/trials/t1/frames?from=1.0&to=2.0", None).await;
    assert_eq!(s, StatusCode::OK);
    let frames = frames.as_array().unwrap();
    assert_eq!(frames.len(), 6);
    let url = frames[0]["url"].as_str().unwrap();
    let resp = app
        .clone()
        .oneshot(Request::get(url).body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "image/png");
}

#[tokio::test]
async fn resegment_matches_cli_bytes() {
    let (_d, ws) = setup();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_contactsense"))
        .arg("--workspace")
        .arg(ws.root())
        .args([
            "segment",
            "--trial",
            "t1",
            "--alpha",
            "0.3",
            "--beta",
            "0.75",
            "--delta-min",
            "1.0",
            "--gamma",
            "0.5",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let cli_bytes = std::fs::read_to_string(ws.segments_path("t1")).unwrap();

    let app = app(&ws);
    let body = json!({"alpha": 0.3, "beta": 0.75, "delta_min": 1.0, "gamma_squeeze": 0.5});
    let (s, bytes) = call(&app, "POST", "/trials/t1/resegment", Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    let doc: SegmentDocument = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(doc.to_json().unwrap(), cli_bytes);

    let alt = json!({"alpha": 0.5, "min_ambient": 0.5});
    let (s, bytes) = call(&app, "POST", "/trials/t1/resegment", Some(alt)).await;
    assert_eq!(s, StatusCode::OK);
    let doc: SegmentDocument = serde_json::from_slice(&bytes).unwrap();
    let trial = ws.open_trial("t1").unwrap();
    let mut p = contactsense::segmentation::SegmentationParams::default();
    p.alpha_offset = 0.5;
    p.min_ambient_seconds = 0.5;
    let (_, lib) = segment_recording(&trial, &p, &Default::default()).unwrap();
    assert_eq!(doc.to_json().unwrap(), lib.to_json().unwrap());
}

#[tokio::test]
async fn invalid_params_name_every_field() {
    let (_d, ws) = setup();
    let app = app(&ws);
    let (s, body) = json_call(
        &app,
        "POST",
        "/trials/t1/resegment",
        Some(json!({"alpha": 2.0, "beta": 0.0})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let body: ErrorBody = serde_json::from_value(body).unwrap();
    assert_eq!(body.fields, vec!["alpha", "beta"]);
    let (s, _) = call(&app, "POST", "/trials/nope/resegment", Some(json!({}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn bounds_edits_are_validated_server_side() {
    let (_d, ws) = setup();
    let app = app(&ws);
    let review = |id: u64, body: Value| {
        let app = app.clone();
        async move {
            json_call(
                &app,
                "POST",
                &format!("/trials/t1/segments/{id}/review"),
                Some(body),
            )
            .await
        }
    };
    let (s, body) = review(
        0,
        json!({"action": "adjust_bounds", "start_s": 1.6, "end_s": 2.2}),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(
        body["error"].as_str().unwrap().contains("delta_min"),
        "{body}"
    );
    let (s, body) = review(
        0,
        json!({"action": "adjust_bounds", "start_s": 1.6, "end_s": 5.5}),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(
        body["error"].as_str().unwrap().contains("overlap"),
        "{body}"
    );
    let (s, body) = review(
        0,
        json!({"action": "adjust_bounds", "start_s": 3.0, "end_s": 2.0}),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["fields"], json!(["start_s", "end_s"]));
    let (s, body) = review(1, json!({"action": "relabel", "label": "ambient"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["fields"], json!(["label"]));

    let (s, seg) = review(
        0,
        json!({"action": "adjust_bounds", "start_s": 1.4, "end_s": 3.6}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(seg["review_state"], "edited");
    assert_eq!(seg["start_s"], 1.4);
    let (s, seg) = review(1, json!({"action": "relabel", "label": "trunk"})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(seg["label"], "trunk");
}

/// Maximal runs of frames at or below `t_noncontact`, at least
/// `min_ambient` long, clamped to the trial.
fn ambient_oracle(
    values: &[f64],
    hop: f64,
    t_noncontact: f64,
    min_ambient: f64,
    duration: f64,
) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut k = 0;
    while k < values.len() {
        if values[k] <= t_noncontact {
            let s = k;
            while k < values.len() && values[k] <= t_noncontact {
                k += 1;
            }
            let (a, b) = (s as f64 * hop, (k as f64 * hop).min(duration));
            if b - a >= min_ambient - 1e-9 {
                out.push((a, b));
            }
        } else {
            k += 1;
        }
    }
    out
}

#[tokio::test]
async fn reject_all_export_has_only_ambient() {
    let (_d, ws) = setup();
    let app = app(&ws);
    let (_, detail) = json_call(&app, "GET", "/trials/t1", None).await;
    for id in contact_ids(&detail) {
        let (s, seg) = json_call(
            &app,
            "POST",
            &format!("/trials/t1/segments/{id}/review"),
            Some(json!({"action": "reject"})),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(seg["review_state"], "rejected");
    }
    let (s, exported) = json_call(&app, "POST", "/trials/t1/export", None).await;
    assert_eq!(s, StatusCode::OK);
    let doc: SegmentDocument = serde_json::from_value(exported["document"].clone()).unwrap();
    assert!(doc.segments.iter().all(|s| s.kind == SegmentKind::Ambient));
    doc.check_invariants().unwrap();
    let on_disk = std::fs::read_to_string(ws.segments_path("t1")).unwrap();
    assert_eq!(on_disk, doc.to_json().unwrap());

    let trial = ws.open_trial("t1").unwrap();
    let audio = trial.load_audio().unwrap();
    let env = smoothed_envelope(&audio, 0.05, 0.01).unwrap();
    let expected = ambient_oracle(
        &env.values,
        env.hop_seconds,
        doc.thresholds.t_noncontact,
        doc.params.min_ambient,
        audio.duration_seconds(),
    );
    let got: Vec<(f64, f64)> = doc
        .segments
        .iter()
        .map(|s| (s.start_seconds, s.end_seconds))
        .collect();
    assert_eq!(got.len(), expected.len());
    for (g, e) in got.iter().zip(&expected) {
        assert!(
            (g.0 - e.0).abs() < 1e-9 && (g.1 - e.1).abs() < 1e-9,
            "{g:?} vs {e:?}"
        );
    }
    // Contacts no longer block ambient mining, so the quiet stretches
    // between the two bursts are still separate but nothing is contact.
    assert!(got.len() >= 3);
}

#[tokio::test]
async fn session_replays_after_restart_and_torn_tail() {
    let (_d, ws) = setup();
    let before = {
        let app = app(&ws);
        json_call(
            &app,
            "POST",
            "/trials/t1/segments/0/review",
            Some(json!({"action": "accept"})),
        )
        .await;
        json_call(
            &app,
            "POST",
            "/trials/t1/segments/1/review",
            Some(json!({"action": "relabel", "label": "leaf"})),
        )
        .await;
        json_call(&app, "GET", "/trials/t1", None).await.1
    };
    let log_path = ws.reviews_dir().join("t1").join(REVIEW_LOG);
    let clean = std::fs::read(&log_path).unwrap();
    let mut torn = clean.clone();
    torn.extend_from_slice(br#"{"seq":4,"event":"review","segment_id":0,"act"#);
    std::fs::write(&log_path, &torn).unwrap();

    let app = app(&ws);
    let (s, after) = json_call(&app, "GET", "/trials/t1", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(after["session"], before["session"]);
    assert_eq!(std::fs::read(&log_path).unwrap(), clean);
    let segs: Vec<ContactSegment> =
        serde_json::from_value(after["session"]["segments"].clone()).unwrap();
    let contacts: Vec<&ContactSegment> = segs
        .iter()
        .filter(|s| s.kind == SegmentKind::Contact)
        .collect();
    assert_eq!(contacts[0].review_state, ReviewState::Accepted);
    assert_eq!(contacts[1].label, Some(ContactClass::Leaf));

    let (s, _) = json_call(
        &app,
        "POST",
        "/trials/t1/segments/0/review",
        Some(json!({"action": "reject"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_resegments_supersede() {
    let (_d, ws) = setup();
    let app = app(&ws);
    json_call(&app, "GET", "/trials/t1", None).await;
    let alphas = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    let handles: Vec<_> = alphas
        .iter()
        .map(|&a| {
            let app = app.clone();
            tokio::spawn(async move {
                let (s, _) = call(
                    &app,
                    "POST",
                    "/trials/t1/resegment",
                    Some(json!({"alpha": a})),
                )
                .await;
                (a, s)
            })
        })
        .collect();
    let mut ok = Vec::new();
    for h in handles {
        let (a, s) = h.await.unwrap();
        assert!(s == StatusCode::OK || s == StatusCode::CONFLICT, "{s}");
        if s == StatusCode::OK {
            ok.push(a);
        }
    }
    assert!(!ok.is_empty());
    let (_, detail) = json_call(&app, "GET", "/trials/t1", None).await;
    let alpha = detail["session"]["params"]["alpha"].as_f64().unwrap();
    assert!(ok.contains(&alpha), "{alpha} not in {ok:?}");
}

#[tokio::test]
async fn static_ui_is_served_as_fallback() {
    let (d, ws) = setup();
    let ui = d.path().join("ui");
    std::fs::create_dir_all(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<html>review</html>").unwrap();
    let app = router(
        Arc::new(AppState::new(ws.clone(), ProjectConfig::default())),
        Some(ui.clone()),
    );
    let (s, body) = call(&app, "GET", "/index.html", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, b"<html>review</html>");
    let (s, _) = call(&app, "GET", "/trials", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(Path::new(&ui).exists());
}
