//! Drives the service router in-process: launches a run on the reference
//! setup, raises `lambda_cls` mid-run, long-polls for new metrics, then stops
//! the run. `distmorph serve` exposes the same router over TCP.
//!
//! ```text
//! cargo run --release --example steering_service -- reference_root
//! ```

use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request};
use axum::Router;
use distmorph::fsutil::read_json;
use distmorph::reference::ReferenceArtifacts;
use distmorph::service::{router, ServiceState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, path: &str, body: Option<Value>) -> Value {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header(header::CONTENT_TYPE, "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .expect("request");
    let resp = app.clone().oneshot(req).await.expect("router is infallible");
    let status = resp.status();
    let bytes = resp.into_body().collect().await.expect("body").to_bytes();
    let text = String::from_utf8_lossy(&bytes);
    println!("{method} {path} -> {status}\n  {}", text.chars().take(240).collect::<String>());
    serde_json::from_slice(&bytes).unwrap_or(Value::Null)
}

#[tokio::main]
async fn main() -> distmorph::Result<()> {
    let root = std::path::PathBuf::from(std::env::args().nth(1).expect("usage: steering_service reference_root"));
    let refs: ReferenceArtifacts = read_json(&root.join("reference.json"))?;
    let runs = root.join("service-runs");
    let _ = std::fs::remove_dir_all(runs.join("steered"));
    let app = router(ServiceState::new(runs)?);

    let mut cfg = refs.morph_config("steered");
    cfg.max_iterations = 100_000;
    cfg.eval_oracle_ckpt = None;
    call(&app, "POST", "/api/runs", Some(serde_json::to_value(&cfg)?)).await;
    tokio::time::sleep(Duration::from_secs(2)).await;
    let steer = json!({"kind": "set_lambdas", "payload": {"lambda_cls": 3.0}});
    let ack = call(&app, "POST", "/api/runs/steered/steer", Some(steer)).await;
    let after = ack["command"]["issued_at_iteration"].as_u64().unwrap_or(0);
    let batch = call(&app, "GET", &format!("/api/runs/steered/events?mode=poll&after={after}&timeout_ms=5000"), None).await;
    let applied = batch["metrics"]
        .as_array()
        .and_then(|m| m.iter().find(|r| r["steering"].as_array().is_some_and(|s| !s.is_empty())));
    if let Some(r) = applied {
        println!("steering applied: record {} ran with lambda_cls {}, event {}", r["iteration"], r["lambda_cls"], r["steering"][0]);
    }
    call(&app, "POST", "/api/runs/steered/stop", None).await;
    tokio::time::sleep(Duration::from_secs(1)).await;
    let desc = call(&app, "GET", "/api/runs/steered", None).await;
    println!("final state {} at iteration {}", desc["status"]["state"], desc["status"]["iteration"]);
    Ok(())
}
