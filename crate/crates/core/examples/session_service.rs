//! Drives the HTTP session API in-process: create a session, send inputs,
//! fetch the report and the health document.
//!
//! cargo run --release --example session_service

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use tower::ServiceExt;
use virtdoc::artifact::{sha256_hex, LoadedArtifact};
use virtdoc::dataset::{generate_synthetic_cohort, FeatureSet};
use virtdoc::pipeline::{train_artifact, TrainOptions};
use virtdoc::service::{router, AppState, SessionStore};

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<&str>) -> serde_json::Value {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    println!("{method} {uri} -> {status}");
    v
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cohort = generate_synthetic_cohort(2000, 2, false)?;
    let mut opts = TrainOptions::new(FeatureSet::Basic, 2);
    opts.network.epochs = 40;
    let (artifact, _) = train_artifact(&cohort, &opts)?;
    let hash = sha256_hex(artifact.to_json().as_bytes());
    let app = router(Arc::new(AppState::new(Some(LoadedArtifact { artifact, hash }), SessionStore::in_memory())));

    let created = call(&app, "POST", "/api/sessions", None).await;
    let id = created["id"].as_str().unwrap().to_string();
    let inputs = [
        r#"{"utterance":"hi"}"#,
        r#"{"utterance":"male"}"#,
        r#"{"utterance":"47"}"#,
        r#"{"frame":"W:51.3:50.9"}"#,
        r#"{"frame":"U:1530"}"#,
        r#"{"utterance":"yes"}"#,
        r#"{"utterance":"no"}"#,
        r#"{"utterance":"four"}"#,
        r#"{"utterance":"two"}"#,
    ];
    for body in inputs {
        let v = call(&app, "POST", &format!("/api/sessions/{id}/input"), Some(body)).await;
        println!("  stage {}  prompt {:?}", v["stage"], v["prompt"]);
    }
    let report = call(&app, "GET", &format!("/api/sessions/{id}/report"), None).await;
    println!("  decision {}  adjusted {:.3}", report["decision"], report["adjusted_probability"].as_f64().unwrap());
    let health = call(&app, "GET", "/api/health", None).await;
    println!("{}", serde_json::to_string_pretty(&health)?);
    Ok(())
}
