#![allow(dead_code)]

use std::sync::Arc;

use arrowrl_cli::scoring::Scorer;
use arrowrl_cli::service::{router, AppState};
use arrowrl_core::classify::{Classifier, RuleBasedClassifier};
use arrowrl_core::policysim::derive_seed;
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub fn app(max_batch: usize) -> Router {
    app_with(max_batch, Arc::new(RuleBasedClassifier::default()))
}

pub fn app_with(max_batch: usize, classifier: Arc<dyn Classifier>) -> Router {
    router(AppState {
        scorer: Scorer::new(0.5, RuleBasedClassifier::default()),
        classifier,
        max_batch,
    })
}

pub async fn call(app: &Router, method: &str, path: &str, body: String) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

/// Uniform draw in [0, 1) keyed by `(i, k)`.
fn unit(i: usize, k: u64) -> f64 {
    (derive_seed(i as u64, &[k]) >> 11) as f64 / (1u64 << 53) as f64
}

fn answer(start: f64, end: f64) -> String {
    format!("<think>looking</think> <answer> <{start:.2} to {end:.2}> </answer>")
}

/// A valid scoring request exercising a different path for each residue of `i`.
pub fn score_request(i: usize) -> Value {
    let duration = 20.0 + (unit(i, 0) * 80.0).round();
    let len = 2.0 + (unit(i, 1) * (duration / 2.0)).round();
    let start = (unit(i, 2) * (duration - len)).round();
    let end = start + len;
    let mirror = |s: f64, e: f64| (duration - e, duration - s);
    let jitter = |k: u64| (unit(i, k) - 0.5) * 4.0;
    let none = "<think>not present</think> <answer> none </answer>".to_string();
    let (query, category, fwd, rev) = match i % 8 {
        0 => (
            "person opens the door",
            json!("sensitive"),
            answer(start, end),
            Some(none),
        ),
        1 => {
            let (rs, re) = mirror(start, end);
            (
                "person holding a towel",
                json!("insensitive"),
                answer(start, end),
                Some(answer(rs, re)),
            )
        }
        2 => (
            "person puts a bag on the table",
            Value::Null,
            answer(start + jitter(3), end),
            Some(answer(1.0, 3.0)),
        ),
        3 => (
            "a person sits on the couch",
            json!("insensitive"),
            answer(start, end + jitter(4)),
            Some(none),
        ),
        4 => ("person closes the laptop", json!("sensitive"), answer(start, end), None),
        5 => (
            "person laughing",
            json!("insensitive"),
            format!("{start} to {end}"),
            Some(answer(0.0, 1.0)),
        ),
        6 => ("person takes off shoes", json!("sensitive"), none.clone(), Some(none)),
        _ => {
            let (rs, re) = mirror(start + jitter(5).abs(), end);
            (
                "person watching television",
                Value::Null,
                answer(start, end),
                Some(answer(rs, re)),
            )
        }
    };
    let mut v = json!({
        "sample_id": format!("req-{i:04}"),
        "video_id": format!("vid-{i:04}"),
        "duration": duration,
        "query": query,
        "gt_start": start,
        "gt_end": end,
        "raw_fwd_text": fwd,
    });
    if !category.is_null() {
        v["category"] = category;
    }
    if let Some(r) = rev {
        v["raw_rev_text"] = json!(r);
    }
    if i % 5 == 3 {
        v["lambda"] = json!(0.25 * (i % 4) as f64);
    }
    v
}

pub fn score_requests(n: usize) -> Vec<Value> {
    (0..n).map(score_request).collect()
}
