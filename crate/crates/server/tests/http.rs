use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use serde_json::{json, Value};

use somnia_core::clock::SystemClock;
use somnia_core::config::{build_pipeline_with_fixtures, AppConfig, FixtureUtterance, MockFixtures};
use somnia_core::generation::parse_cloud;
use somnia_core::model::{EmotionLabel, SocialClass, SocialGroup};
use somnia_core::session::Orchestrator;
use somnia_server::{router, AppState};

async fn spawn_server(tweak: impl FnOnce(&mut AppConfig)) -> String {
    let mut cfg = AppConfig::mock(5);
    cfg.generation.point_count = 128;
    cfg.session.min_utterance_interval_ms = 0;
    tweak(&mut cfg);
    let fixtures = MockFixtures {
        utterances: vec![FixtureUtterance {
            text: "A dark wave chased me".into(),
            emotion: Some(EmotionLabel::Apprehension),
            social: SocialClass::new(SocialGroup::Aggression, 4),
            entities: Some(vec!["dark wave".into()]),
        }],
    };
    let clock = Arc::new(SystemClock);
    let pipeline = build_pipeline_with_fixtures(&cfg, &fixtures, clock.clone()).await.unwrap();
    let orc = Orchestrator::new(Arc::new(pipeline), clock, cfg.session.clone());
    let app = router(Arc::new(AppState::new(orc, &cfg).unwrap()));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

async fn create(http: &reqwest::Client, base: &str) -> String {
    let resp = http.post(format!("{base}/sessions")).send().await.unwrap();
    assert_eq!(resp.status(), 201);
    resp.json::<Value>().await.unwrap()["session_id"].as_str().unwrap().to_owned()
}

/// Reads SSE `data:` payloads until `n` events arrived.
async fn read_sse(resp: reqwest::Response, n: usize) -> Vec<Value> {
    let mut body = resp.bytes_stream();
    let mut buf = String::new();
    let mut out = Vec::new();
    while out.len() < n {
        let chunk = tokio::time::timeout(Duration::from_secs(5), body.next())
            .await
            .expect("event stream stalled")
            .expect("stream ended early")
            .unwrap();
        buf.push_str(std::str::from_utf8(&chunk).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let frame: String = buf.drain(..end + 2).collect();
            for line in frame.lines() {
                if let Some(data) = line.strip_prefix("data: ").or_else(|| line.strip_prefix("data:")) {
                    out.push(serde_json::from_str(data).unwrap());
                }
            }
        }
    }
    out
}

#[tokio::test]
async fn end_to_end_event_stream_and_cloud() {
    let base = spawn_server(|_| {}).await;
    let http = reqwest::Client::new();
    let id = create(&http, &base).await;

    let stream = http.get(format!("{base}/sessions/{id}/events")).send().await.unwrap();
    assert_eq!(stream.status(), 200);
    let resp = http
        .post(format!("{base}/sessions/{id}/utterances"))
        .json(&json!({ "text": "A dark wave chased me" }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let burst: Value = resp.json().await.unwrap();
    assert_eq!(burst["events"].as_array().unwrap().len(), 6);

    let events = read_sse(stream, 7).await;
    let kinds: Vec<&str> = events.iter().map(|e| e["kind"].as_str().unwrap()).collect();
    assert_eq!(
        kinds,
        [
            "utterance_received",
            "emotion_classified",
            "social_classified",
            "sound_state",
            "entities_extracted",
            "generation_started",
            "scene_update"
        ]
    );
    assert_eq!(events[1]["payload"]["label"], "AP");
    assert_eq!(events[2]["payload"]["class"], "A4");
    let scene = &events[6]["payload"]["element"];
    assert_eq!(scene["color"]["rgb"], "#800080");

    let key = scene["cloud_ref"].as_str().unwrap();
    let resp = http.get(format!("{base}/clouds/{key}")).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    let cloud = parse_cloud(&resp.bytes().await.unwrap()).unwrap();
    assert_eq!(cloud.point_count(), 128);

    // Reconnecting with a cursor replays only the tail.
    let tail = http.get(format!("{base}/sessions/{id}/events?from=5")).send().await.unwrap();
    let tail = read_sse(tail, 2).await;
    assert_eq!(tail[0]["event_seq"], 5);
    assert_eq!(tail[1]["kind"], "scene_update");

    let state: Value = http
        .get(format!("{base}/sessions/{id}/state"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(state["scene"]["elements"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn error_mapping() {
    let base = spawn_server(|c| c.session.min_utterance_interval_ms = 60_000).await;
    let http = reqwest::Client::new();
    let status = |r: reqwest::Response| r.status().as_u16();

    assert_eq!(status(http.get(format!("{base}/sessions/nope/state")).send().await.unwrap()), 404);
    assert_eq!(status(http.get(format!("{base}/clouds/0000")).send().await.unwrap()), 404);
    let id = create(&http, &base).await;
    let post = |text: &'static str| {
        http.post(format!("{base}/sessions/{id}/utterances"))
            .json(&json!({ "text": text }))
            .send()
    };
    assert_eq!(status(post("   ").await.unwrap()), 422);
    assert_eq!(status(post("first").await.unwrap()), 200);
    let limited = post("second").await.unwrap();
    assert_eq!(limited.status(), 429);
    assert!(limited.headers().contains_key("retry-after"));
    assert_eq!(status(http.delete(format!("{base}/sessions/{id}")).send().await.unwrap()), 200);
    assert_eq!(status(post("after close").await.unwrap()), 409);
    assert_eq!(status(http.delete(format!("{base}/sessions/{id}")).send().await.unwrap()), 409);

    let health: Value = http.get(format!("{base}/healthz")).send().await.unwrap().json().await.unwrap();
    assert_eq!(health["status"], "ok");
    let ui: Value = http.get(format!("{base}/ui-config")).send().await.unwrap().json().await.unwrap();
    assert_eq!(ui["crossfade_ms"], 2000);
    assert!(ui["stems"]["social:Aggression"].is_string());
}

#[tokio::test]
async fn closed_session_stream_terminates() {
    let base = spawn_server(|_| {}).await;
    let http = reqwest::Client::new();
    let id = create(&http, &base).await;
    http.delete(format!("{base}/sessions/{id}")).send().await.unwrap();
    let resp = http.get(format!("{base}/sessions/{id}/events")).send().await.unwrap();
    let body = tokio::time::timeout(Duration::from_secs(5), resp.text()).await.unwrap().unwrap();
    assert!(body.contains("session_closed"));
}
