use std::sync::Arc;
use std::time::Duration;

use somnia_core::clock::ManualClock;
use somnia_core::color::emotion_to_color;
use somnia_core::config::{build_pipeline_with_fixtures, AppConfig, FixtureUtterance, MockFixtures};
use somnia_core::model::{EmotionLabel, SocialClass, SocialGroup};
use somnia_core::session::*;

fn fixture(text: &str, emotion: EmotionLabel, social: Option<SocialClass>, entities: &[&str]) -> FixtureUtterance {
    FixtureUtterance {
        text: text.into(),
        emotion: Some(emotion),
        social,
        entities: Some(entities.iter().map(|s| s.to_string()).collect()),
    }
}

fn a(level: u8) -> SocialClass {
    SocialClass::new(SocialGroup::Aggression, level).unwrap()
}

async fn orchestrator(fixtures: Vec<FixtureUtterance>, tweak: impl FnOnce(&mut AppConfig)) -> (Orchestrator, Arc<ManualClock>) {
    let mut cfg = AppConfig::mock(11);
    cfg.generation.point_count = 64;
    cfg.session.min_utterance_interval_ms = 0;
    tweak(&mut cfg);
    let clock = Arc::new(ManualClock::new(1_000, 0));
    let pipeline = build_pipeline_with_fixtures(&cfg, &MockFixtures { utterances: fixtures }, clock.clone())
        .await
        .unwrap();
    (Orchestrator::new(Arc::new(pipeline), clock.clone(), cfg.session), clock)
}

fn kinds(events: &[SessionEvent]) -> Vec<&'static str> {
    events.iter().map(|e| e.kind()).collect()
}

#[tokio::test]
async fn dark_wave_pipeline() {
    let (orc, _) = orchestrator(
        vec![fixture("A dark wave chased me", EmotionLabel::Apprehension, Some(a(4)), &["dark wave"])],
        |_| {},
    )
    .await;
    orc.create_session_with_id("s1").unwrap();
    let burst = orc.ingest("s1", "  A dark wave chased me ").await.unwrap();
    assert_eq!(
        kinds(&burst),
        [
            "utterance_received",
            "emotion_classified",
            "social_classified",
            "sound_state",
            "entities_extracted",
            "generation_started"
        ]
    );
    let EventBody::EmotionClassified(e) = &burst[1].body else { panic!() };
    assert_eq!(e.label, EmotionLabel::Apprehension);
    assert!(!e.used_fallback);
    let EventBody::SocialClassified(s) = &burst[2].body else { panic!() };
    assert_eq!(s.class, a(4));
    let EventBody::EntitiesExtracted(x) = &burst[4].body else { panic!() };
    assert_eq!(x.entities.len(), 1);
    assert_eq!(x.entities[0].label, "dark wave");

    orc.wait_idle("s1").await.unwrap();
    let all = orc.events("s1").await.unwrap();
    assert_eq!(all.len(), 7);
    let EventBody::SceneUpdate(u) = &all[6].body else { panic!("{:?}", all[6]) };
    assert_eq!(u.element.color.name, "purple");
    assert_eq!(u.element.position, [2.0, 0.0, 0.0]);
    let cloud = orc.cloud(&u.element.cloud_ref).expect("cloud cached");
    assert_eq!(cloud.point_count(), 64);

    let state = orc.state("s1").await.unwrap();
    assert_eq!(state.scene.elements.len(), 1);
    assert_eq!(state.scene.current_emotion, Some(EmotionLabel::Apprehension));
    assert!(state.pending.is_empty());
    let gains = match &all[3].body {
        EventBody::SoundState(p) => p.targets.clone(),
        _ => panic!(),
    };
    let ids: Vec<String> = gains.layers.iter().map(|l| l.layer_id.to_string()).collect();
    assert_eq!(ids, ["base", "emotion:AP", "social:Aggression"]);
}

#[tokio::test]
async fn empty_text_appends_nothing() {
    let (orc, _) = orchestrator(vec![], |_| {}).await;
    orc.create_session_with_id("s").unwrap();
    assert_eq!(orc.ingest("s", "   \n").await, Err(SessionError::EmptyUtterance));
    assert!(orc.events("s").await.unwrap().is_empty());
    assert_eq!(
        orc.ingest("nope", "x").await,
        Err(SessionError::UnknownSession("nope".into()))
    );
}

#[tokio::test]
async fn utterance_bursts_do_not_interleave() {
    let (orc, _) = orchestrator(vec![], |c| c.mock.as_mut().unwrap().generation_delay_ms = 5).await;
    let orc = Arc::new(orc);
    orc.create_session_with_id("s").unwrap();
    let texts = ["The old house had a staircase", "My sister held a lantern", "A wolf and a river"];
    let mut tasks = Vec::new();
    for t in texts {
        let orc = orc.clone();
        tasks.push(tokio::spawn(async move { orc.ingest("s", t).await.unwrap() }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    orc.wait_idle("s").await.unwrap();
    let events = orc.events("s").await.unwrap();
    let seqs: Vec<u64> = events.iter().map(|e| e.event_seq).collect();
    assert_eq!(seqs, (0..events.len() as u64).collect::<Vec<_>>());
    // Synchronous events are grouped by utterance in admission order.
    let sync: Vec<u64> = events
        .iter()
        .filter(|e| !matches!(e.body, EventBody::SceneUpdate(_) | EventBody::GenerationFailed(_)))
        .map(|e| e.source_seq().unwrap())
        .collect();
    assert!(sync.windows(2).all(|w| w[0] <= w[1]), "{sync:?}");
    // Every scene update follows its generation start.
    for (i, e) in events.iter().enumerate() {
        if let EventBody::SceneUpdate(u) = &e.body {
            assert!(events[..i].iter().any(|p| matches!(&p.body,
                EventBody::GenerationStarted(g) if g.spawn_id == u.element.spawn_id)));
        }
    }
}

#[tokio::test]
async fn spawn_color_is_frozen() {
    let (orc, _) = orchestrator(
        vec![
            fixture("A dark wave chased me", EmotionLabel::Apprehension, None, &["dark wave"]),
            fixture("I cried by the lake", EmotionLabel::Sadness, None, &["lake"]),
        ],
        |c| c.mock.as_mut().unwrap().generation_delay_ms = 50,
    )
    .await;
    orc.create_session_with_id("s").unwrap();
    orc.ingest("s", "A dark wave chased me").await.unwrap();
    orc.ingest("s", "I cried by the lake").await.unwrap();
    orc.wait_idle("s").await.unwrap();
    let state = orc.state("s").await.unwrap();
    assert_eq!(state.scene.current_emotion, Some(EmotionLabel::Sadness));
    let colors: Vec<_> = state.scene.elements.iter().map(|e| (e.entity.label.as_str(), e.color.clone())).collect();
    assert_eq!(
        colors,
        [
            ("dark wave", emotion_to_color(EmotionLabel::Apprehension)),
            ("lake", emotion_to_color(EmotionLabel::Sadness))
        ]
    );
    assert_eq!(state.scene.current_social, Some(SocialClass::None));
}

#[tokio::test]
async fn close_then_reject() {
    let (orc, _) = orchestrator(vec![], |_| {}).await;
    orc.create_session_with_id("s").unwrap();
    orc.ingest("s", "a cat on a roof").await.unwrap();
    let closed = orc.close("s").await.unwrap();
    assert_eq!(closed.kind(), "session_closed");
    assert_eq!(orc.ingest("s", "more").await, Err(SessionError::SessionClosed("s".into())));
    assert_eq!(orc.close("s").await, Err(SessionError::SessionClosed("s".into())));
    assert!(orc.state("s").await.unwrap().closed);
    orc.wait_idle("s").await.unwrap();
}

#[tokio::test]
async fn rate_limit_uses_session_clock() {
    let (orc, clock) = orchestrator(vec![], |c| c.session.min_utterance_interval_ms = 2000).await;
    orc.create_session_with_id("s").unwrap();
    orc.ingest("s", "one").await.unwrap();
    clock.advance(500);
    assert_eq!(
        orc.ingest("s", "two").await,
        Err(SessionError::RateLimited { retry_after_ms: 1500 })
    );
    clock.advance(1500);
    orc.ingest("s", "two").await.unwrap();
}

#[tokio::test]
async fn session_cap() {
    let (orc, _) = orchestrator(vec![], |c| c.session.max_sessions = 2).await;
    orc.create_session_with_id("a").unwrap();
    orc.create_session().unwrap();
    assert_eq!(orc.create_session_with_id("c"), Err(SessionError::TooManySessions(2)));
    assert_eq!(orc.create_session_with_id("a"), Err(SessionError::DuplicateSession("a".into())));
    orc.close("a").await.unwrap();
    orc.create_session_with_id("c").unwrap();
}

#[tokio::test]
async fn queue_full_drops_entity_with_event() {
    let (orc, _) = orchestrator(
        vec![fixture("a fox, a hat and a boat", EmotionLabel::HaExcited, None, &["fox", "hat", "boat"])],
        |c| {
            c.generation.queue_capacity = 1;
            c.mock.as_mut().unwrap().generation_delay_ms = 60_000;
        },
    )
    .await;
    orc.create_session_with_id("s").unwrap();
    let burst = orc.ingest("s", "a fox, a hat and a boat").await.unwrap();
    let tail: Vec<_> = burst[5..].iter().map(|e| e.kind()).collect();
    // One job runs, one waits, the third is dropped.
    assert_eq!(tail, ["generation_started", "generation_started", "generation_failed"]);
    let EventBody::GenerationFailed(f) = &burst[7].body else { panic!() };
    assert_eq!(f.failure, FailureKind::QueueFull);
    assert_eq!(f.entity.label, "boat");
    assert_eq!(f.spawn_id, None);
}

#[tokio::test(start_paused = true)]
async fn generation_timeout_becomes_failure_event() {
    let (orc, _) = orchestrator(
        vec![fixture("a slow ship", EmotionLabel::Confusion, None, &["slow ship"])],
        |c| {
            c.generation.gen_timeout_ms = 1_000;
            c.mock.as_mut().unwrap().generation_delay_ms = 17_000;
        },
    )
    .await;
    orc.create_session_with_id("s").unwrap();
    orc.ingest("s", "a slow ship").await.unwrap();
    tokio::time::sleep(Duration::from_secs(2)).await;
    orc.wait_idle("s").await.unwrap();
    let events = orc.events("s").await.unwrap();
    let EventBody::GenerationFailed(f) = &events.last().unwrap().body else { panic!() };
    assert_eq!(f.failure, FailureKind::TimedOut);
    assert_eq!(f.spawn_id.as_deref(), Some("0.0"));
    assert!(orc.state("s").await.unwrap().pending.is_empty());
}

#[tokio::test]
async fn subscribe_from_cursor_then_live() {
    let (orc, _) = orchestrator(vec![], |_| {}).await;
    orc.create_session_with_id("s").unwrap();
    orc.ingest("s", "first dream").await.unwrap();
    orc.wait_idle("s").await.unwrap();
    let n = orc.events("s").await.unwrap().len() as u64;
    let (backlog, mut live) = orc.subscribe("s", 2).await.unwrap();
    assert_eq!(backlog.first().unwrap().event_seq, 2);
    assert_eq!(backlog.len() as u64, n - 2);
    orc.ingest("s", "second dream").await.unwrap();
    let next = live.recv().await.unwrap();
    assert_eq!(next.event_seq, n);
    assert_eq!(next.kind(), "utterance_received");
}

#[tokio::test]
async fn log_replays_to_live_state() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().to_owned();
    let (orc, _) = orchestrator(
        vec![
            fixture("A dark wave chased me", EmotionLabel::Apprehension, Some(a(4)), &["dark wave"]),
            fixture("My friend hugged me", EmotionLabel::HaPeaceful, Some(SocialClass::new(SocialGroup::Friendliness, 3).unwrap()), &["friend"]),
        ],
        |c| c.session.log_dir = Some(logs),
    )
    .await;
    orc.create_session_with_id("s").unwrap();
    orc.ingest("s", "A dark wave chased me").await.unwrap();
    orc.wait_idle("s").await.unwrap();
    orc.ingest("s", "My friend hugged me").await.unwrap();
    orc.wait_idle("s").await.unwrap();
    orc.close("s").await.unwrap();
    let live = orc.state("s").await.unwrap();
    let path = dir.path().join("s.jsonl");
    assert_eq!(replay(&path).unwrap(), live);
    assert_eq!(live.scene.elements.len(), 2);

    // Drop event 3 to open a gap.
    let text = std::fs::read_to_string(&path).unwrap();
    let gapped: Vec<&str> = text.lines().enumerate().filter(|(i, _)| *i != 3).map(|(_, l)| l).collect();
    let bad = dir.path().join("gap.jsonl");
    std::fs::write(&bad, gapped.join("\n")).unwrap();
    let err = replay(&bad).unwrap_err().to_string();
    assert!(err.contains("missing 3"), "{err}");

    // A scene update whose generation_started is gone.
    let events = read_events(&path).unwrap();
    let start = events.iter().position(|e| e.kind() == "generation_started").unwrap();
    let mut dangling: Vec<SessionEvent> = events.clone();
    dangling.remove(start);
    for (i, e) in dangling.iter_mut().enumerate() {
        e.event_seq = i as u64;
    }
    let err = fold_events(&dangling).unwrap_err().to_string();
    assert!(err.contains("dangling scene_update"), "{err}");
}

#[tokio::test]
async fn export_mix_tracks_sound_events() {
    let (orc, clock) = orchestrator(
        vec![
            fixture("calm meadow", EmotionLabel::HaPeaceful, None, &[]),
            fixture("I wept", EmotionLabel::Sadness, Some(a(2)), &[]),
        ],
        |_| {},
    )
    .await;
    orc.create_session_with_id("s").unwrap();
    orc.ingest("s", "calm meadow").await.unwrap();
    clock.advance(5_000);
    orc.ingest("s", "I wept").await.unwrap();
    let events = orc.events("s").await.unwrap();
    let samples = export_mix(&events, 100);
    let at = |t: u64, id: &str| {
        samples
            .iter()
            .find(|s| s.time_ms == t && s.layer_id.to_string() == id)
            .map_or(0.0, |s| s.gain)
    };
    assert_eq!(at(0, "base"), 1.0);
    assert_eq!(at(1000, "emotion:HA_PEACEFUL"), 0.5);
    assert_eq!(at(5000, "emotion:HA_PEACEFUL"), 1.0);
    assert_eq!(at(6000, "emotion:SD"), 0.5);
    assert_eq!(at(6000, "emotion:HA_PEACEFUL"), 0.5);
    assert_eq!(at(7000, "social:Aggression"), 1.0);
    assert_eq!(samples.last().unwrap().time_ms, 7000);
}
