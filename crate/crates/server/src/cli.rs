//! Subcommands behind the `somnia` binary.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use tower_http::services::ServeDir;

use somnia_core::batch::score_dir;
use somnia_core::clock::{Clock, ManualClock, SystemClock};
use somnia_core::config::{build_pipeline, build_pipeline_with_fixtures, AppConfig, FixtureUtterance, MockFixtures, MockSettings};
use somnia_core::model::{EmotionLabel, SocialClass, SocialGroup};
use somnia_core::session::{export_mix, fold_events, read_events, Orchestrator, SessionState};

use crate::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "somnia", version, about = "Real-time dream narration to scene, color and soundscape events")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP + event-stream service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured listen address.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Fold a session log and print the final state as JSON.
    Replay {
        log: PathBuf,
        /// Write the soundscape gains as CSV (time_ms, layer_id, gain).
        #[arg(long)]
        export_mix: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        step_ms: u64,
    },
    /// Score a directory of transcripts (one utterance per line) into a CSV.
    Score {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write mock clouds, a fixture session log and a mock config for UI work.
    GenFixtures {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "fixtures")]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> anyhow::Result<AppConfig> {
    match path {
        Some(p) => AppConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => {
            let mut cfg = AppConfig::default();
            cfg.apply_env(|k| std::env::var(k).ok());
            Ok(cfg)
        }
    }
}

pub async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Serve { config, bind } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(b) = bind {
                cfg.bind = b;
            }
            serve(cfg).await
        }
        Command::Replay {
            log,
            export_mix,
            step_ms,
        } => {
            let state = replay(&log, export_mix.as_deref(), step_ms)?;
            // A closed pipe (e.g. `| head`) is not an error worth a panic.
            let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&state)?);
            Ok(())
        }
        Command::Score { dir, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let n = score(&dir, &out, &cfg).await?;
            eprintln!("scored {n} transcripts into {}", out.display());
            Ok(())
        }
        Command::GenFixtures { seed, out } => {
            gen_fixtures(seed, &out).await?;
            eprintln!("fixtures written to {}", out.display());
            Ok(())
        }
    }
}

pub async fn serve(cfg: AppConfig) -> anyhow::Result<()> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let pipeline = build_pipeline(&cfg, clock.clone()).await?;
    let orchestrator = Orchestrator::new(Arc::new(pipeline), clock, cfg.session.clone());
    let state = Arc::new(AppState::new(orchestrator, &cfg)?);
    let mut app = router(state);
    if let Some(dir) = &cfg.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    let listener = tokio::net::TcpListener::bind(&cfg.bind)
        .await
        .with_context(|| format!("binding {}", cfg.bind))?;
    tracing::info!(addr = %listener.local_addr()?, mock = cfg.mock.is_some(), "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

pub fn replay(log: &Path, export: Option<&Path>, step_ms: u64) -> anyhow::Result<SessionState> {
    let events = read_events(log)?;
    let state = fold_events(&events)?;
    if let Some(path) = export {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["time_ms", "layer_id", "gain"])?;
        for s in export_mix(&events, step_ms) {
            w.write_record([s.time_ms.to_string(), s.layer_id.to_string(), s.gain.to_string()])?;
        }
        w.flush()?;
    }
    Ok(state)
}

pub async fn score(dir: &Path, out: &Path, cfg: &AppConfig) -> anyhow::Result<usize> {
    let pipeline = build_pipeline(cfg, Arc::new(SystemClock)).await?;
    let rows = score_dir(&pipeline, dir)
        .await
        .with_context(|| format!("reading transcripts from {}", dir.display()))?;
    let mut w = csv::Writer::from_path(out).with_context(|| format!("creating {}", out.display()))?;
    w.write_record(["file", "utterances", "dominant_emotion", "hvdc_emotion", "dominant_social", "entity_count"])?;
    for r in &rows {
        w.write_record([
            r.file.clone(),
            r.utterances.to_string(),
            r.dominant_emotion.map(|e| e.code().to_owned()).unwrap_or_default(),
            r.hvdc_emotion.map(|e| format!("{e:?}")).unwrap_or_default(),
            r.dominant_social.code(),
            r.entity_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows.len())
}

fn narrative() -> Vec<FixtureUtterance> {
    let s = |g, l| Some(SocialClass::new(g, l).expect("valid level"));
    let f = |text: &str, emotion, social, entities: &[&str]| FixtureUtterance {
        text: text.to_owned(),
        emotion: Some(emotion),
        social,
        entities: Some(entities.iter().map(|e| e.to_string()).collect()),
    };
    vec![
        f("I was floating above a quiet lake at dawn", EmotionLabel::HaPeaceful, Some(SocialClass::None), &["quiet lake"]),
        f("My grandmother waved at me from a small boat", EmotionLabel::HaPeaceful, s(SocialGroup::Friendliness, 3), &["grandmother", "small boat"]),
        f("Then a dark wave rose and chased me", EmotionLabel::Apprehension, s(SocialGroup::Aggression, 4), &["dark wave"]),
        f("A stranger with a lantern shouted at me", EmotionLabel::Anger, s(SocialGroup::Aggression, 2), &["stranger", "lantern"]),
        f("I could not tell if the house was mine", EmotionLabel::Confusion, Some(SocialClass::None), &["house"]),
        f("I sat on the stairs and cried", EmotionLabel::Sadness, Some(SocialClass::None), &["stairs"]),
    ]
}

/// Writes `clouds/*.opc`, `fixtures.json`, `mock-config.json` and
/// `logs/fixture-session.jsonl` under `out`.
pub async fn gen_fixtures(seed: u64, out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    let fixtures = MockFixtures {
        utterances: narrative(),
    };
    std::fs::write(out.join("fixtures.json"), serde_json::to_string_pretty(&fixtures)?)?;

    let mut cfg = AppConfig::mock(seed);
    cfg.mock = Some(MockSettings {
        seed,
        fixtures: Some("fixtures.json".into()),
        ..MockSettings::default()
    });
    cfg.generation.cache_dir = Some("clouds".into());
    cfg.session.log_dir = Some("logs".into());
    cfg.session.min_utterance_interval_ms = 0;
    std::fs::write(out.join("mock-config.json"), serde_json::to_string_pretty(&cfg)?)?;

    // Run the narrative once with absolute paths and a scripted clock.
    cfg.resolve_paths(out);
    let clock = Arc::new(ManualClock::new(0, 0));
    let pipeline = build_pipeline_with_fixtures(&cfg, &fixtures, clock.clone()).await?;
    let orc = Orchestrator::new(Arc::new(pipeline), clock.clone(), cfg.session.clone());
    let id = "fixture-session";
    orc.create_session_with_id(id)?;
    for u in &fixtures.utterances {
        orc.ingest(id, &u.text).await?;
        orc.wait_idle(id).await?;
        clock.advance(6_000);
    }
    orc.close(id).await?;
    Ok(())
}
