//! Append-only JSON Lines event log, replay, and offline helpers.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;
use thiserror::Error;

use super::event::{EventBody, SessionEvent};
use super::state::SessionState;
use crate::model::Timestamp;
use crate::soundscape::{LayerId, SoundLayerState, Soundscape};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
}

/// Writes one event per line. Lines are flushed as they are written; the file
/// is fsynced only on [`EventLog::close`].
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    pub fn create(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).truncate(true).write(true).open(&path)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &SessionEvent) -> std::io::Result<()> {
        let mut line = event.to_json_line();
        line.push('\n');
        self.file.write_all(line.as_bytes())
    }

    pub fn close(&mut self) -> std::io::Result<()> {
        self.file.flush()?;
        self.file.sync_all()
    }
}

/// Parses a log without folding it. Blank lines are ignored.
pub fn read_events(path: &Path) -> Result<Vec<SessionEvent>, ReplayError> {
    let io = |source| ReplayError::Io {
        path: path.to_owned(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let event: SessionEvent = serde_json::from_str(&line).map_err(|e| ReplayError::CorruptLog {
            line: i + 1,
            reason: format!("malformed event: {e}"),
        })?;
        events.push(event);
    }
    Ok(events)
}

/// Folds events from a fresh state.
pub fn fold_events<'a>(events: impl IntoIterator<Item = &'a SessionEvent>) -> Result<SessionState, ReplayError> {
    let mut state = SessionState::default();
    for (i, e) in events.into_iter().enumerate() {
        state.apply(e).map_err(|err| ReplayError::CorruptLog {
            line: i + 1,
            reason: err.to_string(),
        })?;
    }
    Ok(state)
}

/// Rebuilds the session state from its log. Makes no external calls.
pub fn replay(path: &Path) -> Result<SessionState, ReplayError> {
    fold_events(&read_events(path)?)
}

const TIMESTAMP_KEYS: [&str; 4] = ["at", "activated_at", "fade_start", "received_at"];

fn zero_timestamps(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for (k, child) in map.iter_mut() {
                if TIMESTAMP_KEYS.contains(&k.as_str()) && child.is_number() {
                    *child = Value::from(0);
                } else {
                    zero_timestamps(child);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(zero_timestamps),
        _ => {}
    }
}

/// Replaces every timestamp field with 0 so logs from different runs can be
/// compared byte for byte.
pub fn canonicalize_log(jsonl: &str) -> Result<String, serde_json::Error> {
    let mut out = String::with_capacity(jsonl.len());
    for line in jsonl.lines().filter(|l| !l.trim().is_empty()) {
        let mut v: Value = serde_json::from_str(line)?;
        zero_timestamps(&mut v);
        out.push_str(&serde_json::to_string(&v)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixSample {
    /// Milliseconds since the first event of the session.
    pub time_ms: u64,
    pub layer_id: LayerId,
    pub gain: f64,
}

/// Samples the soundscape every `step_ms` from the first event until every
/// ramp after the last `sound_state` has settled. Each sample uses the most
/// recent sound state at or before that instant.
pub fn export_mix(events: &[SessionEvent], step_ms: u64) -> Vec<MixSample> {
    let Some(first) = events.first() else {
        return Vec::new();
    };
    let origin = first.at;
    let changes: Vec<(Timestamp, Soundscape, &SoundLayerState)> = events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::SoundState(p) => Some((e.at, Soundscape::new(p.crossfade_ms), &p.layers)),
            _ => None,
        })
        .collect();
    let end = changes
        .last()
        .map_or(origin, |(at, sc, st)| sc.settled_at(st).max(*at));
    let step = step_ms.max(1);
    let mut out = Vec::new();
    let mut t = origin;
    let mut applied = 0;
    loop {
        while applied < changes.len() && changes[applied].0 <= t {
            applied += 1;
        }
        let mix = match applied.checked_sub(1) {
            Some(i) => changes[i].1.render_mix(changes[i].2, t),
            None => Soundscape::default().render_mix(&SoundLayerState::default(), t),
        };
        for l in mix.layers {
            out.push(MixSample {
                time_ms: t - origin,
                layer_id: l.layer_id,
                gain: l.gain,
            });
        }
        if t >= end {
            break;
        }
        t += step;
    }
    out
}
