//! FIFO job queue with bounded concurrency, prompt-keyed caching, optional
//! on-disk spill, and per-job timeouts.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use super::wire::{parse_cloud, serialize_cloud, PointCloud};
use super::{GenConfig, GenError, GenerationService};
use crate::clients::stable_digest;
use crate::clock::Clock;
use crate::model::Timestamp;

/// Lowercased, whitespace-collapsed prompt used for cache lookups.
pub fn normalize_prompt(prompt: &str) -> String {
    prompt
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Stable, URL-safe key for a prompt's cached cloud.
pub fn cache_key(prompt: &str) -> String {
    hex::encode(&stable_digest(&[normalize_prompt(prompt).as_bytes()])[..8])
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobState {
    Queued,
    Running,
    Done(Arc<PointCloud>),
    Failed(String),
    TimedOut,
}

impl JobState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, JobState::Done(_) | JobState::Failed(_) | JobState::TimedOut)
    }

    /// Position along Queued → Running → terminal.
    pub fn rank(&self) -> u8 {
        match self {
            JobState::Queued => 0,
            JobState::Running => 1,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            JobState::Queued => "queued",
            JobState::Running => "running",
            JobState::Done(_) => "done",
            JobState::Failed(_) => "failed",
            JobState::TimedOut => "timed_out",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenJob {
    pub job_id: String,
    pub prompt: String,
    pub state: String,
    pub submitted_at: Timestamp,
    pub finished_at: Option<Timestamp>,
}

#[derive(Debug, Clone)]
pub struct JobProgress {
    pub state: JobState,
    pub finished_at: Option<Timestamp>,
}

/// Caller's view of a job. Clones observe the same job.
#[derive(Debug, Clone)]
pub struct JobHandle {
    pub job_id: String,
    pub prompt: String,
    pub cache_key: String,
    pub cache_hit: bool,
    pub submitted_at: Timestamp,
    rx: watch::Receiver<JobProgress>,
}

impl JobHandle {
    pub fn state(&self) -> JobState {
        self.rx.borrow().state.clone()
    }

    pub fn snapshot(&self) -> GenJob {
        let p = self.rx.borrow();
        GenJob {
            job_id: self.job_id.clone(),
            prompt: self.prompt.clone(),
            state: p.state.name().to_owned(),
            submitted_at: self.submitted_at,
            finished_at: p.finished_at,
        }
    }

    /// Waits for a terminal state.
    pub async fn wait(&self) -> JobState {
        let mut rx = self.rx.clone();
        let result = rx.wait_for(|p| p.state.is_terminal()).await;
        match result {
            Ok(p) => p.state.clone(),
            Err(_) => self.state(),
        }
    }

    /// Every state change from now on, for monotonicity checks.
    pub fn subscribe(&self) -> watch::Receiver<JobProgress> {
        self.rx.clone()
    }
}

struct QueuedJob {
    job_id: String,
    prompt: String,
    key: String,
    tx: watch::Sender<JobProgress>,
}

#[derive(Default)]
struct Inner {
    queue: VecDeque<QueuedJob>,
    running: usize,
    cache: HashMap<String, Arc<PointCloud>>,
    inflight: HashMap<String, JobHandle>,
    next_id: u64,
}

struct Shared {
    config: GenConfig,
    service: Arc<dyn GenerationService>,
    clock: Arc<dyn Clock>,
    inner: Mutex<Inner>,
}

/// Cheap to clone; clones share the queue and cache.
#[derive(Clone)]
pub struct GenerationClient {
    shared: Arc<Shared>,
}

impl GenerationClient {
    pub fn new(config: GenConfig, service: Arc<dyn GenerationService>, clock: Arc<dyn Clock>) -> Self {
        if let Some(dir) = &config.cache_dir {
            if let Err(err) = std::fs::create_dir_all(dir) {
                tracing::warn!(%err, dir = %dir.display(), "cannot create cloud cache dir");
            }
        }
        Self {
            shared: Arc::new(Shared {
                config,
                service,
                clock,
                inner: Mutex::new(Inner::default()),
            }),
        }
    }

    pub fn config(&self) -> &GenConfig {
        &self.shared.config
    }

    /// Submits a prompt. Cache hits return an already finished job; a prompt
    /// already in flight returns that job's handle; otherwise the job joins the
    /// FIFO queue. Must be called inside a Tokio runtime.
    pub fn request_cloud(&self, prompt: &str) -> Result<JobHandle, GenError> {
        if prompt.trim().is_empty() {
            return Err(GenError::EmptyPrompt);
        }
        let key = cache_key(prompt);
        let now = self.shared.clock.now_ms();
        let cached = self.lookup(&key);
        let mut inner = self.shared.inner.lock().unwrap();
        if let Some(cloud) = cached {
            inner.next_id += 1;
            let (_tx, rx) = watch::channel(JobProgress {
                state: JobState::Done(cloud),
                finished_at: Some(now),
            });
            return Ok(JobHandle {
                job_id: format!("job-{:06}", inner.next_id),
                prompt: prompt.to_owned(),
                cache_key: key,
                cache_hit: true,
                submitted_at: now,
                rx,
            });
        }
        if let Some(h) = inner.inflight.get(&key) {
            return Ok(h.clone());
        }
        let capacity = self.shared.config.queue_capacity;
        if inner.queue.len() >= capacity {
            return Err(GenError::QueueFull { capacity });
        }
        inner.next_id += 1;
        let job_id = format!("job-{:06}", inner.next_id);
        let (tx, rx) = watch::channel(JobProgress {
            state: JobState::Queued,
            finished_at: None,
        });
        let handle = JobHandle {
            job_id: job_id.clone(),
            prompt: prompt.to_owned(),
            cache_key: key.clone(),
            cache_hit: false,
            submitted_at: now,
            rx,
        };
        inner.inflight.insert(key.clone(), handle.clone());
        inner.queue.push_back(QueuedJob {
            job_id,
            prompt: prompt.to_owned(),
            key,
            tx,
        });
        drop(inner);
        Self::pump(&self.shared);
        Ok(handle)
    }

    /// Cached cloud by key, from memory or the spill directory.
    pub fn get_cached(&self, key: &str) -> Option<Arc<PointCloud>> {
        self.lookup(key)
    }

    pub fn pending(&self) -> usize {
        self.shared.inner.lock().unwrap().queue.len()
    }

    pub fn running(&self) -> usize {
        self.shared.inner.lock().unwrap().running
    }

    fn lookup(&self, key: &str) -> Option<Arc<PointCloud>> {
        if let Some(c) = self.shared.inner.lock().unwrap().cache.get(key) {
            return Some(c.clone());
        }
        let dir = self.shared.config.cache_dir.as_ref()?;
        let cloud = Arc::new(read_spill(dir, key)?);
        self.shared
            .inner
            .lock()
            .unwrap()
            .cache
            .insert(key.to_owned(), cloud.clone());
        Some(cloud)
    }

    fn pump(shared: &Arc<Shared>) {
        loop {
            let job = {
                let mut inner = shared.inner.lock().unwrap();
                if inner.running >= shared.config.max_concurrent_jobs.max(1) {
                    return;
                }
                let Some(job) = inner.queue.pop_front() else {
                    return;
                };
                inner.running += 1;
                job
            };
            let shared = shared.clone();
            tokio::spawn(async move { Self::run(shared, job).await });
        }
    }

    async fn run(shared: Arc<Shared>, job: QueuedJob) {
        job.tx.send_replace(JobProgress {
            state: JobState::Running,
            finished_at: None,
        });
        let timeout = shared.config.gen_timeout();
        let outcome = tokio::time::timeout(timeout, shared.service.generate(&job.prompt)).await;
        let state = match outcome {
            Ok(Ok(mut cloud)) => {
                cloud.prompt = job.prompt.clone();
                let cloud = Arc::new(cloud);
                if let Some(dir) = &shared.config.cache_dir {
                    write_spill(dir, &job.key, &cloud);
                }
                shared
                    .inner
                    .lock()
                    .unwrap()
                    .cache
                    .insert(job.key.clone(), cloud.clone());
                JobState::Done(cloud)
            }
            Ok(Err(err)) => JobState::Failed(err.to_string()),
            Err(_) => JobState::TimedOut,
        };
        {
            let mut inner = shared.inner.lock().unwrap();
            inner.inflight.remove(&job.key);
            inner.running -= 1;
        }
        tracing::debug!(job = %job.job_id, state = state.name(), "generation finished");
        job.tx.send_replace(JobProgress {
            state,
            finished_at: Some(shared.clock.now_ms()),
        });
        Self::pump(&shared);
    }
}

fn spill_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.opc"))
}

fn read_spill(dir: &Path, key: &str) -> Option<PointCloud> {
    let bytes = std::fs::read(spill_path(dir, key)).ok()?;
    match parse_cloud(&bytes) {
        Ok(c) => Some(c),
        Err(err) => {
            tracing::warn!(%err, key, "ignoring corrupt spilled cloud");
            None
        }
    }
}

fn write_spill(dir: &Path, key: &str, cloud: &PointCloud) {
    if let Err(err) = std::fs::write(spill_path(dir, key), serialize_cloud(cloud)) {
        tracing::warn!(%err, key, "could not spill cloud to disk");
    }
}
