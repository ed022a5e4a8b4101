use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use burnscope::clinical::Ruleset;
use burnscope::store::{Clock, Store};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::config::ServiceConfig;
use crate::pipeline::{run_analysis, AnalyzeOptions, Context, ProgressSink, Stage, StageFailure, StageStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }

    pub fn can_become(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Queued, JobState::Running) | (JobState::Running, JobState::Done | JobState::Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageProgress {
    pub stage: Stage,
    pub status: StageStatus,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisJob {
    pub job_id: String,
    pub session_id: String,
    pub state: JobState,
    pub submitted_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub stages: Vec<StageProgress>,
    pub error: Option<StageFailure>,
}

impl AnalysisJob {
    fn new(job_id: String, session_id: String, now: DateTime<Utc>) -> Self {
        Self {
            job_id,
            session_id,
            state: JobState::Queued,
            submitted_at: now,
            started_at: None,
            finished_at: None,
            stages: Stage::ALL
                .iter()
                .map(|&stage| StageProgress {
                    stage,
                    status: StageStatus::Pending,
                    detail: None,
                })
                .collect(),
            error: None,
        }
    }

    fn running_stage(&self) -> Stage {
        self.stages
            .iter()
            .find(|s| s.status == StageStatus::Running)
            .or_else(|| self.stages.iter().find(|s| s.status == StageStatus::Pending))
            .map_or(Stage::Report, |s| s.stage)
    }
}

#[derive(Default)]
struct Board {
    jobs: HashMap<String, AnalysisJob>,
    /// Session id to its non-terminal job.
    active: HashMap<String, String>,
}

/// Job snapshots. Every transition happens under one lock, so readers never
/// observe a half-applied update.
#[derive(Default)]
pub struct JobBoard {
    inner: Mutex<Board>,
}

impl JobBoard {
    fn lock(&self) -> std::sync::MutexGuard<'_, Board> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Registers a queued job, or returns the id of the job already active
    /// for the session.
    pub fn submit(&self, job_id: &str, session_id: &str, now: DateTime<Utc>) -> Result<AnalysisJob, String> {
        let mut b = self.lock();
        if let Some(existing) = b.active.get(session_id) {
            return Err(existing.clone());
        }
        let job = AnalysisJob::new(job_id.to_string(), session_id.to_string(), now);
        b.active.insert(session_id.to_string(), job_id.to_string());
        b.jobs.insert(job_id.to_string(), job.clone());
        Ok(job)
    }

    /// Drops a job that never reached the queue.
    pub fn withdraw(&self, job_id: &str) {
        let mut b = self.lock();
        if let Some(job) = b.jobs.remove(job_id) {
            b.active.remove(&job.session_id);
        }
    }

    pub fn get(&self, job_id: &str) -> Option<AnalysisJob> {
        self.lock().jobs.get(job_id).cloned()
    }

    pub fn active_job(&self, session_id: &str) -> Option<String> {
        self.lock().active.get(session_id).cloned()
    }

    pub fn start(&self, job_id: &str, now: DateTime<Utc>) -> bool {
        let mut b = self.lock();
        let Some(job) = b.jobs.get_mut(job_id) else {
            return false;
        };
        if !job.state.can_become(JobState::Running) {
            return false;
        }
        job.state = JobState::Running;
        job.started_at = Some(now);
        true
    }

    pub fn stage(&self, job_id: &str, stage: Stage, status: StageStatus, detail: Option<&str>) {
        let mut b = self.lock();
        if let Some(job) = b.jobs.get_mut(job_id) {
            if job.state != JobState::Running {
                return;
            }
            if let Some(s) = job.stages.iter_mut().find(|s| s.stage == stage) {
                s.status = status;
                s.detail = detail.map(str::to_string);
            }
        }
    }

    pub fn finish(&self, job_id: &str, now: DateTime<Utc>, outcome: Result<(), StageFailure>) {
        let mut b = self.lock();
        let Some(job) = b.jobs.get_mut(job_id) else {
            return;
        };
        let next = if outcome.is_ok() {
            JobState::Done
        } else {
            JobState::Failed
        };
        if !job.state.can_become(next) {
            return;
        }
        job.state = next;
        job.finished_at = Some(now);
        if let Err(failure) = outcome {
            if let Some(s) = job.stages.iter_mut().find(|s| s.stage == failure.stage) {
                s.status = StageStatus::Failed;
                s.detail = Some(failure.detail.clone());
            }
            job.error = Some(failure);
        }
        let session_id = job.session_id.clone();
        b.active.remove(&session_id);
    }
}

struct BoardProgress<'a> {
    board: &'a JobBoard,
    job_id: &'a str,
}

impl ProgressSink for BoardProgress<'_> {
    fn update(&self, stage: Stage, status: StageStatus, detail: Option<&str>) {
        self.board.stage(self.job_id, stage, status, detail);
    }
}

/// Everything a request handler or the worker needs.
pub struct Engine {
    pub store: Store,
    pub config: ServiceConfig,
    pub ruleset: Ruleset,
    pub clock: Box<dyn Clock>,
    pub jobs: JobBoard,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    queue: mpsc::Sender<QueuedJob>,
}

pub struct QueuedJob {
    pub job_id: String,
    pub session_id: String,
    pub options: AnalyzeOptions,
}

#[derive(Debug, PartialEq, Eq)]
pub enum SubmitError {
    /// Another job is queued or running for the session.
    Conflict(String),
    QueueFull,
}

impl Engine {
    /// Builds the engine and starts its worker on the current tokio runtime.
    pub fn start(store: Store, config: ServiceConfig, ruleset: Ruleset, clock: Box<dyn Clock>) -> Arc<Self> {
        let (tx, rx) = mpsc::channel(config.queue_capacity);
        let engine = Arc::new(Self {
            store,
            config,
            ruleset,
            clock,
            jobs: JobBoard::default(),
            locks: Mutex::new(HashMap::new()),
            queue: tx,
        });
        tokio::spawn(worker(Arc::clone(&engine), rx));
        engine
    }

    pub fn context(&self) -> Context<'_> {
        Context {
            store: &self.store,
            config: &self.config,
            ruleset: &self.ruleset,
            clock: self.clock.as_ref(),
        }
    }

    /// Serializes writers of one session.
    pub async fn lock_session(&self, session_id: &str) -> tokio::sync::OwnedMutexGuard<()> {
        let lock = {
            let mut map = self.locks.lock().unwrap_or_else(|e| e.into_inner());
            Arc::clone(map.entry(session_id.to_string()).or_default())
        };
        lock.lock_owned().await
    }

    pub fn submit(&self, session_id: &str, options: AnalyzeOptions) -> Result<AnalysisJob, SubmitError> {
        let job_id = self.store.new_id();
        let job = self
            .jobs
            .submit(&job_id, session_id, self.clock.now())
            .map_err(SubmitError::Conflict)?;
        let queued = QueuedJob {
            job_id: job_id.clone(),
            session_id: session_id.to_string(),
            options,
        };
        if self.queue.try_send(queued).is_err() {
            self.jobs.withdraw(&job_id);
            return Err(SubmitError::QueueFull);
        }
        Ok(job)
    }
}

async fn worker(engine: Arc<Engine>, mut rx: mpsc::Receiver<QueuedJob>) {
    while let Some(job) = rx.recv().await {
        if !engine.jobs.start(&job.job_id, engine.clock.now()) {
            continue;
        }
        let e = Arc::clone(&engine);
        let job_id = job.job_id.clone();
        let handle = tokio::task::spawn_blocking(move || {
            let progress = BoardProgress {
                board: &e.jobs,
                job_id: &job.job_id,
            };
            run_analysis(&e.context(), &job.session_id, &job.options, &progress).map(|_| ())
        });
        let outcome = match handle.await {
            Ok(r) => r,
            Err(join) => {
                let stage = engine.jobs.get(&job_id).map_or(Stage::Qc, |j| j.running_stage());
                Err(StageFailure {
                    stage,
                    detail: format!("internal error: {join}"),
                })
            }
        };
        engine.jobs.finish(&job_id, engine.clock.now(), outcome);
    }
}
