use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use vip_core::engine::{intervene, InferenceRun, Intervention};
use vip_core::trajectory::{StopReason, StopRule, TrajectoryRecord};

use crate::error::ServiceError;
use crate::registry::LoadedModel;

pub const DEFAULT_SESSION_TIMEOUT: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionMode {
    Manual,
    DatasetRow { sample: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Active,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterventionMode {
    Reanswer,
    Replay,
}

/// An answer as sent by a client: a number on the standardized scale, or
/// the keyword `"auto"` to use the stored sample's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerValue {
    Value(f64),
    Keyword(String),
}

/// One live inference run bound to a model.
#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub model: Arc<LoadedModel>,
    pub mode: SessionMode,
    run: InferenceRun,
}

impl Session {
    pub fn new(
        id: String,
        model: Arc<LoadedModel>,
        mode: SessionMode,
        threshold: f64,
        budget: Option<usize>,
    ) -> Result<Self, ServiceError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(ServiceError::InvalidRequest(format!(
                "threshold {threshold} outside (0, 1]"
            )));
        }
        let n_queries = model.checkpoint.model.n_queries();
        let budget = budget.unwrap_or(n_queries);
        if budget == 0 || budget > n_queries {
            return Err(ServiceError::InvalidRequest(format!(
                "budget {budget} outside [1, {n_queries}]"
            )));
        }
        if let SessionMode::DatasetRow { sample } = mode {
            let len = model.samples.as_ref().map_or(0, |s| s.len());
            if sample >= len {
                return Err(ServiceError::UnknownSample {
                    model: model.name.clone(),
                    sample,
                });
            }
        }
        let run = InferenceRun::new(&model.checkpoint.model, StopRule::new(threshold, budget))?;
        Ok(Session { id, model, mode, run })
    }

    pub fn run(&self) -> &InferenceRun {
        &self.run
    }

    pub fn status(&self) -> SessionStatus {
        if self.run.is_stopped() {
            SessionStatus::Stopped
        } else {
            SessionStatus::Active
        }
    }

    pub fn pending(&self) -> Result<Option<usize>, ServiceError> {
        Ok(self.run.propose(&self.model.checkpoint.model)?)
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.run.stop_reason()
    }

    pub fn record(&self) -> TrajectoryRecord {
        self.run.record()
    }

    fn stored_answer(&self, query: usize) -> Result<f64, ServiceError> {
        match self.mode {
            SessionMode::DatasetRow { sample } => {
                let samples = self.model.samples.as_ref().ok_or_else(|| ServiceError::UnknownSample {
                    model: self.model.name.clone(),
                    sample,
                })?;
                Ok(samples.answers.get(sample, query))
            }
            SessionMode::Manual => Err(ServiceError::InvalidRequest(
                "\"auto\" answers need a dataset_row session".into(),
            )),
        }
    }

    fn resolve(&self, query: usize, answer: &AnswerValue) -> Result<f64, ServiceError> {
        match answer {
            AnswerValue::Value(v) if v.is_finite() => Ok(*v),
            AnswerValue::Value(v) => Err(ServiceError::InvalidRequest(format!("answer {v} is not finite"))),
            AnswerValue::Keyword(k) if k == "auto" => self.stored_answer(query),
            AnswerValue::Keyword(k) => Err(ServiceError::InvalidRequest(format!(
                "answer must be a number or \"auto\", got \"{k}\""
            ))),
        }
    }

    /// Answer the pending query. Returns the value that was recorded.
    pub fn submit(&mut self, query_id: usize, answer: &AnswerValue) -> Result<f64, ServiceError> {
        let pending = self.pending()?.ok_or(ServiceError::SessionStopped)?;
        if query_id != pending {
            return Err(ServiceError::StaleQuery {
                got: query_id,
                pending,
            });
        }
        let value = self.resolve(pending, answer)?;
        let asked = self.run.answer(&self.model.checkpoint.model, value)?;
        debug_assert_eq!(asked, pending);
        Ok(value)
    }

    /// Replace the answer at `step`. Reanswer keeps the query sequence and
    /// recomputes posteriors; replay truncates after the edit and reopens
    /// the session so the querier picks the following queries.
    pub fn intervene(
        &mut self,
        step: usize,
        new_answer: &AnswerValue,
        mode: InterventionMode,
    ) -> Result<TrajectoryRecord, ServiceError> {
        let record = self.run.record();
        if step >= record.len() {
            return Err(ServiceError::IndexOutOfRange {
                index: step,
                len: record.len(),
            });
        }
        let value = self.resolve(record.steps[step].query, new_answer)?;
        let model = &self.model.checkpoint.model;
        let rule = self.run.rule();
        let (rule, answers) = match mode {
            InterventionMode::Reanswer => {
                let updated = intervene(model, &record, step, value, rule, Intervention::Reanswer)?;
                let rule = StopRule::new(rule.threshold, rule.budget.max(updated.len()));
                (rule, updated.steps.iter().map(|s| (s.query, s.answer)).collect::<Vec<_>>())
            }
            InterventionMode::Replay => {
                let mut answers: Vec<(usize, f64)> = record.steps[..=step].iter().map(|s| (s.query, s.answer)).collect();
                answers[step].1 = value;
                (rule, answers)
            }
        };
        self.run = InferenceRun::from_answers(model, rule, &answers)?;
        Ok(self.run.record())
    }
}

struct Entry {
    session: Arc<Mutex<Session>>,
    last_access: Instant,
}

/// In-memory sessions with idle eviction. Each session has its own lock so
/// requests to different sessions never wait on each other.
pub struct SessionStore {
    sessions: Mutex<HashMap<String, Entry>>,
    timeout: Duration,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl SessionStore {
    pub fn new(timeout: Duration) -> Self {
        SessionStore {
            sessions: Mutex::new(HashMap::new()),
            timeout,
        }
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn new_id() -> String {
        format!("{:032x}", rand::random::<u128>())
    }

    pub fn insert(&self, session: Session) -> Arc<Mutex<Session>> {
        let id = session.id.clone();
        let handle = Arc::new(Mutex::new(session));
        lock(&self.sessions).insert(
            id,
            Entry {
                session: handle.clone(),
                last_access: Instant::now(),
            },
        );
        handle
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        let now = Instant::now();
        let mut sessions = lock(&self.sessions);
        match sessions.get_mut(id) {
            Some(entry) if now.duration_since(entry.last_access) <= self.timeout => {
                entry.last_access = now;
                Ok(entry.session.clone())
            }
            Some(_) => {
                sessions.remove(id);
                Err(ServiceError::SessionNotFound(id.to_string()))
            }
            None => Err(ServiceError::SessionNotFound(id.to_string())),
        }
    }

    pub fn remove(&self, id: &str) -> Result<(), ServiceError> {
        lock(&self.sessions)
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| ServiceError::SessionNotFound(id.to_string()))
    }

    /// Drop sessions idle for longer than the timeout. Returns how many
    /// were removed.
    pub fn evict_idle(&self, now: Instant) -> usize {
        let mut sessions = lock(&self.sessions);
        let before = sessions.len();
        sessions.retain(|_, e| now.saturating_duration_since(e.last_access) <= self.timeout);
        before - sessions.len()
    }

    pub fn len(&self) -> usize {
        lock(&self.sessions).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn lock_session(s: &Mutex<Session>) -> MutexGuard<'_, Session> {
    lock(s)
}
