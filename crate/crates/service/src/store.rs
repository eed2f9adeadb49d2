//! Sessions in memory, backed by one append-only log file per session.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use hear_core::eval::Episode;
use hear_core::io::{read_jsonl, to_jsonl};
use hear_core::rng::derive_seed;
use hear_core::suite::Condition;

use crate::error::{Result, ServiceError};
use crate::session::{Action, Event, EventBody, RatingForm, Session, SessionMeta, Study};
use crate::SCHEMA_VERSION;

pub const SESSION_SCHEMA: &str = "hear.session";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogLine {
    Session(SessionMeta),
    Event(Event),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub condition: Condition,
    pub seed: u64,
    pub created_at: u64,
    pub qc_passed: bool,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedEpisode {
    pub session: String,
    pub task: String,
    pub condition: Condition,
    pub qc: bool,
    pub finalized: bool,
    pub edits: usize,
    pub rating: Option<RatingForm>,
    pub episode: Episode,
}

/// Every event ordered by session and sequence number, and the episodes the
/// events replay to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Export {
    pub schema_version: u32,
    pub sessions: Vec<SessionSummary>,
    pub events: Vec<Event>,
    pub episodes: Vec<ExportedEpisode>,
}

pub struct Store {
    study: Arc<Study>,
    dir: Option<PathBuf>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    created: AtomicU64,
}

impl Store {
    /// A store that keeps nothing on disk.
    pub fn in_memory(study: Arc<Study>) -> Self {
        Self { study, dir: None, sessions: RwLock::default(), created: AtomicU64::new(0) }
    }

    /// Opens `dir`, replaying every session log found there.
    pub fn open(study: Arc<Study>, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        paths.retain(|p| p.extension().is_some_and(|x| x == "jsonl"));
        paths.sort();
        let mut sessions = BTreeMap::new();
        for p in paths {
            let s = load_session(&study, &p)?;
            log::info!("loaded session {} with {} events", s.meta.id, s.events.len());
            sessions.insert(s.meta.id.clone(), Arc::new(Mutex::new(s)));
        }
        let created = AtomicU64::new(sessions.len() as u64);
        Ok(Self { study, dir: Some(dir.to_owned()), sessions: RwLock::new(sessions), created })
    }

    pub fn study(&self) -> &Study {
        &self.study
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().expect("session map poisoned").keys().cloned().collect()
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_owned()))
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    pub fn create(&self, condition: Condition, seed: u64) -> Result<SessionMeta> {
        let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut map = self.sessions.write().expect("session map poisoned");
        let id = loop {
            let n = self.created.fetch_add(1, Ordering::Relaxed);
            let id = format!("{:016x}", derive_seed(seed, n));
            if !map.contains_key(&id) {
                break id;
            }
        };
        let session = Session::create(&self.study, id.clone(), condition, seed, created_at)?;
        if let Some(path) = self.log_path(&id) {
            let mut f = File::create(&path)?;
            f.write_all(to_jsonl(SESSION_SCHEMA, &[LogLine::Session(session.meta.clone())])?.as_bytes())?;
            f.sync_all()?;
        }
        let meta = session.meta.clone();
        map.insert(id, Arc::new(Mutex::new(session)));
        Ok(meta)
    }

    /// Runs `f` on a session while holding its lock.
    pub fn read<R>(&self, id: &str, f: impl FnOnce(&Session) -> Result<R>) -> Result<R> {
        let s = self.get(id)?;
        let guard = s.lock().expect("session poisoned");
        f(&guard)
    }

    /// Records one action and appends it to the session log. Check and submit
    /// events are synced to disk before returning.
    pub fn act(&self, id: &str, task: &str, seq: Option<u64>, action: Action) -> Result<Event> {
        self.act_then(id, task, seq, action, |_, ev| Ok(ev.clone()))
    }

    /// Like [`Store::act`], then runs `f` on the updated session before the lock
    /// is released, so the result reflects exactly this event.
    pub fn act_then<R>(
        &self,
        id: &str,
        task: &str,
        seq: Option<u64>,
        action: Action,
        f: impl FnOnce(&Session, &Event) -> Result<R>,
    ) -> Result<R> {
        let s = self.get(id)?;
        let mut guard = s.lock().expect("session poisoned");
        let before = guard.clone();
        let ev = guard.act(&self.study, task, seq, action)?;
        if let Some(path) = self.log_path(id) {
            let sync = matches!(ev.body, EventBody::Check { .. } | EventBody::Submit { .. });
            if let Err(e) = append(&path, &ev, sync) {
                *guard = before;
                return Err(e);
            }
        }
        f(&guard, &ev)
    }

    /// Exports one session, or all when `session` is `None`. Episodes come from
    /// replaying the exported events, not from live state.
    pub fn export(&self, session: Option<&str>) -> Result<Export> {
        let ids = match session {
            Some(id) => {
                self.get(id)?;
                vec![id.to_owned()]
            }
            None => self.session_ids(),
        };
        let mut out = Export { schema_version: SCHEMA_VERSION, sessions: Vec::new(), events: Vec::new(), episodes: Vec::new() };
        for id in ids {
            let (meta, events) = self.read(&id, |s| Ok((s.meta.clone(), s.events.clone())))?;
            let replayed = Session::replay(&self.study, meta, events)?;
            for t in &replayed.tasks {
                let env = self.study.ds.env(&t.env_id)?;
                out.episodes.push(ExportedEpisode {
                    session: id.clone(),
                    task: t.task.id.clone(),
                    condition: replayed.meta.condition,
                    qc: t.task.qc,
                    finalized: t.finalized,
                    edits: t.edits,
                    rating: t.rating,
                    episode: t.episode(&id, env)?,
                });
            }
            out.sessions.push(SessionSummary {
                id: id.clone(),
                condition: replayed.meta.condition,
                seed: replayed.meta.seed,
                created_at: replayed.meta.created_at,
                qc_passed: replayed.qc_passed(&self.study),
                events: replayed.events.len(),
            });
            out.events.extend(replayed.events);
        }
        Ok(out)
    }
}

fn append(path: &Path, ev: &Event, sync: bool) -> Result<()> {
    let mut line = serde_json::to_string(&LogLine::Event(ev.clone())).map_err(hear_core::Error::from)?;
    line.push('\n');
    let mut f = OpenOptions::new().append(true).open(path)?;
    f.write_all(line.as_bytes())?;
    if sync {
        f.sync_data()?;
    }
    Ok(())
}

fn load_session(study: &Study, path: &Path) -> Result<Session> {
    let mut lines = read_jsonl::<LogLine>(path, SESSION_SCHEMA)?.into_iter();
    let Some(LogLine::Session(meta)) = lines.next() else {
        return Err(ServiceError::Corrupt(format!("{} does not start with a session record", path.display())));
    };
    let events = lines
        .map(|l| match l {
            LogLine::Event(e) => Ok(e),
            LogLine::Session(_) => Err(ServiceError::Corrupt(format!("{} has two session records", path.display()))),
        })
        .collect::<Result<Vec<_>>>()?;
    Session::replay(study, meta, events)
}
