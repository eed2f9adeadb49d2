//! Session state and the events that change it.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use hear_core::env::{observation_at, Egocentric, Environment};
use hear_core::eval::{is_success, Episode};
use hear_core::lexicon::PhraseSpan;
use hear_core::remedy::{apply_suggestion, Highlight, SuggestionList, TokenRange};
use hear_core::rng::{derive_seed_str, rng};
use hear_core::speaker::{AnnotatedInstruction, Correction};
use hear_core::suite::{highlights_for, nav_entries, suggestions_for, Condition, CorpusEntry, Dataset, Models, Split, SuiteConfig};

use crate::error::{Result, ServiceError};
use crate::SCHEMA_VERSION;

pub const DEFAULT_TASKS_PER_SESSION: usize = 5;
pub const NOTICE: &str = "This instruction may be imperfect.";

/// Everything a session needs to serve tasks.
#[derive(Debug, Clone)]
pub struct Study {
    pub ds: Dataset,
    pub models: Models,
    pub cfg: SuiteConfig,
    /// Regular tasks per session; the quality-control task comes on top.
    pub tasks_per_session: usize,
}

impl Study {
    pub fn new(ds: Dataset, models: Models, cfg: SuiteConfig) -> Self {
        Self { ds, models, cfg, tasks_per_session: DEFAULT_TASKS_PER_SESSION }
    }

    /// The route every session uses as its quality-control task: the first test
    /// route outside the navigation pool, shown with its clean instruction.
    pub fn qc_entry(&self) -> Result<&CorpusEntry> {
        let mut test = self.ds.entries(Split::Test);
        let first = self.ds.entries(Split::Test).next();
        test.nth(self.cfg.nav_episodes)
            .or(first)
            .ok_or_else(|| ServiceError::BadRequest("the dataset has no test routes".into()))
    }

    /// Task list for a session seed. Routes never repeat within a session.
    pub fn assign_tasks(&self, seed: u64) -> Result<Vec<TaskRef>> {
        let qc = self.qc_entry()?;
        let mut pool: Vec<&CorpusEntry> =
            nav_entries(&self.ds, &self.cfg).into_iter().filter(|e| e.route.id != qc.route.id).collect();
        let mut r = rng(derive_seed_str(seed, "session-tasks"));
        pool.shuffle(&mut r);
        pool.truncate(self.tasks_per_session);
        let qc_at = r.gen_range(0..=pool.len());
        let mut routes: Vec<(&CorpusEntry, bool)> = pool.into_iter().map(|e| (e, false)).collect();
        routes.insert(qc_at, (qc, true));
        Ok(routes
            .into_iter()
            .enumerate()
            .map(|(n, (e, qc))| TaskRef { id: format!("t{n}"), route_id: e.route.id.clone(), qc })
            .collect())
    }

    fn env(&self, id: &str) -> Result<&Environment> {
        Ok(self.ds.env(id)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRef {
    pub id: String,
    pub route_id: String,
    pub qc: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub id: String,
    pub condition: Condition,
    pub seed: u64,
    /// Unix seconds.
    pub created_at: u64,
    pub tasks: Vec<TaskRef>,
}

/// Post-task questionnaire on a five-point scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingForm {
    pub easy_to_follow: u8,
    pub confident: u8,
    pub mental_demand: u8,
}

impl RatingForm {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: u8| (1..=5).contains(&v);
        if ok(self.easy_to_follow) && ok(self.confident) && ok(self.mental_demand) {
            Ok(())
        } else {
            Err(ServiceError::InvalidRating)
        }
    }
}

/// What a participant asked for.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Move { target: String },
    Check,
    OpenMenu { span: TokenRange },
    Apply { span: TokenRange, candidate: Correction, target: Option<TokenRange> },
    Revert,
    Rate(RatingForm),
    Submit,
}

/// What happened, as recorded in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Move { from: String, to: String, heading: f64 },
    Check { node: String, success: bool },
    OpenMenu { span: TokenRange, items: Vec<Correction> },
    ApplySuggestion { span: TokenRange, candidate: Correction, target: TokenRange },
    Revert { restored_tokens: usize },
    Rating(RatingForm),
    Submit { node: String },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Move { .. } => "move",
            EventBody::Check { .. } => "check",
            EventBody::OpenMenu { .. } => "open_menu",
            EventBody::ApplySuggestion { .. } => "apply_suggestion",
            EventBody::Revert { .. } => "revert",
            EventBody::Rating(_) => "rating",
            EventBody::Submit { .. } => "submit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub session: String,
    pub task: String,
    /// Starts at 1 and increases by one per event within a session.
    pub seq: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq)]
struct Snapshot {
    instruction: AnnotatedInstruction,
    highlights: Vec<Highlight>,
    served: BTreeMap<TokenRange, SuggestionList>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskState {
    pub task: TaskRef,
    pub env_id: String,
    pub start: String,
    pub goal: String,
    pub node: String,
    pub heading: f64,
    pub instruction: AnnotatedInstruction,
    pub highlights: Vec<Highlight>,
    /// Suggestion lists opened since the last edit, by highlight span.
    pub served: BTreeMap<TokenRange, SuggestionList>,
    history: Vec<Snapshot>,
    pub trajectory: Vec<String>,
    pub check_nodes: Vec<String>,
    pub checks_used: usize,
    pub success: bool,
    pub finalized: bool,
    pub edits: usize,
    pub rating: Option<RatingForm>,
}

impl TaskState {
    fn new(study: &Study, condition: Condition, task: &TaskRef) -> Result<Self> {
        let entry = study.ds.entry(&task.route_id)?;
        let env = study.env(&entry.env_id)?;
        let instruction = if task.qc { entry.clean.clone() } else { entry.corrupted.clone() };
        let highlights = highlights_for(condition, &study.models, env, &entry.route, &instruction, study.cfg.highlight_cap)?;
        Ok(Self {
            task: task.clone(),
            env_id: entry.env_id.clone(),
            start: entry.route.start.clone(),
            goal: entry.route.goal().to_owned(),
            node: entry.route.start.clone(),
            heading: entry.route.start_heading,
            instruction,
            highlights,
            served: BTreeMap::new(),
            history: Vec::new(),
            trajectory: vec![entry.route.start.clone()],
            check_nodes: Vec::new(),
            checks_used: 0,
            success: false,
            finalized: false,
            edits: 0,
            rating: None,
        })
    }

    pub fn can_revert(&self) -> bool {
        !self.history.is_empty()
    }

    fn highlight(&self, span: TokenRange) -> Result<&Highlight> {
        self.highlights.iter().find(|h| h.span == span).ok_or_else(|| ServiceError::NotHighlighted(span.to_string()))
    }

    fn open(&self) -> Result<()> {
        if self.finalized {
            Err(ServiceError::Finalized)
        } else {
            Ok(())
        }
    }

    fn suggestions(&self, study: &Study, condition: Condition, span: TokenRange) -> Result<SuggestionList> {
        if !condition.shows_suggestions() {
            return Err(ServiceError::SuggestionsDisabled);
        }
        let h = self.highlight(span)?;
        let entry = study.ds.entry(&self.task.route_id)?;
        let env = study.env(&self.env_id)?;
        let cfg = &study.cfg;
        suggestions_for(condition, &study.models, env, &entry.route, &self.instruction, h, cfg.top_k, cfg.replacement_factor)?
            .ok_or(ServiceError::SuggestionsDisabled)
    }

    /// Validates an action against the current state and turns it into an event
    /// body. Also returns the suggestion list when the action opens a menu.
    fn resolve(&self, study: &Study, condition: Condition, action: Action) -> Result<(EventBody, Option<SuggestionList>)> {
        let env = study.env(&self.env_id)?;
        match action {
            Action::Move { target } => {
                self.open()?;
                if !env.is_adjacent(&self.node, &target) {
                    log::warn!("task {}: rejected move {} -> {}", self.task.id, self.node, target);
                    return Err(ServiceError::NotAdjacent { from: self.node.clone(), to: target });
                }
                let heading = env.bearing(env.node_index(&self.node)?, env.node_index(&target)?);
                Ok((EventBody::Move { from: self.node.clone(), to: target, heading }, None))
            }
            Action::Check => {
                self.open()?;
                let success = is_success(env, &self.node, &self.goal)?;
                Ok((EventBody::Check { node: self.node.clone(), success }, None))
            }
            Action::OpenMenu { span } => {
                let list = self.suggestions(study, condition, span)?;
                self.open()?;
                let items = list.items.iter().map(|s| s.candidate.clone()).collect();
                Ok((EventBody::OpenMenu { span, items }, Some(list)))
            }
            Action::Apply { span, candidate, target } => {
                if !condition.shows_suggestions() {
                    return Err(ServiceError::SuggestionsDisabled);
                }
                self.open()?;
                self.highlight(span)?;
                let list = self.served.get(&span).ok_or_else(|| ServiceError::NotServed(candidate.as_str().to_owned()))?;
                let item = list
                    .items
                    .iter()
                    .find(|s| s.candidate == candidate && target.is_none_or(|t| t == s.target))
                    .ok_or_else(|| ServiceError::NotServed(candidate.as_str().to_owned()))?;
                Ok((EventBody::ApplySuggestion { span, candidate, target: item.target }, None))
            }
            Action::Revert => {
                self.open()?;
                let snap = self.history.last().ok_or(ServiceError::NothingToRevert)?;
                Ok((EventBody::Revert { restored_tokens: snap.instruction.tokens.len() }, None))
            }
            Action::Rate(form) => {
                form.validate()?;
                Ok((EventBody::Rating(form), None))
            }
            Action::Submit => {
                self.open()?;
                Ok((EventBody::Submit { node: self.node.clone() }, None))
            }
        }
    }

    /// Applies a recorded event. Live requests and log replay both go through
    /// here, so a replayed session ends in exactly the live state.
    fn apply(&mut self, study: &Study, condition: Condition, body: &EventBody, list: Option<SuggestionList>) -> Result<()> {
        let env = study.env(&self.env_id)?;
        let corrupt = |msg: String| ServiceError::Corrupt(format!("task {}: {msg}", self.task.id));
        match body {
            EventBody::Move { from, to, heading } => {
                if *from != self.node || !env.is_adjacent(from, to) {
                    return Err(corrupt(format!("move {from} -> {to} from {}", self.node)));
                }
                self.node = to.clone();
                self.heading = *heading;
                self.trajectory.push(to.clone());
            }
            EventBody::Check { .. } => {
                self.checks_used += 1;
                self.check_nodes.push(self.node.clone());
                if is_success(env, &self.node, &self.goal)? {
                    self.success = true;
                    self.finalized = true;
                }
            }
            EventBody::OpenMenu { span, items } => {
                let list = match list {
                    Some(l) => l,
                    None => self.suggestions(study, condition, *span)?,
                };
                if list.items.iter().map(|s| &s.candidate).ne(items.iter()) {
                    return Err(corrupt(format!("menu at {span} no longer matches the log")));
                }
                self.served.insert(*span, list);
            }
            EventBody::ApplySuggestion { span, candidate, target } => {
                let h = self.highlight(*span)?.clone();
                let item = self
                    .served
                    .get(span)
                    .and_then(|l| l.items.iter().find(|s| s.candidate == *candidate && s.target == *target))
                    .ok_or_else(|| corrupt(format!("`{}` was never served at {span}", candidate.as_str())))?
                    .clone();
                let next = apply_suggestion(&self.instruction, &h, &item)?;
                let delta = next.tokens.len() as isize - self.instruction.tokens.len() as isize;
                let highlights = self
                    .highlights
                    .iter()
                    .filter(|o| o.span != h.span)
                    .map(|o| if o.span.i > h.span.j { shifted(o, delta) } else { o.clone() })
                    .filter(|o| o.span.j < next.tokens.len() && o.span.text(&next.tokens) == o.text)
                    .collect();
                self.history.push(Snapshot {
                    instruction: std::mem::replace(&mut self.instruction, next),
                    highlights: std::mem::replace(&mut self.highlights, highlights),
                    served: std::mem::take(&mut self.served),
                });
                self.edits += 1;
            }
            EventBody::Revert { .. } => {
                let snap = self.history.pop().ok_or_else(|| corrupt("revert with empty history".into()))?;
                self.instruction = snap.instruction;
                self.highlights = snap.highlights;
                self.served = snap.served;
            }
            EventBody::Rating(form) => self.rating = Some(*form),
            EventBody::Submit { .. } => self.finalized = true,
        }
        Ok(())
    }

    pub fn episode(&self, session: &str, env: &Environment) -> Result<Episode> {
        Ok(Episode {
            id: format!("{session}/{}", self.task.id),
            env_id: self.env_id.clone(),
            start: self.start.clone(),
            goal: self.goal.clone(),
            final_node: self.node.clone(),
            trajectory: self.trajectory.clone(),
            check_nodes: self.check_nodes.clone(),
            checks_used: self.checks_used,
            success: is_success(env, &self.node, &self.goal)?,
        })
    }
}

fn shifted(h: &Highlight, delta: isize) -> Highlight {
    let mv = |x: usize| x.checked_add_signed(delta).expect("highlight after the edit stays in range");
    Highlight {
        span: TokenRange::new(mv(h.span.i), mv(h.span.j)),
        member_spans: h.member_spans.iter().map(|s| PhraseSpan { i: mv(s.i), j: mv(s.j), ..*s }).collect(),
        ..h.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub meta: SessionMeta,
    pub tasks: Vec<TaskState>,
    pub events: Vec<Event>,
}

impl Session {
    pub fn create(study: &Study, id: String, condition: Condition, seed: u64, created_at: u64) -> Result<Self> {
        let tasks = study.assign_tasks(seed)?;
        Self::from_meta(study, SessionMeta { id, condition, seed, created_at, tasks })
    }

    fn from_meta(study: &Study, meta: SessionMeta) -> Result<Self> {
        let tasks = meta.tasks.iter().map(|t| TaskState::new(study, meta.condition, t)).collect::<Result<_>>()?;
        Ok(Self { meta, tasks, events: Vec::new() })
    }

    /// Rebuilds a session from its log.
    pub fn replay(study: &Study, meta: SessionMeta, events: Vec<Event>) -> Result<Self> {
        let mut s = Self::from_meta(study, meta)?;
        for ev in events {
            if ev.session != s.meta.id || ev.seq != s.next_seq() {
                return Err(ServiceError::Corrupt(format!("event {} of session {} is out of order", ev.seq, ev.session)));
            }
            let k = s.task_index(&ev.task)?;
            s.tasks[k].apply(study, s.meta.condition, &ev.body, None)?;
            s.events.push(ev);
        }
        Ok(s)
    }

    pub fn next_seq(&self) -> u64 {
        self.events.len() as u64 + 1
    }

    pub fn task_index(&self, task: &str) -> Result<usize> {
        self.tasks.iter().position(|t| t.task.id == task).ok_or_else(|| ServiceError::UnknownTask(task.to_owned()))
    }

    pub fn task(&self, task: &str) -> Result<&TaskState> {
        Ok(&self.tasks[self.task_index(task)?])
    }

    /// Validates and records one action. `seq`, when given, must be the next
    /// sequence number; stale or reordered requests are refused.
    pub fn act(&mut self, study: &Study, task: &str, seq: Option<u64>, action: Action) -> Result<Event> {
        let expected = self.next_seq();
        if let Some(got) = seq.filter(|&s| s != expected) {
            return Err(ServiceError::Sequence { expected, got });
        }
        let k = self.task_index(task)?;
        let (body, list) = self.tasks[k].resolve(study, self.meta.condition, action)?;
        self.tasks[k].apply(study, self.meta.condition, &body, list)?;
        let ev = Event { session: self.meta.id.clone(), task: task.to_owned(), seq: expected, body };
        self.events.push(ev.clone());
        Ok(ev)
    }

    /// Whether the participant solved the quality-control task within the check budget.
    pub fn qc_passed(&self, study: &Study) -> bool {
        self.tasks.iter().filter(|t| t.task.qc).all(|t| t.success && t.checks_used <= study.cfg.follower.check_budget)
    }

    pub fn view(&self, study: &Study, task: &str) -> Result<TaskView> {
        let t = self.task(task)?;
        let env = study.env(&t.env_id)?;
        let here = env.node_index(&t.node)?;
        let obs = observation_at(env, &t.node, t.heading)?;
        let neighbors = env
            .neighbors(here)
            .iter()
            .map(|&(m, length_m)| {
                let n = &env.nodes()[m];
                NeighborView {
                    node: n.id.clone(),
                    room: n.room_label.clone(),
                    action: env.action_label(here, m, t.heading).phrase().to_owned(),
                    distance_m: length_m,
                }
            })
            .collect();
        let condition = self.meta.condition;
        Ok(TaskView {
            schema_version: SCHEMA_VERSION,
            session: self.meta.id.clone(),
            task: t.task.id.clone(),
            condition,
            flags: Flags { highlights: condition.shows_highlights(), suggestions: condition.shows_suggestions() },
            notice: NOTICE.to_owned(),
            view: NodeView {
                node: t.node.clone(),
                room: obs.room_label.clone(),
                heading: t.heading,
                objects: obs.visible.iter().map(|v| ObjectView { name: v.name.clone(), direction: v.direction }).collect(),
                neighbors,
            },
            instruction: InstructionView {
                text: t.instruction.tokens.join(" "),
                tokens: t.instruction.tokens.clone(),
                highlights: t
                    .highlights
                    .iter()
                    .map(|h| HighlightView { span: h.span.to_string(), i: h.span.i, j: h.span.j, text: h.text.clone() })
                    .collect(),
            },
            checks_used: t.checks_used,
            finalized: t.finalized,
            success: t.success,
            edited: t.edits > 0,
            can_revert: t.can_revert(),
            next_seq: self.next_seq(),
        })
    }
}

// ---------------------------------------------------------------------------
// Payloads

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    pub highlights: bool,
    pub suggestions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub name: String,
    pub direction: Egocentric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborView {
    pub node: String,
    pub room: String,
    pub action: String,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub node: String,
    pub room: String,
    pub heading: f64,
    pub objects: Vec<ObjectView>,
    pub neighbors: Vec<NeighborView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightView {
    /// `i-j`, the form the suggestion endpoint accepts.
    pub span: String,
    pub i: usize,
    pub j: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionView {
    pub tokens: Vec<String>,
    pub text: String,
    pub highlights: Vec<HighlightView>,
}

/// What the client sees of a task. Never carries suggestions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub schema_version: u32,
    pub session: String,
    pub task: String,
    pub condition: Condition,
    pub flags: Flags,
    pub notice: String,
    pub view: NodeView,
    pub instruction: InstructionView,
    pub checks_used: usize,
    pub finalized: bool,
    pub success: bool,
    pub edited: bool,
    pub can_revert: bool,
    pub next_seq: u64,
}
