//! A scripted instruction follower standing in for human participants.

use serde::{Deserialize, Serialize};

use crate::env::{quadrant, Egocentric, Environment};
use crate::error::{Error, Result};
use crate::lexicon::{direction_sense, is_delimiter, DirectionSense, Lexicon, PhraseKind, PhraseSpan, Relation};
use crate::remedy::{Highlight, SuggestionList, TokenRange};
use crate::speaker::{clauses_of, Correction};

use super::metrics::{is_success, Episode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowerMode {
    /// follows every phrase as written and never backtracks
    Literal,
    /// ignores highlighted phrases and backtracks to highlighted decisions after a failed check
    HighlightAware,
    /// applies the top suggestion at every highlight, then acts as `HighlightAware`
    SuggestionAware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FollowerPolicy {
    pub mode: FollowerMode,
    pub check_budget: usize,
    pub seed: u64,
    pub direction_weight: f64,
    pub room_weight: f64,
    pub object_weight: f64,
}

impl Default for FollowerPolicy {
    fn default() -> Self {
        Self {
            mode: FollowerMode::Literal,
            check_budget: 4,
            seed: 0,
            direction_weight: 3.0,
            room_weight: 2.0,
            object_weight: 1.0,
        }
    }
}

impl FollowerPolicy {
    pub fn new(mode: FollowerMode) -> Self {
        Self { mode, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.check_budget == 0 {
            return Err(Error::InvalidConfig("check budget must be at least 1".into()));
        }
        Ok(())
    }
}

/// One clause as the follower reads it.
#[derive(Debug, Clone)]
struct ClausePlan {
    tokens: Vec<String>,
    /// spans in local coordinates, with whether the phrase is ignored
    spans: Vec<(PhraseSpan, bool)>,
    /// the follower may revisit this decision after a failed check
    uncertain: bool,
    /// staying put is tried before any move
    skip_first: bool,
    stop: bool,
}

fn local_spans(tokens: &[String]) -> Vec<(PhraseSpan, bool)> {
    Lexicon::builtin().extract_phrases(tokens).into_iter().map(|s| (s, false)).collect()
}

fn build_plans(
    tokens: &[String],
    highlights: &[Highlight],
    suggestions: &[Option<SuggestionList>],
    mode: FollowerMode,
) -> Vec<ClausePlan> {
    let spans = Lexicon::builtin().extract_phrases(tokens);
    let mut plans = Vec::new();
    for clause in clauses_of(tokens) {
        let words = clause.words();
        if words.is_empty() {
            continue;
        }
        let local: Vec<String> = tokens[words.clone()].to_vec();
        let off = words.start;
        let mut plan = ClausePlan {
            stop: local.iter().any(|t| t == "stop"),
            spans: Vec::new(),
            tokens: local,
            uncertain: false,
            skip_first: false,
        };
        let members: Vec<PhraseSpan> = spans.iter().filter(|s| words.contains(&s.i)).copied().collect();
        let covering = |s: &PhraseSpan| highlights.iter().position(|h| h.span.contains(&TokenRange::from(*s)));
        let flagged: Vec<Option<usize>> =
            if mode == FollowerMode::Literal { vec![None; members.len()] } else { members.iter().map(covering).collect() };
        plan.spans = members
            .iter()
            .zip(&flagged)
            .map(|(s, h)| (PhraseSpan::new(s.i - off, s.j - off, s.kind), h.is_some()))
            .collect();
        plan.uncertain = flagged.iter().any(Option::is_some);
        plan.skip_first = !flagged.is_empty() && flagged.iter().all(Option::is_some);

        if mode == FollowerMode::SuggestionAware && plan.uncertain {
            let mut hs: Vec<usize> = flagged.iter().flatten().copied().collect();
            hs.dedup();
            // right to left so local offsets stay valid
            hs.sort_by_key(|&h| std::cmp::Reverse(highlights[h].span.i));
            let mut removed = false;
            let mut edited = false;
            for h in hs {
                let Some(Some(list)) = suggestions.get(h) else { continue };
                let Some(top) = list.items.first() else { continue };
                let t = top.target;
                if t.i < off || t.j >= off + plan.tokens.len() {
                    continue;
                }
                let (a, b) = (t.i - off, t.j - off);
                match &top.candidate {
                    Correction::Remove if a == 0 && b + 1 == plan.tokens.len() => removed = true,
                    Correction::Remove => {
                        plan.tokens.drain(a..=b);
                        edited = true;
                    }
                    Correction::Phrase(p) => {
                        plan.tokens.splice(a..=b, p.split(' ').map(str::to_owned));
                        edited = true;
                    }
                }
            }
            if removed {
                continue;
            }
            if edited {
                // suggested phrases are trusted but the decision stays revisitable
                plan.spans = local_spans(&plan.tokens);
                plan.skip_first = false;
            }
        }
        plans.push(plan);
    }
    plans
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Choice {
    Stay,
    Move(usize),
}

fn attached_noun(plan: &ClausePlan, k: usize) -> Option<usize> {
    let (s, _) = plan.spans[k];
    let (next, _) = *plan.spans.get(k + 1)?;
    match next.i - s.j {
        1 => Some(k + 1),
        2 if plan.tokens[s.j + 1] == "the" => Some(k + 1),
        _ => None,
    }
}

fn move_score(env: &Environment, plan: &ClausePlan, c: usize, n: usize, heading: f64, policy: &FollowerPolicy) -> f64 {
    let nodes = env.nodes();
    let mut score = 0.0;
    let mut consumed = vec![false; plan.spans.len()];
    for k in 0..plan.spans.len() {
        let (s, ignored) = plan.spans[k];
        if ignored || consumed[k] || s.kind != PhraseKind::Direction {
            continue;
        }
        let text = s.text(&plan.tokens);
        match direction_sense(&text) {
            DirectionSense::Action(a) => {
                if env.action_label(c, n, heading) == a {
                    score += policy.direction_weight;
                }
            }
            DirectionSense::Relation(rel) => {
                let Some(m) = attached_noun(plan, k) else { continue };
                let (noun, noun_ignored) = plan.spans[m];
                if noun_ignored {
                    continue;
                }
                consumed[m] = true;
                let name = noun.text(&plan.tokens);
                match (rel, noun.kind) {
                    (Relation::Into, PhraseKind::Room) => {
                        if nodes[n].room_label == name {
                            score += policy.room_weight;
                        }
                    }
                    (Relation::OutOf, PhraseKind::Room) => {
                        if nodes[c].room_label == name && nodes[n].room_label != name {
                            score += policy.room_weight;
                        }
                    }
                    (Relation::Past | Relation::Toward | Relation::AwayFrom, PhraseKind::Object) => {
                        let want = |q: Egocentric| match rel {
                            Relation::Past => matches!(q, Egocentric::Left | Egocentric::Right),
                            Relation::Toward => q == Egocentric::Ahead,
                            _ => q == Egocentric::Behind,
                        };
                        let b = env.bearing(c, n);
                        if nodes[c].objects.iter().any(|o| o.name == name && want(quadrant(o.bearing - b))) {
                            score += policy.object_weight;
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    for k in 0..plan.spans.len() {
        let (s, ignored) = plan.spans[k];
        if ignored || consumed[k] {
            continue;
        }
        let name = s.text(&plan.tokens);
        match s.kind {
            PhraseKind::Room if nodes[n].room_label == name => score += policy.room_weight,
            PhraseKind::Object if nodes[n].objects.iter().any(|o| o.name == name) => score += policy.object_weight,
            _ => {}
        }
    }
    score
}

fn options(env: &Environment, plan: &ClausePlan, c: usize, heading: f64, policy: &FollowerPolicy) -> Vec<Choice> {
    if plan.stop {
        return vec![Choice::Stay];
    }
    let mut moves: Vec<(f64, &str, usize)> = env
        .neighbors(c)
        .iter()
        .map(|&(n, _)| (move_score(env, plan, c, n, heading, policy), env.nodes()[n].id.as_str(), n))
        .collect();
    moves.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let mut out = Vec::with_capacity(moves.len() + 1);
    if plan.skip_first {
        out.push(Choice::Stay);
    }
    out.extend(moves.into_iter().map(|m| Choice::Move(m.2)));
    out
}

struct Pass {
    nodes: Vec<usize>,
    /// per clause: node and heading before it, and how many options it had
    before: Vec<(usize, f64, usize)>,
}

fn walk(env: &Environment, plans: &[ClausePlan], start: usize, heading: f64, choice: &[usize], policy: &FollowerPolicy) -> Pass {
    let (mut c, mut h) = (start, heading);
    let mut pass = Pass { nodes: vec![c], before: Vec::with_capacity(plans.len()) };
    for (k, plan) in plans.iter().enumerate() {
        let opts = options(env, plan, c, h, policy);
        let n_opts = if plan.uncertain { opts.len() } else { 1 };
        pass.before.push((c, h, n_opts));
        if let Some(Choice::Move(n)) = opts.get(choice[k].min(opts.len().saturating_sub(1))) {
            h = env.bearing(c, *n);
            c = *n;
            pass.nodes.push(c);
        }
    }
    pass
}

/// Follows `tokens` from `start` and reports where the follower ends up.
#[allow(clippy::too_many_arguments)]
pub fn simulate_follower(
    env: &Environment,
    id: &str,
    start: &str,
    start_heading: f64,
    tokens: &[String],
    highlights: &[Highlight],
    suggestions: &[Option<SuggestionList>],
    goal: &str,
    policy: &FollowerPolicy,
) -> Result<Episode> {
    policy.validate()?;
    if tokens.iter().all(|t| is_delimiter(t)) && !tokens.is_empty() {
        return Err(Error::InvalidExample("instruction has no words".into()));
    }
    let start_idx = env.node_index(start)?;
    env.node_index(goal)?;
    let plans = build_plans(tokens, highlights, suggestions, policy.mode);
    let mut choice = vec![0usize; plans.len()];
    let mut pass = walk(env, &plans, start_idx, start_heading, &choice, policy);
    let mut trajectory: Vec<usize> = pass.nodes.clone();
    let mut check_nodes = Vec::new();
    let mut success;
    loop {
        let here = *trajectory.last().unwrap();
        let here_id = &env.nodes()[here].id;
        check_nodes.push(here_id.clone());
        success = is_success(env, here_id, goal)?;
        if success || policy.mode == FollowerMode::Literal || check_nodes.len() >= policy.check_budget {
            break;
        }
        let Some(u) = (0..plans.len()).rev().find(|&u| plans[u].uncertain && choice[u] + 1 < pass.before[u].2) else {
            break;
        };
        choice[u] += 1;
        choice[u + 1..].iter_mut().for_each(|c| *c = 0);
        let (node, heading, _) = pass.before[u];
        // walk back to the decision point, then retry from there
        let back = env.shortest_hops(here, node);
        trajectory.extend(back.into_iter().skip(1));
        let retry = walk(env, &plans[u..], node, heading, &choice[u..], policy);
        trajectory.extend(retry.nodes.iter().skip(1));
        let mut before = pass.before[..u].to_vec();
        before.extend(retry.before);
        pass = Pass { nodes: Vec::new(), before };
    }
    let final_node = env.nodes()[*trajectory.last().unwrap()].id.clone();
    Ok(Episode {
        id: id.into(),
        env_id: env.id().into(),
        start: start.into(),
        goal: goal.into(),
        final_node,
        trajectory: trajectory.iter().map(|&n| env.nodes()[n].id.clone()).collect(),
        checks_used: check_nodes.len(),
        check_nodes,
        success,
    })
}
