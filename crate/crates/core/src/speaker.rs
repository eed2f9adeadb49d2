//! Templated instruction generation with gold annotations, and seeded
//! corruption that injects hallucinations at configurable rates.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::env::{Egocentric, Environment, Route};
use crate::error::{Error, Result};
use crate::lexicon::{is_delimiter, Lexicon, PhraseKind};
use crate::perturb::{self, ReplacementSource};
use crate::rng::{derive_seed, derive_seed_str, rng};

pub use crate::lexicon::PhraseSpan;

pub const MAX_TOKENS: usize = 60;
pub const REMOVE_TOKEN: &str = "[REMOVE]";

/// A correction: replace with a phrase, or delete.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Correction {
    Phrase(String),
    Remove,
}

impl Correction {
    pub fn as_str(&self) -> &str {
        match self {
            Correction::Phrase(p) => p,
            Correction::Remove => REMOVE_TOKEN,
        }
    }

    pub fn is_remove(&self) -> bool {
        matches!(self, Correction::Remove)
    }

    pub fn parse(s: &str) -> Self {
        if s == REMOVE_TOKEN {
            Correction::Remove
        } else {
            Correction::Phrase(s.to_owned())
        }
    }
}

/// Lexicographic by phrase, `[REMOVE]` after every phrase.
impl Ord for Correction {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use Correction::*;
        match (self, other) {
            (Phrase(a), Phrase(b)) => a.cmp(b),
            (Phrase(_), Remove) => std::cmp::Ordering::Less,
            (Remove, Phrase(_)) => std::cmp::Ordering::Greater,
            (Remove, Remove) => std::cmp::Ordering::Equal,
        }
    }
}

impl PartialOrd for Correction {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Correction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Correction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Correction::parse(&String::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HallucinationType {
    Intrinsic,
    Extrinsic,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub is_hallucination: bool,
    pub h_type: HallucinationType,
    pub gold_correction: Option<Correction>,
}

impl GoldLabel {
    pub fn clean() -> Self {
        Self { is_hallucination: false, h_type: HallucinationType::None, gold_correction: None }
    }

    pub fn intrinsic(original: String) -> Self {
        Self {
            is_hallucination: true,
            h_type: HallucinationType::Intrinsic,
            gold_correction: Some(Correction::Phrase(original)),
        }
    }

    pub fn extrinsic() -> Self {
        Self { is_hallucination: true, h_type: HallucinationType::Extrinsic, gold_correction: Some(Correction::Remove) }
    }
}

/// Token range `start..end` of a clause; `end` includes the delimiter if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Clause {
    pub start: usize,
    pub end: usize,
    pub delimited: bool,
}

impl Clause {
    /// Tokens without the trailing delimiter.
    pub fn words(&self) -> std::ops::Range<usize> {
        self.start..if self.delimited { self.end - 1 } else { self.end }
    }

    pub fn contains(&self, tok: usize) -> bool {
        (self.start..self.end).contains(&tok)
    }
}

/// Splits tokens into comma- or period-delimited clauses covering every token.
pub fn clauses_of(tokens: &[String]) -> Vec<Clause> {
    split_on(tokens, is_delimiter)
}

/// Period-delimited sentences covering every token.
pub fn sentences_of(tokens: &[String]) -> Vec<Clause> {
    split_on(tokens, |t| t == ".")
}

fn split_on(tokens: &[String], is_end: impl Fn(&str) -> bool) -> Vec<Clause> {
    let mut out = Vec::new();
    let mut start = 0;
    for (k, t) in tokens.iter().enumerate() {
        if is_end(t) {
            out.push(Clause { start, end: k + 1, delimited: true });
            start = k + 1;
        }
    }
    if start < tokens.len() {
        out.push(Clause { start, end: tokens.len(), delimited: false });
    }
    out
}

/// An instruction with typed phrase spans, clause-to-step alignment and gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedInstruction {
    pub tokens: Vec<String>,
    pub phrase_spans: Vec<PhraseSpan>,
    /// One entry per clause: the route position it describes, or `None` for
    /// inserted material.
    pub alignment: Vec<Option<usize>>,
    pub gold: Vec<GoldLabel>,
}

impl AnnotatedInstruction {
    /// Annotates raw tokens with extracted spans, clean labels and no alignment metadata.
    pub fn unaligned(tokens: Vec<String>) -> Self {
        let phrase_spans = Lexicon::builtin().extract_phrases(&tokens);
        let gold = vec![GoldLabel::clean(); phrase_spans.len()];
        let alignment = vec![None; clauses_of(&tokens).len()];
        Self { tokens, phrase_spans, alignment, gold }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn clauses(&self) -> Vec<Clause> {
        clauses_of(&self.tokens)
    }

    pub fn sentence_bounds(&self) -> Vec<std::ops::Range<usize>> {
        sentences_of(&self.tokens).iter().map(|c| c.start..c.end).collect()
    }

    pub fn clause_index_of(&self, tok: usize) -> Option<usize> {
        self.clauses().iter().position(|c| c.contains(tok))
    }

    pub fn span_text(&self, idx: usize) -> String {
        self.phrase_spans[idx].text(&self.tokens)
    }

    pub fn hallucination_count(&self) -> usize {
        self.gold.iter().filter(|g| g.is_hallucination).count()
    }

    pub fn has_hallucination(&self) -> bool {
        self.gold.iter().any(|g| g.is_hallucination)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidExample(format!("{msg}: `{}`", self.text())));
        if self.tokens.len() > MAX_TOKENS {
            return bad("too many tokens");
        }
        if self.gold.len() != self.phrase_spans.len() {
            return bad("gold labels not parallel to spans");
        }
        if self.alignment.len() != self.clauses().len() {
            return bad("alignment not parallel to clauses");
        }
        for w in self.phrase_spans.windows(2) {
            if w[0].j >= w[1].i {
                return bad("spans overlap or are unsorted");
            }
        }
        if self.phrase_spans.iter().any(|s| s.i > s.j || s.j >= self.tokens.len()) {
            return bad("span out of bounds");
        }
        for g in &self.gold {
            let consistent = match g.h_type {
                HallucinationType::None => !g.is_hallucination && g.gold_correction.is_none(),
                HallucinationType::Intrinsic => g.is_hallucination && g.gold_correction.is_some(),
                HallucinationType::Extrinsic => g.is_hallucination && g.gold_correction == Some(Correction::Remove),
            };
            if !consistent {
                return bad("inconsistent gold label");
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Route description

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StepTemplate {
    Past,
    Toward,
    AwayFrom,
    Into,
    OutOf,
    Plain,
}

fn words(s: &str) -> Vec<String> {
    s.split(' ').map(str::to_owned).collect()
}

struct ClauseBuilder {
    tokens: Vec<String>,
    spans: Vec<PhraseSpan>,
}

impl ClauseBuilder {
    fn new() -> Self {
        Self { tokens: Vec::new(), spans: Vec::new() }
    }

    fn filler(&mut self, s: &str) -> &mut Self {
        self.tokens.extend(words(s));
        self
    }

    fn phrase(&mut self, s: &str, kind: PhraseKind) -> &mut Self {
        let i = self.tokens.len();
        self.tokens.extend(words(s));
        self.spans.push(PhraseSpan::new(i, self.tokens.len() - 1, kind));
        self
    }
}

fn step_clause(template: StepTemplate, action: &str, object: &str, room: &str) -> ClauseBuilder {
    use PhraseKind::*;
    let mut c = ClauseBuilder::new();
    match template {
        StepTemplate::Past | StepTemplate::Toward | StepTemplate::AwayFrom => {
            let rel = match template {
                StepTemplate::Past => "past",
                StepTemplate::Toward => "toward",
                _ => "away from",
            };
            c.filler("walk").phrase(rel, Direction).filler("the").phrase(object, Object).filler("and").phrase(action, Direction);
        }
        StepTemplate::Into => {
            c.phrase(action, Direction).filler("and walk").phrase("into", Direction).filler("the").phrase(room, Room);
        }
        StepTemplate::OutOf => {
            c.filler("walk").phrase("out of", Direction).filler("the").phrase(room, Room).filler("and").phrase(action, Direction);
        }
        StepTemplate::Plain => {
            c.phrase(action, Direction);
        }
    }
    c.filler(".");
    c
}

/// Describes `route` with seeded templates. The output is grounded by construction.
pub fn describe_route(env: &Environment, route: &Route, seed: u64) -> Result<AnnotatedInstruction> {
    route.validate(env)?;
    let mut rng = rng(derive_seed_str(seed, "describe"));
    let len = route.len();
    let mut clauses: Vec<ClauseBuilder> = Vec::with_capacity(len + 1);
    let mut plain: Vec<ClauseBuilder> = Vec::with_capacity(len);
    for t in 0..len {
        let obs = route.observation(t);
        let next_room = &route.observation(t + 1).room_label;
        let action = route.steps[t].action.direction_label.phrase();
        let side: Vec<&str> = obs
            .visible
            .iter()
            .filter(|v| matches!(v.direction, Egocentric::Left | Egocentric::Right))
            .map(|v| v.name.as_str())
            .collect();
        let ahead: Vec<&str> =
            obs.visible.iter().filter(|v| v.direction == Egocentric::Ahead).map(|v| v.name.as_str()).collect();
        let behind: Vec<&str> =
            obs.visible.iter().filter(|v| v.direction == Egocentric::Behind).map(|v| v.name.as_str()).collect();
        // An object name seen twice at one node in different quadrants never happens: names are distinct per node.
        let mut options: Vec<(StepTemplate, u32, &str)> = vec![(StepTemplate::Plain, 1, "")];
        if let Some(o) = side.choose(&mut rng) {
            options.push((StepTemplate::Past, 3, o));
        }
        if let Some(o) = ahead.choose(&mut rng) {
            options.push((StepTemplate::Toward, 2, o));
        }
        if let Some(o) = behind.choose(&mut rng) {
            options.push((StepTemplate::AwayFrom, 1, o));
        }
        if next_room != &obs.room_label {
            options.push((StepTemplate::Into, 3, ""));
            options.push((StepTemplate::OutOf, 2, ""));
        }
        let &(template, _, object) = options.choose_weighted(&mut rng, |o| o.1).expect("non-empty options");
        let room = if template == StepTemplate::OutOf { &obs.room_label } else { next_room };
        clauses.push(step_clause(template, action, object, room));
        plain.push(step_clause(StepTemplate::Plain, action, "", ""));
    }
    let arrival = &route.arrival;
    let mut last = ClauseBuilder::new();
    match arrival.visible.choose(&mut rng) {
        Some(v) if rng.gen_bool(0.4) => {
            last.filler("stop near the").phrase(&v.name, PhraseKind::Object);
        }
        _ => {
            last.filler("stop in the").phrase(&arrival.room_label, PhraseKind::Room);
        }
    }
    last.filler(".");

    // Fall back to plain clauses, earliest first, until the token cap holds.
    let total = |cs: &[ClauseBuilder]| cs.iter().map(|c| c.tokens.len()).sum::<usize>() + last.tokens.len();
    let mut k = 0;
    while total(&clauses) > MAX_TOKENS && k < clauses.len() {
        clauses[k] = std::mem::replace(&mut plain[k], ClauseBuilder::new());
        k += 1;
    }
    clauses.push(last);

    let mut tokens = Vec::new();
    let mut phrase_spans = Vec::new();
    for c in &clauses {
        let off = tokens.len();
        phrase_spans.extend(c.spans.iter().map(|s| PhraseSpan::new(s.i + off, s.j + off, s.kind)));
        tokens.extend(c.tokens.iter().cloned());
    }
    let gold = vec![GoldLabel::clean(); phrase_spans.len()];
    let ann = AnnotatedInstruction { tokens, phrase_spans, alignment: (0..=len).map(Some).collect(), gold };
    ann.validate()?;
    Ok(ann)
}

// ---------------------------------------------------------------------------
// Corruption

/// Corruption probabilities. An instruction is corrupted with probability
/// `instruction`; a corrupted one has each phrase perturbed at its kind's rate
/// and one extrinsic sentence inserted at `extrinsic`, with at least one and at
/// most `max_hallucinations` injections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionRates {
    pub instruction: f64,
    pub room: f64,
    pub object: f64,
    pub direction: f64,
    pub extrinsic: f64,
    pub max_hallucinations: usize,
}

impl CorruptionRates {
    pub fn zero() -> Self {
        Self { instruction: 0.0, room: 0.0, object: 0.0, direction: 0.0, extrinsic: 0.0, max_hallucinations: 3 }
    }

    /// Rates tuned so that generated corpora match the reported speaker
    /// statistics: about two thirds of instructions carry a hallucination and
    /// about a fifth of all phrases are hallucinated.
    pub fn calibrated() -> Self {
        Self { instruction: 0.69, room: 0.3, object: 0.3, direction: 0.3, extrinsic: 0.2, max_hallucinations: 6 }
    }

    fn for_kind(&self, kind: PhraseKind) -> f64 {
        match kind {
            PhraseKind::Room => self.room,
            PhraseKind::Object => self.object,
            PhraseKind::Direction => self.direction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.instruction, self.room, self.object, self.direction, self.extrinsic] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!("rate {r} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

impl Default for CorruptionRates {
    fn default() -> Self {
        Self::calibrated()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Injection {
    Span(usize),
    Sentence,
}

/// Injects hallucinations into a clean instruction.
///
/// `donors` supplies candidate sentences for extrinsic insertion. Spans are
/// perturbed right to left so earlier indices stay valid; the insertion
/// happens last.
pub fn corrupt_instruction(
    env: &Environment,
    route: &Route,
    ann: &AnnotatedInstruction,
    rates: &CorruptionRates,
    donors: &[Vec<String>],
    seed: u64,
) -> Result<AnnotatedInstruction> {
    rates.validate()?;
    let mut rng = rng(derive_seed_str(seed, "corrupt"));
    if !rng.gen_bool(rates.instruction) {
        return Ok(ann.clone());
    }
    let mut chosen: Vec<Injection> = Vec::new();
    for (k, span) in ann.phrase_spans.iter().enumerate() {
        if !ann.gold[k].is_hallucination && rng.gen_bool(rates.for_kind(span.kind)) {
            chosen.push(Injection::Span(k));
        }
    }
    if !donors.is_empty() && rng.gen_bool(rates.extrinsic) {
        chosen.push(Injection::Sentence);
    }
    if chosen.is_empty() {
        let mut options: Vec<Injection> =
            (0..ann.phrase_spans.len()).filter(|&k| !ann.gold[k].is_hallucination).map(Injection::Span).collect();
        if !donors.is_empty() {
            options.push(Injection::Sentence);
        }
        chosen.extend(options.choose(&mut rng).copied());
    }
    if chosen.len() > rates.max_hallucinations {
        chosen = chosen.choose_multiple(&mut rng, rates.max_hallucinations).copied().collect();
    }
    let mut spans: Vec<usize> = chosen
        .iter()
        .filter_map(|c| match c {
            Injection::Span(k) => Some(*k),
            Injection::Sentence => None,
        })
        .collect();
    spans.sort_unstable_by(|a, b| b.cmp(a));

    let mut out = ann.clone();
    for (n, k) in spans.into_iter().enumerate() {
        let s = derive_seed(seed, n as u64);
        let res = perturb::perturb_span(env, route, &out, k, ReplacementSource::Default, s);
        match res {
            Ok((next, _)) if next.tokens.len() <= MAX_TOKENS => out = next,
            Ok(_) | Err(Error::NoReplacement(_)) | Err(Error::NotInTable(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if chosen.contains(&Injection::Sentence) {
        let donor = donors.choose(&mut rng).expect("donors checked non-empty");
        match perturb::insert_extrinsic(&out, donor, derive_seed_str(seed, "insert")) {
            Ok((next, _)) => out = next,
            Err(Error::TooLong(_)) => {}
            Err(e) => return Err(e),
        }
    }
    out.validate()?;
    Ok(out)
}

/// Sentences usable as extrinsic donors: every non-final sentence with at least one phrase.
pub fn donor_sentences(ann: &AnnotatedInstruction) -> Vec<Vec<String>> {
    sentences_of(&ann.tokens)
        .into_iter()
        .filter(|s| ann.phrase_spans.iter().any(|p| s.contains(p.i)))
        .filter(|s| !ann.tokens[s.start..s.end].iter().any(|t| t == "stop"))
        .map(|s| ann.tokens[s.start..s.end].to_vec())
        .collect()
}
