//! Room, object and direction vocabularies plus the longest-match phrase scanner.
//!
//! The built-in lists live in `data/` and are compiled in. Direction phrases
//! come with a substitution table whose rows are closed under symmetry: if `a`
//! lists `b` as an alternative, `b` lists `a`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROOMS: &str = include_str!("../data/rooms.txt");
const OBJECTS: &str = include_str!("../data/objects.txt");
const DIRECTIONS: &str = include_str!("../data/directions.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhraseKind {
    Room,
    Object,
    Direction,
}

impl PhraseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PhraseKind::Room => "room",
            PhraseKind::Object => "object",
            PhraseKind::Direction => "direction",
        }
    }
}

/// A typed phrase occurrence: tokens `i..=j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhraseSpan {
    pub i: usize,
    pub j: usize,
    pub kind: PhraseKind,
}

impl PhraseSpan {
    pub fn new(i: usize, j: usize, kind: PhraseKind) -> Self {
        debug_assert!(i <= j);
        Self { i, j, kind }
    }

    pub fn len(&self) -> usize {
        self.j - self.i + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn text(&self, tokens: &[String]) -> String {
        tokens[self.i..=self.j].join(" ")
    }

    pub fn overlaps(&self, other: &PhraseSpan) -> bool {
        self.i <= other.j && other.i <= self.j
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionLabel {
    #[serde(rename = "turn left")]
    TurnLeft,
    #[serde(rename = "turn right")]
    TurnRight,
    #[serde(rename = "go straight")]
    GoStraight,
    #[serde(rename = "turn around")]
    TurnAround,
    #[serde(rename = "go up")]
    GoUp,
    #[serde(rename = "go down")]
    GoDown,
}

impl ActionLabel {
    pub fn phrase(self) -> &'static str {
        match self {
            ActionLabel::TurnLeft => "turn left",
            ActionLabel::TurnRight => "turn right",
            ActionLabel::GoStraight => "go straight",
            ActionLabel::TurnAround => "turn around",
            ActionLabel::GoUp => "go up",
            ActionLabel::GoDown => "go down",
        }
    }
}

/// Spatial relation expressed by a non-action direction phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    /// object on the left or right
    Past,
    /// object ahead
    Toward,
    /// object behind
    AwayFrom,
    /// room entered by the move
    Into,
    /// room left by the move
    OutOf,
    /// anything the templates never ground
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionSense {
    Action(ActionLabel),
    Relation(Relation),
}

/// Which noun kind a relation (or context word) expects to its right.
pub fn relation_slot(rel: Relation) -> Option<PhraseKind> {
    match rel {
        Relation::Past | Relation::Toward | Relation::AwayFrom => Some(PhraseKind::Object),
        Relation::Into | Relation::OutOf => Some(PhraseKind::Room),
        Relation::Other => None,
    }
}

/// Plain words that fix the slot kind of the noun after them.
pub fn context_slot(word: &str) -> Option<PhraseKind> {
    match word {
        "in" => Some(PhraseKind::Room),
        "near" => Some(PhraseKind::Object),
        _ => None,
    }
}

pub fn direction_sense(phrase: &str) -> DirectionSense {
    use ActionLabel::*;
    match phrase {
        "turn left" => DirectionSense::Action(TurnLeft),
        "turn right" => DirectionSense::Action(TurnRight),
        "go straight" | "forward" => DirectionSense::Action(GoStraight),
        "turn around" | "backward" => DirectionSense::Action(TurnAround),
        "go up" => DirectionSense::Action(GoUp),
        "go down" => DirectionSense::Action(GoDown),
        "past" => DirectionSense::Relation(Relation::Past),
        "toward" => DirectionSense::Relation(Relation::Toward),
        "away from" => DirectionSense::Relation(Relation::AwayFrom),
        "into" | "enter" => DirectionSense::Relation(Relation::Into),
        "out of" | "exit" => DirectionSense::Relation(Relation::OutOf),
        _ => DirectionSense::Relation(Relation::Other),
    }
}

/// Symmetric substitution table for direction phrases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionTable {
    rows: BTreeMap<String, Vec<String>>,
}

impl DirectionTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (head, rest) = line.split_once("->").ok_or_else(|| Error::Format {
                line: n + 1,
                msg: "expected `phrase -> alternatives`".into(),
            })?;
            let head = normalize(head);
            for alt in rest.split('|').map(normalize).filter(|a| !a.is_empty()) {
                if alt == head {
                    continue;
                }
                rows.entry(head.clone()).or_default().insert(alt.clone());
                rows.entry(alt).or_default().insert(head.clone());
            }
        }
        Ok(Self { rows: rows.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect() })
    }

    pub fn row(&self, phrase: &str) -> Option<&[String]> {
        self.rows.get(phrase).map(Vec::as_slice)
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn parse_list(text: &str) -> Vec<String> {
    let set: BTreeSet<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(normalize)
        .collect();
    set.into_iter().collect()
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    rooms: Vec<String>,
    objects: Vec<String>,
    directions: DirectionTable,
    index: HashMap<Vec<String>, PhraseKind>,
    max_words: usize,
}

impl Lexicon {
    pub fn new(rooms: Vec<String>, objects: Vec<String>, directions: DirectionTable) -> Result<Self> {
        let mut index = HashMap::new();
        let mut max_words = 0;
        let entries = rooms
            .iter()
            .map(|p| (p.as_str(), PhraseKind::Room))
            .chain(objects.iter().map(|p| (p.as_str(), PhraseKind::Object)))
            .chain(directions.phrases().map(|p| (p, PhraseKind::Direction)));
        for (phrase, kind) in entries {
            let words: Vec<String> = phrase.split(' ').map(str::to_owned).collect();
            max_words = max_words.max(words.len());
            if let Some(prev) = index.insert(words, kind) {
                if prev != kind {
                    return Err(Error::InvalidConfig(format!(
                        "phrase `{phrase}` is both {} and {}",
                        prev.as_str(),
                        kind.as_str()
                    )));
                }
            }
        }
        Ok(Self { rooms, objects, directions, index, max_words })
    }

    /// The compiled-in vocabularies.
    pub fn builtin() -> &'static Lexicon {
        static LEXICON: OnceLock<Lexicon> = OnceLock::new();
        LEXICON.get_or_init(|| {
            let table = DirectionTable::parse(DIRECTIONS).expect("built-in direction table");
            Lexicon::new(parse_list(ROOMS), parse_list(OBJECTS), table).expect("built-in lexicon")
        })
    }

    pub fn rooms(&self) -> &[String] {
        &self.rooms
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn directions(&self) -> &DirectionTable {
        &self.directions
    }

    pub fn kind_of(&self, phrase: &str) -> Option<PhraseKind> {
        let words: Vec<String> = phrase.split(' ').map(str::to_owned).collect();
        self.index.get(&words).copied()
    }

    /// Leftmost-longest scan. Returns sorted, non-overlapping spans.
    pub fn extract_phrases(&self, tokens: &[String]) -> Vec<PhraseSpan> {
        let mut spans = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = (1..=self.max_words.min(tokens.len() - i)).rev().find_map(|len| {
                self.index.get(&tokens[i..i + len]).map(|&kind| (len, kind))
            });
            match longest {
                Some((len, kind)) => {
                    spans.push(PhraseSpan::new(i, i + len - 1, kind));
                    i += len;
                }
                None => i += 1,
            }
        }
        spans
    }
}

pub fn extract_phrases(tokens: &[String]) -> Vec<PhraseSpan> {
    Lexicon::builtin().extract_phrases(tokens)
}

/// Lowercase and split on whitespace, detaching `,` and `.` as their own tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if ch == ',' || ch == '.' {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.extend(ch.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

pub fn is_delimiter(tok: &str) -> bool {
    tok == "," || tok == "."
}
