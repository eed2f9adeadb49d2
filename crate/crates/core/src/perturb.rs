//! Synthetic hallucinations, classification pairs and candidate corrections.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, Route};
use crate::error::{Error, Result};
use crate::lexicon::{DirectionTable, Lexicon, PhraseKind, PhraseSpan};
use crate::rng::{derive_seed, rng, Rng};
use crate::speaker::{
    sentences_of, AnnotatedInstruction, Correction, GoldLabel, HallucinationType, MAX_TOKENS, REMOVE_TOKEN,
};

pub const BH: &str = "[BH]";
pub const EH: &str = "[EH]";

/// Where room and object replacements are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacementSource {
    /// rooms from the global list, objects from the same instruction
    #[default]
    Default,
    /// rooms from the same environment, objects seen along the route
    SameEnvSwap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Replace(PhraseKind),
    Insert,
}

/// Enough to undo one perturbation: tokens `at..at + inserted.len()` replaced `removed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub kind: PerturbationKind,
    pub at: usize,
    pub removed: Vec<String>,
    pub inserted: Vec<String>,
    /// object replacement fell back to the environment vocabulary
    pub fallback: bool,
}

impl PerturbationRecord {
    pub fn invert(&self, tokens: &[String]) -> Vec<String> {
        let mut out = tokens[..self.at].to_vec();
        out.extend(self.removed.iter().cloned());
        out.extend(tokens[self.at + self.inserted.len()..].iter().cloned());
        out
    }
}

fn words(s: &str) -> Vec<String> {
    s.split(' ').map(str::to_owned).collect()
}

fn check_kind(ann: &AnnotatedInstruction, idx: usize, kind: PhraseKind) -> Result<PhraseSpan> {
    let span = *ann
        .phrase_spans
        .get(idx)
        .ok_or_else(|| Error::InvalidExample(format!("no span #{idx}")))?;
    if span.kind != kind {
        return Err(Error::WrongSpanKind { i: span.i, j: span.j, expected: kind.as_str() });
    }
    Ok(span)
}

/// Replaces span `idx` with `phrase`, marking it as an intrinsic hallucination.
pub fn replace_span(ann: &AnnotatedInstruction, idx: usize, phrase: &str) -> (AnnotatedInstruction, PerturbationRecord) {
    let span = ann.phrase_spans[idx];
    let new_words = words(phrase);
    let removed = ann.tokens[span.i..=span.j].to_vec();
    let delta = new_words.len() as isize - removed.len() as isize;
    let mut out = ann.clone();
    out.tokens.splice(span.i..=span.j, new_words.iter().cloned());
    out.phrase_spans[idx].j = span.i + new_words.len() - 1;
    for s in out.phrase_spans.iter_mut().skip(idx + 1) {
        s.i = (s.i as isize + delta) as usize;
        s.j = (s.j as isize + delta) as usize;
    }
    if !out.gold[idx].is_hallucination {
        out.gold[idx] = GoldLabel::intrinsic(removed.join(" "));
    }
    let record = PerturbationRecord {
        kind: PerturbationKind::Replace(span.kind),
        at: span.i,
        removed,
        inserted: new_words,
        fallback: false,
    };
    (out, record)
}

fn pick_other<'a>(pool: impl IntoIterator<Item = &'a String>, original: &str, rng: &mut Rng) -> Option<String> {
    let options: BTreeSet<&String> = pool.into_iter().filter(|p| p.as_str() != original).collect();
    let options: Vec<&String> = options.into_iter().collect();
    options.choose(rng).map(|s| (*s).clone())
}

/// Swaps a room phrase for another room drawn uniformly from `pool`.
pub fn perturb_room(
    ann: &AnnotatedInstruction,
    idx: usize,
    pool: &[String],
    seed: u64,
) -> Result<(AnnotatedInstruction, PerturbationRecord)> {
    let span = check_kind(ann, idx, PhraseKind::Room)?;
    let original = span.text(&ann.tokens);
    let mut rng = rng(seed);
    let replacement = pick_other(pool, &original, &mut rng).ok_or(Error::NoReplacement(original))?;
    Ok(replace_span(ann, idx, &replacement))
}

/// Swaps an object phrase for another object mentioned in the same instruction,
/// or for one from `fallback` when the instruction names fewer than two objects.
pub fn perturb_object(
    ann: &AnnotatedInstruction,
    idx: usize,
    fallback: &[String],
    seed: u64,
) -> Result<(AnnotatedInstruction, PerturbationRecord)> {
    let span = check_kind(ann, idx, PhraseKind::Object)?;
    let original = span.text(&ann.tokens);
    let mentioned: Vec<String> = ann
        .phrase_spans
        .iter()
        .filter(|s| s.kind == PhraseKind::Object)
        .map(|s| s.text(&ann.tokens))
        .collect();
    let mut rng = rng(seed);
    let (replacement, fallback_used) = match pick_other(&mentioned, &original, &mut rng) {
        Some(r) => (r, false),
        None => (pick_other(fallback, &original, &mut rng).ok_or_else(|| Error::NoReplacement(original.clone()))?, true),
    };
    let (out, mut record) = replace_span(ann, idx, &replacement);
    record.fallback = fallback_used;
    Ok((out, record))
}

/// Swaps a direction phrase for one drawn from its substitution-table row.
pub fn perturb_direction(
    ann: &AnnotatedInstruction,
    idx: usize,
    table: &DirectionTable,
    seed: u64,
) -> Result<(AnnotatedInstruction, PerturbationRecord)> {
    let span = check_kind(ann, idx, PhraseKind::Direction)?;
    let original = span.text(&ann.tokens);
    let row = table.row(&original).ok_or_else(|| Error::NotInTable(original.clone()))?;
    let mut rng = rng(seed);
    let replacement = row.choose(&mut rng).ok_or(Error::NotInTable(original))?;
    Ok(replace_span(ann, idx, replacement))
}

/// Inserts `donor` (a whole sentence) at a sentence boundary chosen uniformly.
pub fn insert_extrinsic(
    ann: &AnnotatedInstruction,
    donor: &[String],
    seed: u64,
) -> Result<(AnnotatedInstruction, PerturbationRecord)> {
    if donor.is_empty() {
        return Err(Error::InvalidExample("empty donor sentence".into()));
    }
    let mut donor = donor.to_vec();
    if donor.last().map(String::as_str) != Some(".") {
        donor.push(".".into());
    }
    if ann.tokens.len() + donor.len() > MAX_TOKENS {
        return Err(Error::TooLong(MAX_TOKENS));
    }
    let mut rng = rng(seed);
    let mut boundaries: Vec<usize> = sentences_of(&ann.tokens).iter().map(|s| s.start).collect();
    if boundaries.is_empty() {
        boundaries.push(0);
    }
    let at = *boundaries.choose(&mut rng).unwrap();
    let clause_at = ann.clauses().iter().position(|c| c.start == at).unwrap_or(ann.alignment.len());
    let donor_spans = Lexicon::builtin().extract_phrases(&donor);
    let donor_clauses = crate::speaker::clauses_of(&donor).len();

    let mut out = ann.clone();
    out.tokens.splice(at..at, donor.iter().cloned());
    let first_after = out.phrase_spans.iter().position(|s| s.i >= at).unwrap_or(out.phrase_spans.len());
    for s in out.phrase_spans.iter_mut().skip(first_after) {
        s.i += donor.len();
        s.j += donor.len();
    }
    out.phrase_spans.splice(
        first_after..first_after,
        donor_spans.iter().map(|s| PhraseSpan::new(s.i + at, s.j + at, s.kind)),
    );
    out.gold.splice(first_after..first_after, std::iter::repeat_n(GoldLabel::extrinsic(), donor_spans.len()));
    out.alignment.splice(clause_at..clause_at, std::iter::repeat_n(None, donor_clauses));
    let record = PerturbationRecord { kind: PerturbationKind::Insert, at, removed: Vec::new(), inserted: donor, fallback: false };
    Ok((out, record))
}

/// Perturbs span `idx` according to its kind and the replacement source.
pub fn perturb_span(
    env: &Environment,
    route: &Route,
    ann: &AnnotatedInstruction,
    idx: usize,
    source: ReplacementSource,
    seed: u64,
) -> Result<(AnnotatedInstruction, PerturbationRecord)> {
    let lex = Lexicon::builtin();
    let env_objects: Vec<String> = env.object_vocab().iter().cloned().collect();
    match (ann.phrase_spans[idx].kind, source) {
        (PhraseKind::Room, ReplacementSource::Default) => perturb_room(ann, idx, lex.rooms(), seed),
        (PhraseKind::Room, ReplacementSource::SameEnvSwap) => {
            let pool: Vec<String> = env.room_vocab().iter().cloned().collect();
            perturb_room(ann, idx, &pool, seed)
        }
        (PhraseKind::Object, ReplacementSource::Default) => perturb_object(ann, idx, &env_objects, seed),
        (PhraseKind::Object, ReplacementSource::SameEnvSwap) => {
            let seen: BTreeSet<String> = (0..=route.len())
                .flat_map(|p| route.observation(p).visible.iter().map(|v| v.name.clone()))
                .collect();
            let seen: Vec<String> = seen.into_iter().collect();
            let original = ann.span_text(idx);
            if seen.iter().any(|s| *s != original) {
                let mut rng = rng(seed);
                let replacement = pick_other(&seen, &original, &mut rng).unwrap();
                Ok(replace_span(ann, idx, &replacement))
            } else {
                let (out, mut rec) = perturb_room_like(ann, idx, &env_objects, seed)?;
                rec.fallback = true;
                Ok((out, rec))
            }
        }
        (PhraseKind::Direction, _) => perturb_direction(ann, idx, lex.directions(), seed),
    }
}

fn perturb_room_like(
    ann: &AnnotatedInstruction,
    idx: usize,
    pool: &[String],
    seed: u64,
) -> Result<(AnnotatedInstruction, PerturbationRecord)> {
    let original = ann.span_text(idx);
    let mut rng = rng(seed);
    let replacement = pick_other(pool, &original, &mut rng).ok_or(Error::NoReplacement(original))?;
    Ok(replace_span(ann, idx, &replacement))
}

// ---------------------------------------------------------------------------
// Classification examples

/// One wrapped span on one route: the unit both classifiers score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionExample {
    pub env_id: String,
    pub route_id: String,
    /// Instruction tokens with exactly one `[BH] … [EH]` pair.
    pub tokens: Vec<String>,
    /// Wrapped span in unmarked token coordinates.
    pub i: usize,
    pub j: usize,
    pub label: bool,
}

impl DetectionExample {
    pub fn wrap(env_id: &str, route_id: &str, unmarked: &[String], i: usize, j: usize, label: bool) -> Self {
        let mut tokens = Vec::with_capacity(unmarked.len() + 2);
        tokens.extend_from_slice(&unmarked[..i]);
        tokens.push(BH.into());
        tokens.extend_from_slice(&unmarked[i..=j]);
        tokens.push(EH.into());
        tokens.extend_from_slice(&unmarked[j + 1..]);
        Self { env_id: env_id.into(), route_id: route_id.into(), tokens, i, j, label }
    }

    pub fn unmarked(&self) -> Vec<String> {
        self.tokens.iter().filter(|t| *t != BH && *t != EH).cloned().collect()
    }

    pub fn wrapped_text(&self) -> String {
        self.tokens[self.i + 1..=self.j + 1].join(" ")
    }

    pub fn validate(&self) -> Result<()> {
        let bh: Vec<usize> = self.tokens.iter().enumerate().filter(|(_, t)| *t == BH).map(|(k, _)| k).collect();
        let eh: Vec<usize> = self.tokens.iter().enumerate().filter(|(_, t)| *t == EH).map(|(k, _)| k).collect();
        if bh.len() != 1 || eh.len() != 1 {
            return Err(Error::InvalidExample("expected exactly one [BH] and one [EH]".into()));
        }
        if bh[0] != self.i || eh[0] != self.j + 2 || self.i > self.j {
            return Err(Error::InvalidExample("markers disagree with span indices".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedExample {
    pub positive: DetectionExample,
    pub negative: DetectionExample,
}

/// A clean instruction on its route, the raw material for pair construction.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub env: &'a Environment,
    pub route: &'a Route,
    pub instruction: &'a AnnotatedInstruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    /// relative weight of inserting a sentence versus perturbing any one span
    pub insertion_weight: f64,
    pub max_hallucinations: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self { insertion_weight: 1.5, max_hallucinations: 3 }
    }
}

/// Injects exactly `count` hallucinations (fewer if the instruction runs out of room).
fn inject(
    sample: &Sample<'_>,
    count: usize,
    require: Option<HallucinationType>,
    source: ReplacementSource,
    donors: &[Vec<String>],
    cfg: &PairConfig,
    rng: &mut Rng,
) -> AnnotatedInstruction {
    let ann = sample.instruction;
    let n_spans = ann.phrase_spans.len();
    // item n_spans stands for the sentence insertion
    let mut items: Vec<usize> = (0..=n_spans).collect();
    let weight = |k: &usize| if *k == n_spans { cfg.insertion_weight } else { 1.0 };
    let mut picked: Vec<usize> = match require {
        Some(HallucinationType::Extrinsic) => vec![n_spans],
        Some(HallucinationType::Intrinsic) if n_spans > 0 => vec![rng.gen_range(0..n_spans)],
        _ => Vec::new(),
    };
    items.retain(|k| !picked.contains(k));
    if donors.is_empty() {
        items.retain(|&k| k != n_spans);
    }
    let extra = count.saturating_sub(picked.len()).min(items.len());
    if extra > 0 {
        let more: Vec<usize> = items.choose_multiple_weighted(rng, extra, weight).expect("positive weights").copied().collect();
        picked.extend(more);
    }
    let mut spans: Vec<usize> = picked.iter().copied().filter(|&k| k < n_spans).collect();
    spans.sort_unstable_by(|a, b| b.cmp(a));
    let mut out = ann.clone();
    for k in spans {
        if let Ok((next, _)) = perturb_span(sample.env, sample.route, &out, k, source, rng.gen()) {
            if next.tokens.len() <= MAX_TOKENS {
                out = next;
            }
        }
    }
    if picked.contains(&n_spans) {
        let donor = donors.choose(rng).unwrap();
        if let Ok((next, _)) = insert_extrinsic(&out, donor, rng.gen()) {
            out = next;
        }
    }
    out
}

fn wrap_span(sample: &Sample<'_>, ann: &AnnotatedInstruction, idx: usize) -> DetectionExample {
    let s = ann.phrase_spans[idx];
    DetectionExample::wrap(sample.env.id(), &sample.route.id, &ann.tokens, s.i, s.j, ann.gold[idx].is_hallucination)
}

fn choose_where(ann: &AnnotatedInstruction, rng: &mut Rng, pred: impl Fn(&GoldLabel) -> bool) -> Option<usize> {
    let idx: Vec<usize> = (0..ann.gold.len()).filter(|&k| pred(&ann.gold[k])).collect();
    idx.choose(rng).copied()
}

fn positive_example(
    sample: &Sample<'_>,
    source: ReplacementSource,
    donors: &[Vec<String>],
    cfg: &PairConfig,
    rng: &mut Rng,
) -> Option<DetectionExample> {
    let count = rng.gen_range(1..=cfg.max_hallucinations);
    let ann = inject(sample, count, None, source, donors, cfg, rng);
    // one hallucination event, then one of its spans
    let intrinsic: Vec<usize> = (0..ann.gold.len()).filter(|&k| ann.gold[k].h_type == HallucinationType::Intrinsic).collect();
    let extrinsic: Vec<usize> = (0..ann.gold.len()).filter(|&k| ann.gold[k].h_type == HallucinationType::Extrinsic).collect();
    let events = intrinsic.len() + usize::from(!extrinsic.is_empty());
    if events == 0 {
        return None;
    }
    let e = rng.gen_range(0..events);
    let idx = if e < intrinsic.len() { intrinsic[e] } else { *extrinsic.choose(rng).unwrap() };
    Some(wrap_span(sample, &ann, idx))
}

fn negative_example(
    sample: &Sample<'_>,
    source: ReplacementSource,
    donors: &[Vec<String>],
    cfg: &PairConfig,
    rng: &mut Rng,
) -> Option<DetectionExample> {
    let count = rng.gen_range(0..cfg.max_hallucinations);
    let ann = inject(sample, count, None, source, donors, cfg, rng);
    let idx = choose_where(&ann, rng, |g| !g.is_hallucination)?;
    Some(wrap_span(sample, &ann, idx))
}

/// Detection pairs: positives wrap a hallucinated span, negatives a clean span
/// of a separately perturbed copy of the same instruction.
pub fn build_detection_pairs(
    corpus: &[Sample<'_>],
    donors: &[Vec<String>],
    n_pairs: usize,
    seed: u64,
    source: ReplacementSource,
    cfg: &PairConfig,
) -> Vec<PairedExample> {
    build_pairs(corpus, n_pairs, seed, |sample, rng| {
        let positive = positive_example(sample, source, donors, cfg, rng)?;
        let negative = negative_example(sample, source, donors, cfg, rng)?;
        Some(PairedExample { positive, negative })
    })
}

/// Type pairs: positives wrap an intrinsic hallucination, negatives an extrinsic one.
/// Labels mean "intrinsic".
pub fn build_type_pairs(
    corpus: &[Sample<'_>],
    donors: &[Vec<String>],
    n_pairs: usize,
    seed: u64,
    cfg: &PairConfig,
) -> Vec<PairedExample> {
    build_pairs(corpus, n_pairs, seed, |sample, rng| {
        let count = rng.gen_range(1..=cfg.max_hallucinations);
        let ann = inject(sample, count, Some(HallucinationType::Intrinsic), ReplacementSource::Default, donors, cfg, rng);
        let idx = choose_where(&ann, rng, |g| g.h_type == HallucinationType::Intrinsic)?;
        let mut positive = wrap_span(sample, &ann, idx);
        positive.label = true;
        let count = rng.gen_range(1..=cfg.max_hallucinations);
        let ann = inject(sample, count, Some(HallucinationType::Extrinsic), ReplacementSource::Default, donors, cfg, rng);
        let idx = choose_where(&ann, rng, |g| g.h_type == HallucinationType::Extrinsic)?;
        let mut negative = wrap_span(sample, &ann, idx);
        negative.label = false;
        Some(PairedExample { positive, negative })
    })
}

/// Replaces span `idx` with the `[REMOVE]` token and wraps it.
pub fn wrap_removed(env_id: &str, route_id: &str, ann: &AnnotatedInstruction, idx: usize, label: bool) -> DetectionExample {
    let s = ann.phrase_spans[idx];
    let mut tokens = ann.tokens[..s.i].to_vec();
    tokens.push(REMOVE_TOKEN.into());
    tokens.extend_from_slice(&ann.tokens[s.j + 1..]);
    DetectionExample::wrap(env_id, route_id, &tokens, s.i, s.i, label)
}

/// Pairs for the single-model variant: detection pairs plus deletion pairs in
/// which wrapping `[REMOVE]` is the hallucination when the deleted phrase was
/// clean, and the correction when it was extrinsic.
pub fn build_one_stage_pairs(
    corpus: &[Sample<'_>],
    donors: &[Vec<String>],
    n_pairs: usize,
    seed: u64,
    cfg: &PairConfig,
) -> Vec<PairedExample> {
    let n_removal = n_pairs / 4;
    let mut pairs = build_detection_pairs(corpus, donors, n_pairs - n_removal, seed, ReplacementSource::Default, cfg);
    pairs.extend(build_pairs(corpus, n_removal, derive_seed(seed, 0x5eed), |sample, rng| {
        if rng.gen_bool(0.5) {
            let count = rng.gen_range(0..cfg.max_hallucinations);
            let ann = inject(sample, count, None, ReplacementSource::Default, donors, cfg, rng);
            let idx = choose_where(&ann, rng, |g| !g.is_hallucination)?;
            let positive = wrap_removed(sample.env.id(), &sample.route.id, &ann, idx, true);
            let negative = wrap_span(sample, &ann, idx);
            Some(PairedExample { positive, negative })
        } else {
            let count = rng.gen_range(1..=cfg.max_hallucinations);
            let ann = inject(sample, count, Some(HallucinationType::Extrinsic), ReplacementSource::Default, donors, cfg, rng);
            let idx = choose_where(&ann, rng, |g| g.h_type == HallucinationType::Extrinsic)?;
            let positive = wrap_span(sample, &ann, idx);
            let negative = wrap_removed(sample.env.id(), &sample.route.id, &ann, idx, false);
            Some(PairedExample { positive, negative })
        }
    }));
    pairs
}

fn build_pairs(
    corpus: &[Sample<'_>],
    n_pairs: usize,
    seed: u64,
    mut make: impl FnMut(&Sample<'_>, &mut Rng) -> Option<PairedExample>,
) -> Vec<PairedExample> {
    let mut out = Vec::with_capacity(n_pairs);
    if corpus.is_empty() {
        return out;
    }
    let mut attempt = 0u64;
    // give up if the corpus cannot produce pairs at all
    let limit = (n_pairs as u64 + 1) * 20;
    while out.len() < n_pairs && attempt < limit {
        let sample = &corpus[(attempt as usize) % corpus.len()];
        let mut rng = rng(derive_seed(seed, attempt));
        if let Some(pair) = make(sample, &mut rng) {
            out.push(pair);
        }
        attempt += 1;
    }
    out
}

// ---------------------------------------------------------------------------
// Candidate corrections

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub span: PhraseSpan,
    pub original: String,
    /// Sorted lexicographically, `[REMOVE]` last.
    pub candidates: Vec<Correction>,
    /// Index of the gold correction when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_index: Option<usize>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn with_gold(mut self, gold: &Correction) -> Self {
        self.gold_index = self.candidates.iter().position(|c| c == gold);
        self
    }
}

/// Candidate corrections for `span` in `tokens`: the environment's rooms and
/// objects for nouns, the table row for directions; always `[REMOVE]`.
pub fn generate_candidates(env: &Environment, tokens: &[String], span: PhraseSpan) -> Result<CandidateSet> {
    let original = span.text(tokens);
    let mut phrases: BTreeSet<String> = match span.kind {
        PhraseKind::Room | PhraseKind::Object => {
            env.room_vocab().iter().chain(env.object_vocab().iter()).cloned().collect()
        }
        PhraseKind::Direction => Lexicon::builtin()
            .directions()
            .row(&original)
            .ok_or_else(|| Error::NotInTable(original.clone()))?
            .iter()
            .cloned()
            .collect(),
    };
    phrases.remove(&original);
    let mut candidates: Vec<Correction> = phrases.into_iter().map(Correction::Phrase).collect();
    candidates.push(Correction::Remove);
    Ok(CandidateSet { span, original, candidates, gold_index: None })
}
