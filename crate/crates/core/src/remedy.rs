//! Highlights, ranked correction suggestions and their application.

use serde::{Deserialize, Serialize};

use crate::env::{Environment, Route};
use crate::error::{Error, Result};
use crate::grounding::{featurize, GroundingModel};
use crate::lexicon::{is_delimiter, Lexicon, PhraseSpan};
use crate::perturb::{generate_candidates, DetectionExample};
use crate::speaker::{clauses_of, AnnotatedInstruction, Correction, GoldLabel, REMOVE_TOKEN};

pub const DEFAULT_CAP: usize = 3;
pub const DEFAULT_K: usize = 3;

/// Inclusive token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenRange {
    pub i: usize,
    pub j: usize,
}

impl TokenRange {
    pub fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }

    pub fn len(&self) -> usize {
        self.j + 1 - self.i
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, other: &TokenRange) -> bool {
        self.i <= other.i && other.j <= self.j
    }

    pub fn text(&self, tokens: &[String]) -> String {
        tokens[self.i..=self.j].join(" ")
    }
}

impl From<PhraseSpan> for TokenRange {
    fn from(s: PhraseSpan) -> Self {
        Self { i: s.i, j: s.j }
    }
}

impl std::fmt::Display for TokenRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.i, self.j)
    }
}

impl std::str::FromStr for TokenRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidExample(format!("bad span `{s}`, expected i-j"));
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        let (i, j) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if i > j {
            return Err(bad());
        }
        Ok(Self { i, j })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub span: TokenRange,
    /// Highlighted tokens, used to detect stale highlights.
    pub text: String,
    pub confidence: f64,
    pub member_spans: Vec<PhraseSpan>,
    /// The whole clause is highlighted because all its phrases were.
    pub merged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub candidate: Correction,
    pub score: f64,
    /// Tokens the candidate replaces: a member phrase, or the whole clause for a merged removal.
    pub target: TokenRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionList {
    pub for_highlight: TokenRange,
    pub items: Vec<Suggestion>,
}

/// Anything that assigns a probability to a wrapped span.
pub trait Confidence {
    fn confidence(&self, env: &Environment, route: &Route, example: &DetectionExample) -> Result<f64>;
}

impl Confidence for GroundingModel {
    fn confidence(&self, env: &Environment, route: &Route, example: &DetectionExample) -> Result<f64> {
        GroundingModel::confidence(self, featurize(env, route, example)?.as_slice())
    }
}

/// Same probability for every input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantConfidence(pub f64);

impl Confidence for ConstantConfidence {
    fn confidence(&self, _: &Environment, _: &Route, _: &DetectionExample) -> Result<f64> {
        Ok(self.0)
    }
}

impl<F> Confidence for F
where
    F: Fn(&DetectionExample) -> f64,
{
    fn confidence(&self, _: &Environment, _: &Route, example: &DetectionExample) -> Result<f64> {
        Ok(self(example))
    }
}

fn wrap(env: &Environment, route: &Route, tokens: &[String], r: TokenRange) -> DetectionExample {
    DetectionExample::wrap(env.id(), &route.id, tokens, r.i, r.j, false)
}

/// Groups positive spans into highlights, merging clauses whose phrases are all
/// positive, and keeps the `cap` most confident.
pub fn merge_highlights(tokens: &[String], spans: &[PhraseSpan], positives: &[(bool, f64)], cap: usize) -> Vec<Highlight> {
    let mut out = Vec::new();
    for clause in clauses_of(tokens) {
        let members: Vec<usize> = (0..spans.len()).filter(|&k| clause.contains(spans[k].i)).collect();
        if members.is_empty() {
            continue;
        }
        if members.iter().all(|&k| positives[k].0) {
            let words = clause.words();
            let span = TokenRange::new(words.start, words.end - 1);
            out.push(Highlight {
                span,
                text: span.text(tokens),
                confidence: members.iter().map(|&k| positives[k].1).fold(f64::MIN, f64::max),
                member_spans: members.iter().map(|&k| spans[k]).collect(),
                merged: true,
            });
        } else {
            for &k in members.iter().filter(|&&k| positives[k].0) {
                let span = TokenRange::from(spans[k]);
                out.push(Highlight {
                    span,
                    text: span.text(tokens),
                    confidence: positives[k].1,
                    member_spans: vec![spans[k]],
                    merged: false,
                });
            }
        }
    }
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.span.cmp(&b.span)));
    out.truncate(cap);
    out.sort_by_key(|h| h.span);
    out
}

/// Classifies every phrase and returns at most `cap` highlights in token order.
pub fn detect_highlights(
    det: &GroundingModel,
    env: &Environment,
    route: &Route,
    tokens: &[String],
    cap: usize,
) -> Result<Vec<Highlight>> {
    let spans = Lexicon::builtin().extract_phrases(tokens);
    let preds = spans
        .iter()
        .map(|s| det.predict(env, route, &wrap(env, route, tokens, (*s).into())))
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_highlights(tokens, &spans, &preds, cap))
}

/// Highlights on the gold hallucinations, confidence 1.
pub fn gold_highlights(ann: &AnnotatedInstruction, cap: usize) -> Vec<Highlight> {
    let preds: Vec<(bool, f64)> = ann.gold.iter().map(|g| (g.is_hallucination, 1.0)).collect();
    merge_highlights(&ann.tokens, &ann.phrase_spans, &preds, cap)
}

/// How the detector's verdict on a corrected instruction enters a replacement score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacementFactor {
    /// `P_I(z=1|x) * (1 - P_H(y=1|x̂))`: corrections the detector accepts rank higher
    #[default]
    Complement,
    /// `P_I(z=1|x) * P_H(y=1|x̂)`
    Literal,
}

fn total_order(items: &mut Vec<Suggestion>) {
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.candidate.cmp(&b.candidate)).then(a.target.cmp(&b.target)));
    items.dedup_by(|a, b| a.candidate == b.candidate && a.target == b.target);
}

/// Sorts descending by score (ties: lexicographic, `[REMOVE]` last) and keeps `k`.
pub fn top_k(mut items: Vec<Suggestion>, k: usize) -> Vec<Suggestion> {
    total_order(&mut items);
    items.truncate(k);
    items
}

/// Tokens with `target` replaced by `candidate` (the `[REMOVE]` token for removal).
fn substituted(tokens: &[String], target: TokenRange, candidate: &Correction) -> (Vec<String>, TokenRange) {
    let words: Vec<String> = candidate.as_str().split(' ').map(str::to_owned).collect();
    let mut out = tokens[..target.i].to_vec();
    out.extend(words.iter().cloned());
    out.extend_from_slice(&tokens[target.j + 1..]);
    (out, TokenRange::new(target.i, target.i + words.len() - 1))
}

/// Scores every candidate for one phrase with the two-stage formula.
#[allow(clippy::too_many_arguments)]
pub fn score_candidates(
    det: &dyn Confidence,
    typ: &dyn Confidence,
    env: &Environment,
    route: &Route,
    tokens: &[String],
    target: TokenRange,
    candidates: &[Correction],
    factor: ReplacementFactor,
) -> Result<Vec<Suggestion>> {
    if candidates.is_empty() {
        return Err(Error::NoReplacement(target.text(tokens)));
    }
    let p_i = typ.confidence(env, route, &wrap(env, route, tokens, target))?;
    candidates
        .iter()
        .map(|c| {
            let score = match c {
                Correction::Remove => 1.0 - p_i,
                Correction::Phrase(_) => {
                    let (x_hat, span) = substituted(tokens, target, c);
                    let p_h = det.confidence(env, route, &wrap(env, route, &x_hat, span))?;
                    match factor {
                        ReplacementFactor::Complement => p_i * (1.0 - p_h),
                        ReplacementFactor::Literal => p_i * p_h,
                    }
                }
            };
            Ok(Suggestion { candidate: c.clone(), score, target })
        })
        .collect()
}

/// Ranked suggestions for a highlight. A merged clause is offered its own
/// removal plus replacements of each member phrase; its removal score uses the
/// mean type probability of the members.
#[allow(clippy::too_many_arguments)]
pub fn rank_candidates(
    det: &dyn Confidence,
    typ: &dyn Confidence,
    env: &Environment,
    route: &Route,
    tokens: &[String],
    highlight: &Highlight,
    k: usize,
    factor: ReplacementFactor,
) -> Result<SuggestionList> {
    check_fresh(tokens, highlight)?;
    let mut items = Vec::new();
    if highlight.merged {
        let mut p_sum = 0.0;
        for m in &highlight.member_spans {
            let set = generate_candidates(env, tokens, *m)?;
            let phrases: Vec<Correction> = set.candidates.into_iter().filter(|c| !c.is_remove()).collect();
            let mut scored = score_candidates(det, typ, env, route, tokens, (*m).into(), &phrases, factor)?;
            items.append(&mut scored);
            p_sum += typ.confidence(env, route, &wrap(env, route, tokens, (*m).into()))?;
        }
        let p_i = p_sum / highlight.member_spans.len().max(1) as f64;
        items.push(Suggestion { candidate: Correction::Remove, score: 1.0 - p_i, target: highlight.span });
    } else {
        let set = generate_candidates(env, tokens, highlight.member_spans[0])?;
        items = score_candidates(det, typ, env, route, tokens, highlight.span, &set.candidates, factor)?;
    }
    Ok(SuggestionList { for_highlight: highlight.span, items: top_k(items, k) })
}

/// Single-model scores `1 - P(y=1|x̂)`; removal substitutes the `[REMOVE]` token.
pub fn score_one_stage(
    joint: &dyn Confidence,
    env: &Environment,
    route: &Route,
    tokens: &[String],
    target: TokenRange,
    candidates: &[Correction],
) -> Result<Vec<Suggestion>> {
    if candidates.is_empty() {
        return Err(Error::NoReplacement(target.text(tokens)));
    }
    candidates
        .iter()
        .map(|c| {
            let (x_hat, span) = substituted(tokens, target, c);
            let p = joint.confidence(env, route, &wrap(env, route, &x_hat, span))?;
            Ok(Suggestion { candidate: c.clone(), score: 1.0 - p, target })
        })
        .collect()
}

pub fn rank_one_stage(
    joint: &dyn Confidence,
    env: &Environment,
    route: &Route,
    tokens: &[String],
    highlight: &Highlight,
    k: usize,
) -> Result<SuggestionList> {
    check_fresh(tokens, highlight)?;
    let mut items = Vec::new();
    for m in &highlight.member_spans {
        let set = generate_candidates(env, tokens, *m)?;
        let target = if highlight.merged { (*m).into() } else { highlight.span };
        let phrases: Vec<Correction> = set.candidates.into_iter().filter(|c| !c.is_remove() || !highlight.merged).collect();
        items.extend(score_one_stage(joint, env, route, tokens, target, &phrases)?);
    }
    if highlight.merged {
        items.extend(score_one_stage(joint, env, route, tokens, highlight.span, &[Correction::Remove])?);
    }
    Ok(SuggestionList { for_highlight: highlight.span, items: top_k(items, k) })
}

/// The two suggestions shown with gold highlights: the gold correction, then
/// the phrase as written.
pub fn oracle_suggestions(ann: &AnnotatedInstruction, highlight: &Highlight) -> Result<SuggestionList> {
    check_fresh(&ann.tokens, highlight)?;
    let mut items = Vec::new();
    for m in &highlight.member_spans {
        let k = ann.phrase_spans.iter().position(|s| s == m).ok_or(Error::StaleSpan)?;
        match &ann.gold[k].gold_correction {
            Some(Correction::Remove) if highlight.merged => {
                if !items.iter().any(|s: &Suggestion| s.candidate.is_remove()) {
                    items.push(Suggestion { candidate: Correction::Remove, score: 1.0, target: highlight.span });
                }
            }
            Some(c) => items.push(Suggestion { candidate: c.clone(), score: 1.0, target: (*m).into() }),
            None => {}
        }
    }
    items.truncate(1);
    items.push(Suggestion {
        candidate: Correction::Phrase(highlight.text.clone()),
        score: 0.0,
        target: highlight.span,
    });
    Ok(SuggestionList { for_highlight: highlight.span, items })
}

fn check_fresh(tokens: &[String], highlight: &Highlight) -> Result<()> {
    if highlight.span.j >= tokens.len() || highlight.span.text(tokens) != highlight.text {
        return Err(Error::StaleSpan);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Editing

/// Replaces `range` with `words`, repairing punctuation when a clause empties,
/// and carries labels and alignment over to the new instruction. The spans of
/// `words` get `label`.
fn splice(ann: &AnnotatedInstruction, range: TokenRange, words: &[String], label: GoldLabel) -> AnnotatedInstruction {
    let mut tokens = ann.tokens[..range.i].to_vec();
    tokens.extend_from_slice(words);
    tokens.extend_from_slice(&ann.tokens[range.j + 1..]);
    // old index of each new token, None for inserted words
    let mut origin: Vec<Option<usize>> = (0..range.i).map(Some).collect();
    origin.extend(std::iter::repeat_n(None, words.len()));
    origin.extend((range.j + 1..ann.tokens.len()).map(Some));

    if words.is_empty() {
        let a = range.i;
        if a < tokens.len() && is_delimiter(&tokens[a]) && (a == 0 || is_delimiter(&tokens[a - 1])) {
            let drop = if a > 0 && tokens[a - 1] == "," && tokens[a] == "." { a - 1 } else { a };
            tokens.remove(drop);
            origin.remove(drop);
        }
    }

    let old_clauses = clauses_of(&ann.tokens);
    let new_clauses = clauses_of(&tokens);
    let alignment = new_clauses
        .iter()
        .map(|c| {
            let old_tok = (c.start..c.end).find_map(|t| origin[t]);
            old_tok
                .and_then(|t| old_clauses.iter().position(|oc| oc.contains(t)))
                .and_then(|oc| ann.alignment.get(oc).copied().flatten())
        })
        .collect();

    let phrase_spans = Lexicon::builtin().extract_phrases(&tokens);
    let gold = phrase_spans
        .iter()
        .map(|s| {
            let old = (origin[s.i], origin[s.j]);
            match old {
                (Some(oi), Some(oj)) => ann
                    .phrase_spans
                    .iter()
                    .position(|o| o.i == oi && o.j == oj)
                    .map_or_else(GoldLabel::clean, |k| ann.gold[k].clone()),
                _ => label.clone(),
            }
        })
        .collect();
    AnnotatedInstruction { tokens, phrase_spans, alignment, gold }
}

/// Applies one served suggestion. Removal deletes the target; a replacement
/// splices in the candidate. Pure: returns a new instruction.
pub fn apply_suggestion(ann: &AnnotatedInstruction, highlight: &Highlight, suggestion: &Suggestion) -> Result<AnnotatedInstruction> {
    check_fresh(&ann.tokens, highlight)?;
    let target = suggestion.target;
    if !highlight.span.contains(&target) {
        return Err(Error::StaleSpan);
    }
    let old_label = ann
        .phrase_spans
        .iter()
        .position(|s| s.i == target.i && s.j == target.j)
        .map(|k| ann.gold[k].clone())
        .unwrap_or_else(GoldLabel::clean);
    match &suggestion.candidate {
        Correction::Remove => Ok(splice(ann, target, &[], GoldLabel::clean())),
        Correction::Phrase(p) => {
            let words: Vec<String> = p.split(' ').map(str::to_owned).collect();
            if words.iter().any(|w| w.is_empty() || w == REMOVE_TOKEN) {
                return Err(Error::InvalidExample(format!("bad candidate `{p}`")));
            }
            let label = if old_label.gold_correction.as_ref() == Some(&suggestion.candidate) {
                GoldLabel::clean()
            } else if old_label.is_hallucination {
                old_label
            } else if *p == target.text(&ann.tokens) {
                GoldLabel::clean()
            } else {
                GoldLabel::intrinsic(target.text(&ann.tokens))
            };
            Ok(splice(ann, target, &words, label))
        }
    }
}

/// Replaces every intrinsic hallucination with its gold phrase and deletes
/// every unaligned clause.
pub fn apply_gold_corrections(ann: &AnnotatedInstruction) -> AnnotatedInstruction {
    let mut out = ann.clone();
    for k in (0..ann.phrase_spans.len()).rev() {
        if let Some(Correction::Phrase(p)) = &ann.gold[k].gold_correction {
            let words: Vec<String> = p.split(' ').map(str::to_owned).collect();
            out = splice(&out, ann.phrase_spans[k].into(), &words, GoldLabel::clean());
        }
    }
    loop {
        let clauses = out.clauses();
        let Some(c) = (0..clauses.len()).rev().find(|&c| out.alignment[c].is_none()) else { break };
        let words = clauses[c].words();
        out = if words.is_empty() {
            // a bare delimiter: drop it
            splice(&out, TokenRange::new(clauses[c].start, clauses[c].end - 1), &[], GoldLabel::clean())
        } else {
            splice(&out, TokenRange::new(words.start, words.end - 1), &[], GoldLabel::clean())
        };
    }
    out
}
