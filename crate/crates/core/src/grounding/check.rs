//! Whether a phrase agrees with the route at a given position.

use crate::env::{Egocentric, Route};
use crate::lexicon::{direction_sense, relation_slot, DirectionSense, PhraseKind, PhraseSpan, Relation};
use crate::speaker::{clauses_of, AnnotatedInstruction};

/// The noun a relation phrase attaches to: the next span, separated by at most "the".
fn attached_noun(tokens: &[String], spans: &[PhraseSpan], k: usize) -> Option<PhraseSpan> {
    let s = spans[k];
    let next = *spans.get(k + 1)?;
    match next.i - s.j {
        1 => Some(next),
        2 if tokens[s.j + 1] == "the" => Some(next),
        _ => None,
    }
}

fn room_transition(route: &Route, p: usize) -> bool {
    p < route.len() && route.observation(p).room_label != route.observation(p + 1).room_label
}

/// Grounding of span `k` at position `p` if its text were `text`.
pub fn grounded_text_at(route: &Route, tokens: &[String], spans: &[PhraseSpan], k: usize, text: &str, p: usize) -> bool {
    if p > route.len() {
        return false;
    }
    let obs = route.observation(p);
    match spans[k].kind {
        PhraseKind::Room => obs.room_label == text || (p < route.len() && route.observation(p + 1).room_label == text),
        PhraseKind::Object => obs.sees(text),
        PhraseKind::Direction => match direction_sense(text) {
            DirectionSense::Action(a) => route.action(p) == Some(a),
            DirectionSense::Relation(rel) => {
                let Some(noun) = attached_noun(tokens, spans, k) else { return false };
                if relation_slot(rel) != Some(noun.kind) {
                    return false;
                }
                let name = noun.text(tokens);
                let dirs = || obs.direction_of(&name);
                match rel {
                    // an object missing from the view is the noun's problem, not the relation's
                    Relation::Past => !obs.sees(&name) || dirs().any(|d| matches!(d, Egocentric::Left | Egocentric::Right)),
                    Relation::Toward => !obs.sees(&name) || dirs().any(|d| d == Egocentric::Ahead),
                    Relation::AwayFrom => !obs.sees(&name) || dirs().any(|d| d == Egocentric::Behind),
                    Relation::Into => room_transition(route, p) && name != obs.room_label,
                    Relation::OutOf => room_transition(route, p) && name != route.observation(p + 1).room_label,
                    Relation::Other => false,
                }
            }
        },
    }
}

pub fn grounded_at(route: &Route, tokens: &[String], spans: &[PhraseSpan], k: usize, p: usize) -> bool {
    grounded_text_at(route, tokens, spans, k, &spans[k].text(tokens), p)
}

/// Every clause aligned and every span grounded at its clause's position.
pub fn is_grounded(route: &Route, ann: &AnnotatedInstruction) -> bool {
    let clauses = clauses_of(&ann.tokens);
    if ann.alignment.len() != clauses.len() {
        return false;
    }
    ann.phrase_spans.iter().enumerate().all(|(k, s)| {
        let c = clauses.iter().position(|c| c.contains(s.i)).expect("clauses cover every token");
        matches!(ann.alignment[c], Some(p) if grounded_at(route, &ann.tokens, &ann.phrase_spans, k, p))
    }) && ann.alignment.iter().all(Option::is_some)
}
