//! Reference implementations used to check the library from the outside.
#![allow(dead_code)]

use hear_core::env::{Egocentric, Environment, Route};
use hear_core::grounding::featurize;
use hear_core::lexicon::{PhraseKind, PhraseSpan};
use hear_core::perturb::DetectionExample;
use hear_core::remedy::{ReplacementFactor, TokenRange};
use hear_core::speaker::{AnnotatedInstruction, Correction};

// ---------------------------------------------------------------------------
// Grounding

/// Clause word ranges, split on "," and ".".
pub fn clause_ranges(tokens: &[String]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for (k, t) in tokens.iter().enumerate() {
        if t == "," || t == "." {
            out.push((start, k));
            start = k + 1;
        }
    }
    if start < tokens.len() {
        out.push((start, tokens.len()));
    }
    out
}

fn action_of(phrase: &str) -> Option<&'static str> {
    Some(match phrase {
        "turn left" => "turn left",
        "turn right" => "turn right",
        "go straight" | "forward" => "go straight",
        "turn around" | "backward" => "turn around",
        "go up" => "go up",
        "go down" => "go down",
        _ => return None,
    })
}

fn room_at(route: &Route, p: usize) -> &str {
    if p < route.steps.len() { &route.steps[p].observation.room_label } else { &route.arrival.room_label }
}

fn objects_at(route: &Route, p: usize) -> Vec<(String, Egocentric)> {
    let obs = if p < route.steps.len() { &route.steps[p].observation } else { &route.arrival };
    obs.visible.iter().map(|v| (v.name.clone(), v.direction)).collect()
}

/// Whether the span at `k` agrees with position `p` of the route.
pub fn span_ok(route: &Route, tokens: &[String], spans: &[PhraseSpan], k: usize, p: usize) -> bool {
    let l = route.steps.len();
    if p > l {
        return false;
    }
    let text = tokens[spans[k].i..=spans[k].j].join(" ");
    let seen = objects_at(route, p);
    let moves_room = p < l && room_at(route, p) != room_at(route, p + 1);
    match spans[k].kind {
        PhraseKind::Room => text == room_at(route, p) || (p < l && text == room_at(route, p + 1)),
        PhraseKind::Object => seen.iter().any(|(n, _)| *n == text),
        PhraseKind::Direction => {
            if let Some(a) = action_of(&text) {
                return p < l && route.steps[p].action.direction_label.phrase() == a;
            }
            let Some(next) = spans.get(k + 1) else { return false };
            let gap = &tokens[spans[k].j + 1..next.i];
            if !(gap.is_empty() || gap == ["the"]) {
                return false;
            }
            let noun = tokens[next.i..=next.j].join(" ");
            let dirs: Vec<Egocentric> = seen.iter().filter(|(n, _)| *n == noun).map(|(_, d)| *d).collect();
            let rel_obj = |ok: &dyn Fn(Egocentric) -> bool| {
                next.kind == PhraseKind::Object && (dirs.is_empty() || dirs.iter().any(|d| ok(*d)))
            };
            match text.as_str() {
                "past" => rel_obj(&|d| d == Egocentric::Left || d == Egocentric::Right),
                "toward" => rel_obj(&|d| d == Egocentric::Ahead),
                "away from" => rel_obj(&|d| d == Egocentric::Behind),
                "into" | "enter" => next.kind == PhraseKind::Room && moves_room && noun != room_at(route, p),
                "out of" | "exit" => next.kind == PhraseKind::Room && moves_room && noun != room_at(route, p + 1),
                _ => false,
            }
        }
    }
}

/// Every clause aligned to a route position and every phrase true at it.
pub fn oracle_grounded(route: &Route, ann: &AnnotatedInstruction) -> bool {
    let clauses = clause_ranges(&ann.tokens);
    let clauses: Vec<(usize, usize)> = clauses.into_iter().filter(|(a, b)| a < b).collect();
    if clauses.len() != ann.alignment.len() {
        return false;
    }
    for ((a, b), align) in clauses.iter().zip(&ann.alignment) {
        let Some(p) = align else { return false };
        for k in 0..ann.phrase_spans.len() {
            let s = ann.phrase_spans[k];
            if s.i >= *a && s.i < *b && !span_ok(route, &ann.tokens, &ann.phrase_spans, k, *p) {
                return false;
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Scoring

pub fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

pub fn linear(weights: &[f64], x: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..weights.len() {
        s += weights[k] * x[k];
    }
    s
}

pub fn prob(weights: &[f64], env: &Environment, route: &Route, tokens: &[String], i: usize, j: usize) -> f64 {
    let ex = DetectionExample::wrap(env.id(), &route.id, tokens, i, j, false);
    logistic(linear(weights, featurize(env, route, &ex).unwrap().as_slice()))
}

/// Scores each candidate by hand: `1 - P_I` for removal, otherwise `P_I` times
/// the detector's factor on the substituted instruction.
#[allow(clippy::too_many_arguments)]
pub fn oracle_replacement_scores(
    det: &[f64],
    typ: &[f64],
    env: &Environment,
    route: &Route,
    tokens: &[String],
    target: TokenRange,
    candidates: &[Correction],
    factor: ReplacementFactor,
) -> Vec<(Correction, f64)> {
    let p_i = prob(typ, env, route, tokens, target.i, target.j);
    candidates
        .iter()
        .map(|c| {
            let score = match c {
                Correction::Remove => 1.0 - p_i,
                Correction::Phrase(p) => {
                    let words: Vec<String> = p.split(' ').map(String::from).collect();
                    let mut x = tokens[..target.i].to_vec();
                    x.extend(words.iter().cloned());
                    x.extend(tokens[target.j + 1..].iter().cloned());
                    let p_h = prob(det, env, route, &x, target.i, target.i + words.len() - 1);
                    match factor {
                        ReplacementFactor::Literal => p_i * p_h,
                        ReplacementFactor::Complement => p_i * (1.0 - p_h),
                    }
                }
            };
            (c.clone(), score)
        })
        .collect()
}

/// Descending score, then candidate text with removal after any phrase.
pub fn oracle_order(mut items: Vec<(Correction, f64)>) -> Vec<(Correction, f64)> {
    items.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).unwrap().then_with(|| match (&a.0, &b.0) {
            (Correction::Remove, Correction::Remove) => std::cmp::Ordering::Equal,
            (Correction::Remove, _) => std::cmp::Ordering::Greater,
            (_, Correction::Remove) => std::cmp::Ordering::Less,
            (Correction::Phrase(x), Correction::Phrase(y)) => x.cmp(y),
        })
    });
    items
}

// ---------------------------------------------------------------------------
// Thresholds and metrics

pub fn brute_macro_f1(preds: &[bool], golds: &[bool]) -> f64 {
    let f1 = |c: bool| {
        let tp = preds.iter().zip(golds).filter(|(p, g)| **p == c && **g == c).count() as f64;
        let fp = preds.iter().zip(golds).filter(|(p, g)| **p == c && **g != c).count() as f64;
        let fn_ = preds.iter().zip(golds).filter(|(p, g)| **p != c && **g == c).count() as f64;
        if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) }
    };
    (f1(true) + f1(false)) / 2.0
}

/// Best achievable macro-F1 over every cut `s > τ`, and the predictions of the
/// smallest maximizing cut.
pub fn brute_threshold(scores: &[f64], labels: &[bool]) -> (f64, Vec<bool>) {
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.push(f64::NEG_INFINITY);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut best = (-1.0, Vec::new());
    for c in cuts {
        let preds: Vec<bool> = scores.iter().map(|s| *s > c).collect();
        let f = brute_macro_f1(&preds, labels);
        if f > best.0 {
            best = (f, preds);
        }
    }
    best
}

/// Two-sided binomial interval holding at least `level` of the mass.
pub fn binomial_interval(n: u64, p: f64, level: f64) -> (u64, u64) {
    use statrs::distribution::{Binomial, DiscreteCDF};
    let d = Binomial::new(p, n).unwrap();
    let tail = (1.0 - level) / 2.0;
    let lo = (0..=n).find(|&k| d.cdf(k) >= tail).unwrap_or(0);
    let hi = (0..=n).find(|&k| d.cdf(k) >= 1.0 - tail).unwrap_or(n);
    (lo, hi)
}

/// Central finite difference of `f` along coordinate `k`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, w: &[f64], k: usize, h: f64) -> f64 {
    let mut a = w.to_vec();
    let mut b = w.to_vec();
    a[k] += h;
    b[k] -= h;
    (f(&a) - f(&b)) / (2.0 * h)
}
