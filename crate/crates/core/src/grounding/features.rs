use serde::{Deserialize, Serialize};

use crate::env::{Environment, Route};
use crate::error::{Error, Result};
use crate::lexicon::{Lexicon, PhraseKind, PhraseSpan};
use crate::perturb::DetectionExample;
use crate::speaker::clauses_of;

use super::align::infer_alignment;
use super::check::{grounded_at, grounded_text_at};

pub const DIM: usize = 14;

pub const FEATURE_NAMES: [&str; DIM] = [
    "kind_room",
    "kind_object",
    "kind_direction",
    "room_match_window",
    "room_match_anywhere",
    "object_match_window",
    "object_match_anywhere",
    "direction_match_window",
    "direction_antonym_window",
    "span_duplicated",
    "clause_unaligned",
    "clause_step_gap",
    "relative_position",
    "bias",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; DIM]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|k| self.0[k])
    }
}

/// Features for the span wrapped by `example`, aligning clauses from grounding evidence.
pub fn featurize(env: &Environment, route: &Route, example: &DetectionExample) -> Result<FeatureVector> {
    featurize_inner(env, route, example, None)
}

/// Like [`featurize`] but with a known clause alignment.
pub fn featurize_with_alignment(
    env: &Environment,
    route: &Route,
    example: &DetectionExample,
    alignment: &[Option<usize>],
) -> Result<FeatureVector> {
    featurize_inner(env, route, example, Some(alignment))
}

fn featurize_inner(
    _env: &Environment,
    route: &Route,
    example: &DetectionExample,
    alignment: Option<&[Option<usize>]>,
) -> Result<FeatureVector> {
    example.validate()?;
    let tokens = example.unmarked();
    let lex = Lexicon::builtin();
    let spans = lex.extract_phrases(&tokens);
    let clauses = clauses_of(&tokens);
    let alignment = match alignment {
        Some(a) if a.len() == clauses.len() => a.to_vec(),
        Some(a) => return Err(Error::Dimension { expected: clauses.len(), got: a.len() }),
        None => infer_alignment(route, &tokens, &spans, &clauses),
    };
    let (i, j) = (example.i, example.j);
    let target = spans.iter().position(|s| s.i == i && s.j == j);
    let clause = clauses.iter().position(|c| c.contains(i)).unwrap_or(0);
    let aligned = alignment.get(clause).copied().flatten();

    let mut f = [0.0; DIM];
    if let Some(k) = target {
        let kind = spans[k].kind;
        let base = match kind {
            PhraseKind::Room => 0,
            PhraseKind::Object => 1,
            PhraseKind::Direction => 2,
        };
        f[base] = 1.0;
        let window = window_match(route, &tokens, &spans, k, aligned);
        let anywhere = (0..=route.len()).any(|p| grounded_at(route, &tokens, &spans, k, p));
        match kind {
            PhraseKind::Room => {
                f[3] = window;
                f[4] = f64::from(u8::from(anywhere));
            }
            PhraseKind::Object => {
                f[5] = window;
                f[6] = f64::from(u8::from(anywhere));
            }
            PhraseKind::Direction => {
                f[7] = window;
                let text = spans[k].text(&tokens);
                if let (Some(p), Some(row)) = (aligned, lex.directions().row(&text)) {
                    let alt = row.iter().any(|a| grounded_text_at(route, &tokens, &spans, k, a, p));
                    f[8] = f64::from(u8::from(alt));
                }
            }
        }
        let text = spans[k].text(&tokens);
        f[9] = f64::from(u8::from(spans.iter().enumerate().any(|(m, s)| m != k && s.text(&tokens) == text)));
    }
    f[10] = f64::from(u8::from(aligned.is_none()));
    let gap = clauses.len() as f64 - (route.len() + 1) as f64;
    f[11] = gap.clamp(-3.0, 3.0) / 3.0;
    f[12] = if tokens.is_empty() { 0.0 } else { i as f64 / tokens.len() as f64 };
    f[13] = 1.0;
    Ok(FeatureVector(f))
}

/// 1 when grounded at the aligned position, 0.5 when only at a neighbouring one.
fn window_match(route: &Route, tokens: &[String], spans: &[PhraseSpan], k: usize, aligned: Option<usize>) -> f64 {
    let Some(p) = aligned else { return 0.0 };
    if grounded_at(route, tokens, spans, k, p) {
        1.0
    } else if (p > 0 && grounded_at(route, tokens, spans, k, p - 1)) || grounded_at(route, tokens, spans, k, p + 1) {
        0.5
    } else {
        0.0
    }
}
