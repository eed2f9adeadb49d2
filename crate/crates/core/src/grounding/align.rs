//! Clause-to-step alignment inferred from grounding evidence.

use crate::env::Route;
use crate::lexicon::PhraseSpan;
use crate::speaker::Clause;

use super::check::grounded_at;

/// Monotone alignment of clauses to route positions `0..=len`.
///
/// Exactly `max(0, clauses - (len + 1))` clauses stay unaligned; aligned
/// positions strictly increase. Each clause earns +1 per span grounded at its
/// position and -1 per span that is not; unaligned clauses earn nothing.
pub fn infer_alignment(route: &Route, tokens: &[String], spans: &[PhraseSpan], clauses: &[Clause]) -> Vec<Option<usize>> {
    let n = clauses.len();
    let positions = route.len() + 1;
    let skips = n.saturating_sub(positions);
    if n == 0 {
        return Vec::new();
    }
    let members: Vec<Vec<usize>> = clauses
        .iter()
        .map(|c| (0..spans.len()).filter(|&k| c.contains(spans[k].i)).collect())
        .collect();
    let gain = |c: usize, p: usize| -> i64 {
        members[c].iter().map(|&k| if grounded_at(route, tokens, spans, k, p) { 1 } else { -1 }).sum()
    };

    // best[c][s][p]: best total for clauses c.. with s skips left, next position ≥ p
    const NEG: i64 = i64::MIN / 4;
    let mut best = vec![vec![vec![NEG; positions + 1]; skips + 1]; n + 1];
    for s in 0..=skips {
        for p in 0..=positions {
            best[n][s][p] = if s == 0 { 0 } else { NEG };
        }
    }
    for c in (0..n).rev() {
        for s in 0..=skips {
            for p in (0..=positions).rev() {
                let mut v = NEG;
                if p < positions {
                    let take = best[c + 1][s][p + 1];
                    if take > NEG {
                        v = v.max(take + gain(c, p));
                    }
                    v = v.max(best[c][s][p + 1]);
                }
                if s > 0 {
                    v = v.max(best[c + 1][s - 1][p]);
                }
                best[c][s][p] = v;
            }
        }
    }

    // walk forward, preferring to align as early as possible
    let mut out = Vec::with_capacity(n);
    let (mut s, mut p) = (skips, 0);
    for c in 0..n {
        let target = best[c][s][p];
        let mut placed = false;
        let mut q = p;
        while q < positions {
            let take = best[c + 1][s][q + 1];
            if take > NEG && take + gain(c, q) == target {
                out.push(Some(q));
                p = q + 1;
                placed = true;
                break;
            }
            if best[c][s][q + 1] != target {
                break;
            }
            q += 1;
        }
        if !placed {
            debug_assert!(s > 0 && best[c + 1][s - 1][p] == target);
            out.push(None);
            s -= 1;
        }
    }
    out
}
