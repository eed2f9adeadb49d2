use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{path_distance, Environment};
use crate::error::{Error, Result};
use crate::rng::rng;
use crate::speaker::Correction;

/// Goal radius for a successful episode, inclusive.
pub const SUCCESS_RADIUS_M: f64 = 3.0;

/// Shared success predicate: within [`SUCCESS_RADIUS_M`] of the goal along the graph.
pub fn is_success(env: &Environment, node: &str, goal: &str) -> Result<bool> {
    Ok(path_distance(env, node, goal)? <= SUCCESS_RADIUS_M)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub system: String,
    pub split: String,
    pub macro_f1: f64,
    pub positive: ClassScores,
    pub negative: ClassScores,
    pub count: usize,
}

fn class_scores(preds: &[bool], golds: &[bool], class: bool) -> ClassScores {
    let tp = preds.iter().zip(golds).filter(|(p, g)| **p == class && **g == class).count() as f64;
    let predicted = preds.iter().filter(|p| **p == class).count() as f64;
    let support = golds.iter().filter(|g| **g == class).count();
    let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
    let recall = if support > 0 { tp / support as f64 } else { 0.0 };
    let f1 = if tp > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    ClassScores { precision, recall, f1, support }
}

pub fn detection_report(system: &str, split: &str, preds: &[bool], golds: &[bool]) -> Result<DetectionReport> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch(preds.len(), golds.len()));
    }
    if preds.is_empty() {
        return Err(Error::InvalidExample("no predictions".into()));
    }
    let positive = class_scores(preds, golds, true);
    let negative = class_scores(preds, golds, false);
    for (name, c) in [("positive", &positive), ("negative", &negative)] {
        if c.support == 0 {
            log::warn!("{name} class has no support; its F1 counts as 0");
        }
    }
    Ok(DetectionReport {
        system: system.into(),
        split: split.into(),
        macro_f1: 0.5 * (positive.f1 + negative.f1),
        positive,
        negative,
        count: preds.len(),
    })
}

/// Mean of the two per-class F1 scores.
pub fn macro_f1(preds: &[bool], golds: &[bool]) -> Result<f64> {
    detection_report("", "", preds, golds).map(|r| r.macro_f1)
}

/// One hallucination's ranked suggestions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedExample {
    pub ranked: Vec<Correction>,
    pub gold: Correction,
    pub candidate_count: usize,
    pub gold_in_candidates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionReport {
    pub system: String,
    pub split: String,
    pub k: usize,
    pub recall_at_k: f64,
    pub evaluated: usize,
    pub excluded: usize,
    pub mean_candidates: f64,
}

/// Fraction of examples whose top `k` holds the gold correction. Examples whose
/// candidate set lacks the gold are excluded and counted.
pub fn recall_at_k(system: &str, split: &str, examples: &[RankedExample], k: usize) -> SuggestionReport {
    let kept: Vec<&RankedExample> = examples.iter().filter(|e| e.gold_in_candidates).collect();
    let excluded = examples.len() - kept.len();
    if excluded > 0 {
        log::warn!("{excluded} examples excluded: gold correction not among candidates");
    }
    let hits = kept.iter().filter(|e| e.ranked.iter().take(k).any(|c| *c == e.gold)).count();
    let n = kept.len();
    SuggestionReport {
        system: system.into(),
        split: split.into(),
        k,
        recall_at_k: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
        evaluated: n,
        excluded,
        mean_candidates: if n == 0 { 0.0 } else { kept.iter().map(|e| e.candidate_count as f64).sum::<f64>() / n as f64 },
    }
}

/// Fair coin per example.
pub fn random_detection_baseline(n: usize, seed: u64) -> Vec<bool> {
    let mut r = rng(seed);
    (0..n).map(|_| r.gen_bool(0.5)).collect()
}

/// A uniform 3-subset of each candidate set (the whole set when it is smaller).
pub fn random_suggestion_baseline(candidate_sets: &[Vec<Correction>], seed: u64) -> Vec<Vec<Correction>> {
    let mut r = rng(seed);
    candidate_sets.iter().map(|c| c.choose_multiple(&mut r, 3).cloned().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub env_id: String,
    pub start: String,
    pub goal: String,
    pub final_node: String,
    pub trajectory: Vec<String>,
    pub check_nodes: Vec<String>,
    pub checks_used: usize,
    pub success: bool,
}

pub fn navigation_error(env: &Environment, episode: &Episode) -> Result<f64> {
    path_distance(env, &episode.final_node, &episode.goal)
}

/// Fraction of episodes ending within the success radius; `env_of` resolves environments.
pub fn success_rate<'a>(episodes: &[Episode], env_of: impl Fn(&str) -> Option<&'a Environment>) -> Result<f64> {
    if episodes.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for e in episodes {
        let env = env_of(&e.env_id).ok_or_else(|| Error::MissingArtifact(format!("environment {}", e.env_id)))?;
        if is_success(env, &e.final_node, &e.goal)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / episodes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavRow {
    pub episode: String,
    pub success: bool,
    pub error_m: f64,
    pub checks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavReport {
    pub condition: String,
    pub success_rate: f64,
    pub mean_error_m: f64,
    pub median_error_m: f64,
    pub mean_checks: f64,
    pub rows: Vec<NavRow>,
}

pub fn nav_report<'a>(condition: &str, episodes: &[Episode], env_of: impl Fn(&str) -> Option<&'a Environment>) -> Result<NavReport> {
    let mut sorted: Vec<&Episode> = episodes.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rows = Vec::with_capacity(sorted.len());
    for e in sorted {
        let env = env_of(&e.env_id).ok_or_else(|| Error::MissingArtifact(format!("environment {}", e.env_id)))?;
        let error_m = navigation_error(env, e)?;
        rows.push(NavRow { episode: e.id.clone(), success: error_m <= SUCCESS_RADIUS_M, error_m, checks: e.checks_used });
    }
    let n = rows.len().max(1) as f64;
    let mut errs: Vec<f64> = rows.iter().map(|r| r.error_m).collect();
    errs.sort_by(f64::total_cmp);
    let median = match errs.len() {
        0 => 0.0,
        m if m % 2 == 1 => errs[m / 2],
        m => 0.5 * (errs[m / 2 - 1] + errs[m / 2]),
    };
    Ok(NavReport {
        condition: condition.into(),
        success_rate: rows.iter().filter(|r| r.success).count() as f64 / n,
        mean_error_m: errs.iter().sum::<f64>() / n,
        median_error_m: median,
        mean_checks: rows.iter().map(|r| r.checks as f64).sum::<f64>() / n,
        rows,
    })
}
