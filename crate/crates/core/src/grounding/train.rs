use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::features::{FeatureVector, DIM};
use super::model::{sigmoid, GroundingModel, ModelMeta, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// weight of the pointwise cross-entropy term
    pub pointwise_mix: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, epochs: 500, seed: 42, pointwise_mix: 0.5 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pointwise_mix) {
            return Err(Error::InvalidConfig("pointwise_mix must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// A featurized pair with the pointwise labels of both members.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeaturePair {
    pub positive: FeatureVector,
    pub negative: FeatureVector,
    pub positive_label: bool,
    pub negative_label: bool,
}

impl FeaturePair {
    pub fn new(positive: FeatureVector, negative: FeatureVector) -> Self {
        Self { positive, negative, positive_label: true, negative_label: false }
    }
}

fn dot(w: &[f64], x: &FeatureVector) -> f64 {
    w.iter().zip(x.as_slice()).map(|(a, b)| a * b).sum()
}

/// log(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn bce(s: f64, label: bool) -> f64 {
    if label {
        softplus(-s)
    } else {
        softplus(s)
    }
}

/// Mean pairwise logistic loss plus `mix` times mean pointwise cross-entropy.
pub fn pair_loss(weights: &[f64], pairs: &[FeaturePair], mix: f64) -> f64 {
    let n = pairs.len() as f64;
    let mut pair = 0.0;
    let mut point = 0.0;
    for p in pairs {
        let (sp, sn) = (dot(weights, &p.positive), dot(weights, &p.negative));
        pair += softplus(-(sp - sn));
        point += bce(sp, p.positive_label) + bce(sn, p.negative_label);
    }
    pair / n + mix * point / (2.0 * n)
}

pub fn pair_loss_gradient(weights: &[f64], pairs: &[FeaturePair], mix: f64) -> Vec<f64> {
    let n = pairs.len() as f64;
    let mut g = vec![0.0; weights.len()];
    for p in pairs {
        let (a, b) = (p.positive.as_slice(), p.negative.as_slice());
        let (sp, sn) = (dot(weights, &p.positive), dot(weights, &p.negative));
        let dpair = -(1.0 - sigmoid(sp - sn)) / n;
        let dp = mix * (sigmoid(sp) - f64::from(u8::from(p.positive_label))) / (2.0 * n);
        let dn = mix * (sigmoid(sn) - f64::from(u8::from(p.negative_label))) / (2.0 * n);
        for k in 0..g.len() {
            g[k] += dpair * (a[k] - b[k]) + dp * a[k] + dn * b[k];
        }
    }
    g
}

/// Full-batch gradient descent from zero weights. A step that would raise the
/// loss is rejected and the learning rate halved, so the loss never increases.
/// Returns the model (threshold unset) and the loss after every epoch.
pub fn train_contrastive_with_history(
    pairs: &[FeaturePair],
    task: Task,
    config: &TrainConfig,
) -> Result<(GroundingModel, Vec<f64>)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidExample("no training pairs".into()));
    }
    let mix = config.pointwise_mix;
    let mut w = vec![0.0; DIM];
    let mut loss = pair_loss(&w, pairs, mix);
    let mut lr = config.learning_rate;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss} at epoch {epoch}")));
        }
        let g = pair_loss_gradient(&w, pairs, mix);
        loop {
            let cand: Vec<f64> = w.iter().zip(&g).map(|(w, g)| w - lr * g).collect();
            let cand_loss = pair_loss(&cand, pairs, mix);
            if cand_loss.is_finite() && cand_loss <= loss {
                w = cand;
                loss = cand_loss;
                break;
            }
            lr *= 0.5;
            if lr < 1e-12 {
                break;
            }
        }
        history.push(loss);
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("weights".into()));
    }
    log::debug!("trained {} on {} pairs, final loss {loss:.4}", task.as_str(), pairs.len());
    let model = GroundingModel::new(w, ModelMeta { task, seed: config.seed, config_hash: config.hash() })?;
    Ok((model, history))
}

pub fn train_contrastive(pairs: &[FeaturePair], task: Task, config: &TrainConfig) -> Result<GroundingModel> {
    train_contrastive_with_history(pairs, task, config).map(|(m, _)| m)
}

/// Threshold in score space maximizing macro-F1 of `s > τ`, smallest on ties.
/// Candidates are the midpoints between consecutive distinct scores and ±∞.
pub fn select_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::SingleClass);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("dev score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n = scores.len() as f64;
    let total_pos = labels.iter().filter(|&&l| l).count() as f64;
    let total_neg = n - total_pos;
    let f1 = |tp: f64, fp: f64, fn_: f64| if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
    // everything at or below the cut is predicted negative
    let macro_at = |neg_pos: f64, neg_neg: f64| {
        let tp = total_pos - neg_pos;
        let fp = total_neg - neg_neg;
        let tn = neg_neg;
        let fn_ = neg_pos;
        0.5 * (f1(tp, fp, fn_) + f1(tn, fn_, fp))
    };
    let mut best_tau = f64::NEG_INFINITY;
    let mut best = macro_at(0.0, 0.0);
    let (mut neg_pos, mut neg_neg) = (0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                neg_pos += 1.0;
            } else {
                neg_neg += 1.0;
            }
            k += 1;
        }
        let tau = if k < order.len() { s + (scores[order[k]] - s) / 2.0 } else { f64::INFINITY };
        let m = macro_at(neg_pos, neg_neg);
        if m > best {
            best = m;
            best_tau = tau;
        }
    }
    Ok(best_tau)
}
