use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{Environment, Route};
use crate::error::{Error, Result};
use crate::perturb::DetectionExample;

use super::features::{featurize, FeatureVector, DIM, FEATURE_NAMES};

const MAGIC: &str = "hear-model v1";

/// What a model was trained to tell apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// hallucinated span vs grounded span
    Detection,
    /// intrinsic vs extrinsic hallucination
    Type,
    /// detection pairs plus deletion pairs, used to score corrections directly
    OneStage,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Detection => "detection",
            Task::Type => "type",
            Task::OneStage => "one_stage",
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detection" => Ok(Task::Detection),
            "type" => Ok(Task::Type),
            "one_stage" | "one-stage" => Ok(Task::OneStage),
            other => Err(Error::InvalidConfig(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub task: Task,
    pub seed: u64,
    pub config_hash: String,
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Linear scorer `s(x) = <w, f(x)>` with an optional threshold in score space.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingModel {
    weights: Vec<f64>,
    threshold: Option<f64>,
    pub meta: ModelMeta,
}

impl GroundingModel {
    pub fn new(weights: Vec<f64>, meta: ModelMeta) -> Result<Self> {
        if weights.len() != DIM {
            return Err(Error::Dimension { expected: DIM, got: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("model weights".into()));
        }
        Ok(Self { weights, threshold: None, meta })
    }

    pub fn zeros(meta: ModelMeta) -> Self {
        Self { weights: vec![0.0; DIM], threshold: None, meta }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn set_threshold(&mut self, tau: f64) {
        self.threshold = Some(tau);
    }

    pub fn score(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.weights.len() {
            return Err(Error::Dimension { expected: self.weights.len(), got: features.len() });
        }
        Ok(self.weights.iter().zip(features).map(|(w, x)| w * x).sum())
    }

    pub fn confidence(&self, features: &[f64]) -> Result<f64> {
        self.score(features).map(sigmoid)
    }

    /// Label and confidence for a feature vector; the label is `s > τ`.
    pub fn predict_features(&self, features: &FeatureVector) -> Result<(bool, f64)> {
        let tau = self.threshold.ok_or(Error::ThresholdUnset)?;
        let s = self.score(features.as_slice())?;
        Ok((s > tau, sigmoid(s)))
    }

    pub fn predict(&self, env: &Environment, route: &Route, example: &DetectionExample) -> Result<(bool, f64)> {
        self.predict_features(&featurize(env, route, example)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "task {}", self.meta.task.as_str()).unwrap();
        writeln!(out, "seed {}", self.meta.seed).unwrap();
        writeln!(out, "config_hash {}", self.meta.config_hash).unwrap();
        match self.threshold {
            None => writeln!(out, "threshold none").unwrap(),
            Some(t) => writeln!(out, "threshold {}", fmt_f64(t)).unwrap(),
        }
        for (name, w) in FEATURE_NAMES.iter().zip(&self.weights) {
            writeln!(out, "weight {name} {}", fmt_f64(*w)).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
        let fail = |line: usize, msg: &str| Error::Format { line, msg: msg.to_owned() };
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(fail(1, "missing `hear-model v1` header")),
        }
        let mut field = |key: &str| -> Result<(usize, String)> {
            let (n, l) = lines.next().ok_or_else(|| fail(0, &format!("missing `{key}`")))?;
            let rest = l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')).ok_or_else(|| fail(n, &format!("expected `{key}`")))?;
            Ok((n, rest.to_owned()))
        };
        let (n, task) = field("task")?;
        let task = task.parse().map_err(|_| fail(n, "unknown task"))?;
        let (n, seed) = field("seed")?;
        let seed = seed.parse().map_err(|_| fail(n, "bad seed"))?;
        let (_, config_hash) = field("config_hash")?;
        let (n, t) = field("threshold")?;
        let threshold = if t == "none" { None } else { Some(parse_f64(&t).ok_or_else(|| fail(n, "bad threshold"))?) };
        let mut weights = Vec::with_capacity(DIM);
        for name in FEATURE_NAMES {
            let (n, rest) = field("weight")?;
            let (got, value) = rest.split_once(' ').ok_or_else(|| fail(n, "expected `weight <name> <value>`"))?;
            if got != name {
                return Err(fail(n, &format!("expected weight `{name}`, found `{got}`")));
            }
            weights.push(parse_f64(value).filter(|w| w.is_finite()).ok_or_else(|| fail(n, "bad weight"))?);
        }
        let mut model = Self::new(weights, ModelMeta { task, seed, config_hash })?;
        model.threshold = threshold;
        Ok(model)
    }
}

fn fmt_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:?}")
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    match s {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok().filter(|x: &f64| !x.is_nan()),
    }
}
