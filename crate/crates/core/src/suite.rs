//! The standard synthetic suite: data generation, training and the experiment runner.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{generate_environment, sample_route_with_id, EnvConfig, Environment, Route};
use crate::error::{Error, Result};
use crate::eval::{
    detection_report, nav_report, random_detection_baseline, random_suggestion_baseline, recall_at_k, simulate_follower,
    DetectionReport, Episode, FollowerMode, FollowerPolicy, NavReport, RankedExample, SuggestionReport,
};
use crate::grounding::{featurize, select_threshold, train_contrastive, FeaturePair, GroundingModel, Task, TrainConfig};
use crate::io::{read_jsonl, write_jsonl};
use crate::lexicon::PhraseSpan;
use crate::perturb::{
    build_detection_pairs, build_one_stage_pairs, build_type_pairs, generate_candidates, CandidateSet, DetectionExample,
    PairConfig, PairedExample, ReplacementSource, Sample,
};
use crate::remedy::{
    detect_highlights, gold_highlights, oracle_suggestions, rank_candidates, score_candidates, score_one_stage, top_k,
    Highlight, ReplacementFactor, SuggestionList,
};
use crate::rng::{derive_seed, derive_seed_str, rng};
use crate::speaker::{
    corrupt_instruction, describe_route, donor_sentences, AnnotatedInstruction, Correction, CorruptionRates,
    HallucinationType,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// The five ways instructions reach a follower.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    None,
    ModelHighlights,
    ModelFull,
    OracleHighlights,
    OracleFull,
}

impl Condition {
    pub const ALL: [Condition; 5] =
        [Condition::None, Condition::ModelHighlights, Condition::ModelFull, Condition::OracleHighlights, Condition::OracleFull];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::None => "none",
            Condition::ModelHighlights => "model_highlights",
            Condition::ModelFull => "model_full",
            Condition::OracleHighlights => "oracle_highlights",
            Condition::OracleFull => "oracle_full",
        }
    }

    pub fn shows_highlights(self) -> bool {
        self != Condition::None
    }

    pub fn shows_suggestions(self) -> bool {
        matches!(self, Condition::ModelFull | Condition::OracleFull)
    }

    pub fn is_oracle(self) -> bool {
        matches!(self, Condition::OracleHighlights | Condition::OracleFull)
    }

    pub fn follower_mode(self) -> FollowerMode {
        match self {
            Condition::None => FollowerMode::Literal,
            Condition::ModelHighlights | Condition::OracleHighlights => FollowerMode::HighlightAware,
            Condition::ModelFull | Condition::OracleFull => FollowerMode::SuggestionAware,
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown condition `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub environments: usize,
    pub routes_per_env: usize,
    pub route_steps: (usize, usize),
    /// train / dev / test route counts
    pub split: (usize, usize, usize),
    pub detection_pairs: usize,
    pub type_pairs: usize,
    pub one_stage_pairs: usize,
    /// balanced examples per evaluation split
    pub eval_examples: usize,
    pub nav_episodes: usize,
    pub top_k: usize,
    pub highlight_cap: usize,
    pub replacement_factor: ReplacementFactor,
    pub rates: CorruptionRates,
    pub pairs: PairConfig,
    pub train: TrainConfig,
    pub follower: FollowerPolicy,
    pub env: EnvConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            environments: 20,
            routes_per_env: 50,
            route_steps: (3, 6),
            split: (500, 250, 250),
            detection_pairs: 2000,
            type_pairs: 1400,
            one_stage_pairs: 2600,
            eval_examples: 500,
            nav_episodes: 100,
            top_k: 3,
            highlight_cap: 3,
            replacement_factor: ReplacementFactor::Complement,
            rates: CorruptionRates::calibrated(),
            pairs: PairConfig::default(),
            train: TrainConfig::default(),
            follower: FollowerPolicy::default(),
            env: EnvConfig::default(),
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        let routes = self.environments * self.routes_per_env;
        let (a, b, c) = self.split;
        if a + b + c != routes {
            return Err(Error::InvalidConfig(format!("split {a}+{b}+{c} does not cover {routes} routes")));
        }
        if self.top_k == 0 || self.highlight_cap == 0 {
            return Err(Error::InvalidConfig("top_k and highlight_cap must be positive".into()));
        }
        self.rates.validate()?;
        self.train.validate()?;
        self.follower.validate()?;
        self.env.validate()
    }

    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canon.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub env_id: String,
    pub split: Split,
    pub route: Route,
    pub clean: AnnotatedInstruction,
    pub corrupted: AnnotatedInstruction,
}

/// A wrapped span with its gold hallucination type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub example: DetectionExample,
    pub h_type: HallucinationType,
}

pub const ENV_SCHEMA: &str = "hear.environment";
pub const CORPUS_SCHEMA: &str = "hear.corpus";
pub const PAIR_SCHEMA: &str = "hear.pairs";
pub const EXAMPLE_SCHEMA: &str = "hear.examples";

#[derive(Debug, Clone)]
pub struct Dataset {
    pub envs: Vec<Environment>,
    pub corpus: Vec<CorpusEntry>,
    pub detection_pairs: Vec<PairedExample>,
    pub same_env_pairs: Vec<PairedExample>,
    pub type_pairs: Vec<PairedExample>,
    pub one_stage_pairs: Vec<PairedExample>,
    pub dev: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    env_index: HashMap<String, usize>,
    route_index: HashMap<String, usize>,
}

pub fn generate_environments(cfg: &SuiteConfig) -> Result<Vec<Environment>> {
    (0..cfg.environments as u64).map(|e| generate_environment(cfg.seed.wrapping_mul(1000) + e, &cfg.env)).collect()
}

impl Dataset {
    fn from_parts(
        envs: Vec<Environment>,
        corpus: Vec<CorpusEntry>,
        pairs: [Vec<PairedExample>; 4],
        dev: Vec<LabeledExample>,
        test: Vec<LabeledExample>,
    ) -> Self {
        let env_index = envs.iter().enumerate().map(|(k, e)| (e.id().to_owned(), k)).collect();
        let route_index = corpus.iter().enumerate().map(|(k, c)| (c.route.id.clone(), k)).collect();
        let [detection_pairs, same_env_pairs, type_pairs, one_stage_pairs] = pairs;
        Self { envs, corpus, detection_pairs, same_env_pairs, type_pairs, one_stage_pairs, dev, test, env_index, route_index }
    }

    pub fn generate(cfg: &SuiteConfig) -> Result<Self> {
        cfg.validate()?;
        let envs = generate_environments(cfg)?;
        let mut drafts: Vec<(usize, Route, AnnotatedInstruction)> = Vec::new();
        for (e, env) in envs.iter().enumerate() {
            for r in 0..cfg.routes_per_env {
                let seed = derive_seed(derive_seed(cfg.seed, e as u64), r as u64);
                let route = sample_route_with_id(env, seed, cfg.route_steps, format!("{}/r{r:02}", env.id()))?;
                let clean = describe_route(env, &route, derive_seed(seed, 1))?;
                drafts.push((e, route, clean));
            }
        }
        let mut order: Vec<usize> = (0..drafts.len()).collect();
        order.shuffle(&mut rng(derive_seed_str(cfg.seed, "split")));
        let mut split = vec![Split::Train; drafts.len()];
        for (rank, &k) in order.iter().enumerate() {
            split[k] = if rank < cfg.split.0 {
                Split::Train
            } else if rank < cfg.split.0 + cfg.split.1 {
                Split::Dev
            } else {
                Split::Test
            };
        }
        let donors: BTreeMap<Split, Vec<Vec<String>>> = [Split::Train, Split::Dev, Split::Test]
            .into_iter()
            .map(|s| {
                let d = drafts.iter().zip(&split).filter(|(_, sp)| **sp == s).flat_map(|((_, _, c), _)| donor_sentences(c)).collect();
                (s, d)
            })
            .collect();

        let mut corpus = Vec::with_capacity(drafts.len());
        for (k, (e, route, clean)) in drafts.into_iter().enumerate() {
            let env = &envs[e];
            let seed = derive_seed(derive_seed_str(cfg.seed, "corrupt"), k as u64);
            let corrupted = corrupt_instruction(env, &route, &clean, &cfg.rates, &donors[&split[k]], seed)?;
            corpus.push(CorpusEntry { env_id: env.id().to_owned(), split: split[k], route, clean, corrupted });
        }

        let train_samples: Vec<Sample<'_>> = corpus
            .iter()
            .filter(|c| c.split == Split::Train)
            .map(|c| Sample { env: &envs[envs.iter().position(|e| e.id() == c.env_id).unwrap()], route: &c.route, instruction: &c.clean })
            .collect();
        let train_donors = &donors[&Split::Train];
        let detection_pairs = build_detection_pairs(
            &train_samples,
            train_donors,
            cfg.detection_pairs,
            derive_seed_str(cfg.seed, "pairs/detection"),
            ReplacementSource::Default,
            &cfg.pairs,
        );
        let same_env_pairs = build_detection_pairs(
            &train_samples,
            train_donors,
            cfg.detection_pairs,
            derive_seed_str(cfg.seed, "pairs/same_env"),
            ReplacementSource::SameEnvSwap,
            &cfg.pairs,
        );
        let type_pairs =
            build_type_pairs(&train_samples, train_donors, cfg.type_pairs, derive_seed_str(cfg.seed, "pairs/type"), &cfg.pairs);
        let one_stage_pairs = build_one_stage_pairs(
            &train_samples,
            train_donors,
            cfg.one_stage_pairs,
            derive_seed_str(cfg.seed, "pairs/one_stage"),
            &cfg.pairs,
        );
        drop(train_samples);

        let mut ds = Self::from_parts(envs, corpus, [detection_pairs, same_env_pairs, type_pairs, one_stage_pairs], vec![], vec![]);
        ds.dev = ds.balanced_examples(cfg, Split::Dev, &donors[&Split::Dev])?;
        ds.test = ds.balanced_examples(cfg, Split::Test, &donors[&Split::Test])?;
        Ok(ds)
    }

    /// Equal numbers of hallucinated and clean spans from corrupted instructions
    /// of `split`, corrupting again with fresh seeds if one round is not enough.
    fn balanced_examples(&self, cfg: &SuiteConfig, split: Split, donors: &[Vec<String>]) -> Result<Vec<LabeledExample>> {
        let half = cfg.eval_examples / 2;
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for round in 0..10u64 {
            for (k, entry) in self.corpus.iter().enumerate().filter(|(_, c)| c.split == split) {
                let ann = if round == 0 {
                    entry.corrupted.clone()
                } else {
                    let seed = derive_seed(derive_seed_str(cfg.seed, &format!("{}/round{round}", split.as_str())), k as u64);
                    corrupt_instruction(self.env(&entry.env_id)?, &entry.route, &entry.clean, &cfg.rates, donors, seed)?
                };
                for (s, g) in ann.phrase_spans.iter().zip(&ann.gold) {
                    let ex = DetectionExample::wrap(&entry.env_id, &entry.route.id, &ann.tokens, s.i, s.j, g.is_hallucination);
                    let item = LabeledExample { example: ex, h_type: g.h_type };
                    if g.is_hallucination {
                        pos.push(item);
                    } else {
                        neg.push(item);
                    }
                }
            }
            if pos.len() >= half && neg.len() >= half {
                break;
            }
        }
        let mut r = rng(derive_seed_str(cfg.seed, &format!("{}/examples", split.as_str())));
        pos.shuffle(&mut r);
        neg.shuffle(&mut r);
        let n = half.min(pos.len()).min(neg.len());
        let mut out: Vec<LabeledExample> = pos.into_iter().take(n).chain(neg.into_iter().take(n)).collect();
        out.shuffle(&mut r);
        Ok(out)
    }

    pub fn env(&self, id: &str) -> Result<&Environment> {
        self.env_index.get(id).map(|&k| &self.envs[k]).ok_or_else(|| Error::MissingArtifact(format!("environment {id}")))
    }

    pub fn entry(&self, route_id: &str) -> Result<&CorpusEntry> {
        self.route_index.get(route_id).map(|&k| &self.corpus[k]).ok_or_else(|| Error::MissingArtifact(format!("route {route_id}")))
    }

    pub fn lookup(&self, example: &DetectionExample) -> Result<(&Environment, &Route)> {
        Ok((self.env(&example.env_id)?, &self.entry(&example.route_id)?.route))
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.corpus.iter().filter(move |c| c.split == split)
    }

    pub fn featurize_pairs(&self, pairs: &[PairedExample]) -> Result<Vec<FeaturePair>> {
        pairs
            .iter()
            .map(|p| {
                let (env, route) = self.lookup(&p.positive)?;
                let a = featurize(env, route, &p.positive)?;
                let (env, route) = self.lookup(&p.negative)?;
                let b = featurize(env, route, &p.negative)?;
                Ok(FeaturePair { positive: a, negative: b, positive_label: p.positive.label, negative_label: p.negative.label })
            })
            .collect()
    }

    pub fn scores(&self, model: &GroundingModel, examples: &[LabeledExample]) -> Result<Vec<f64>> {
        examples
            .iter()
            .map(|e| {
                let (env, route) = self.lookup(&e.example)?;
                model.score(featurize(env, route, &e.example)?.as_slice())
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_jsonl(&dir.join("environments.jsonl"), ENV_SCHEMA, &self.envs)?;
        write_jsonl(&dir.join("corpus.jsonl"), CORPUS_SCHEMA, &self.corpus)?;
        write_jsonl(&dir.join("pairs_detection.jsonl"), PAIR_SCHEMA, &self.detection_pairs)?;
        write_jsonl(&dir.join("pairs_same_env.jsonl"), PAIR_SCHEMA, &self.same_env_pairs)?;
        write_jsonl(&dir.join("pairs_type.jsonl"), PAIR_SCHEMA, &self.type_pairs)?;
        write_jsonl(&dir.join("pairs_one_stage.jsonl"), PAIR_SCHEMA, &self.one_stage_pairs)?;
        write_jsonl(&dir.join("dev.jsonl"), EXAMPLE_SCHEMA, &self.dev)?;
        write_jsonl(&dir.join("test.jsonl"), EXAMPLE_SCHEMA, &self.test)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let envs = read_jsonl(&dir.join("environments.jsonl"), ENV_SCHEMA)?;
        let corpus = read_jsonl(&dir.join("corpus.jsonl"), CORPUS_SCHEMA)?;
        let pairs = [
            read_jsonl(&dir.join("pairs_detection.jsonl"), PAIR_SCHEMA)?,
            read_jsonl(&dir.join("pairs_same_env.jsonl"), PAIR_SCHEMA)?,
            read_jsonl(&dir.join("pairs_type.jsonl"), PAIR_SCHEMA)?,
            read_jsonl(&dir.join("pairs_one_stage.jsonl"), PAIR_SCHEMA)?,
        ];
        let dev = read_jsonl(&dir.join("dev.jsonl"), EXAMPLE_SCHEMA)?;
        let test = read_jsonl(&dir.join("test.jsonl"), EXAMPLE_SCHEMA)?;
        Ok(Self::from_parts(envs, corpus, pairs, dev, test))
    }
}

// ---------------------------------------------------------------------------
// Models

#[derive(Debug, Clone)]
pub struct Models {
    pub detection: GroundingModel,
    pub same_env: GroundingModel,
    pub type_model: GroundingModel,
    pub one_stage: GroundingModel,
}

pub const MODEL_FILES: [&str; 4] = ["detection.model", "same_env.model", "type.model", "one_stage.model"];

/// Trains a model on `pairs` and picks its threshold on `dev`.
pub fn train_on(
    ds: &Dataset,
    pairs: &[PairedExample],
    task: Task,
    train: &TrainConfig,
    dev: &[LabeledExample],
) -> Result<GroundingModel> {
    let features = ds.featurize_pairs(pairs)?;
    let mut model = train_contrastive(&features, task, train)?;
    let labels: Vec<bool> = dev.iter().map(|e| e.example.label).collect();
    let scores = ds.scores(&model, dev)?;
    match select_threshold(&scores, &labels) {
        Ok(t) => model.set_threshold(t),
        Err(Error::SingleClass) => log::warn!("{} threshold left unset: single-class dev set", task.as_str()),
        Err(e) => return Err(e),
    }
    Ok(model)
}

/// Dev examples relabelled for the type task: hallucinations only, label = intrinsic.
pub fn type_dev(dev: &[LabeledExample]) -> Vec<LabeledExample> {
    dev.iter()
        .filter(|e| e.h_type != HallucinationType::None)
        .map(|e| {
            let mut e = e.clone();
            e.example.label = e.h_type == HallucinationType::Intrinsic;
            e
        })
        .collect()
}

impl Models {
    pub fn train(ds: &Dataset, cfg: &SuiteConfig) -> Result<Self> {
        let t = &cfg.train;
        Ok(Self {
            detection: train_on(ds, &ds.detection_pairs, Task::Detection, t, &ds.dev)?,
            same_env: train_on(ds, &ds.same_env_pairs, Task::Detection, t, &ds.dev)?,
            type_model: train_on(ds, &ds.type_pairs, Task::Type, t, &type_dev(&ds.dev))?,
            one_stage: train_on(ds, &ds.one_stage_pairs, Task::OneStage, t, &ds.dev)?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, m) in MODEL_FILES.iter().zip([&self.detection, &self.same_env, &self.type_model, &self.one_stage]) {
            fs::write(dir.join(name), m.to_text())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<GroundingModel> {
            let path = dir.join(name);
            let text = fs::read_to_string(&path).map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
            GroundingModel::from_text(&text)
        };
        Ok(Self {
            detection: read(MODEL_FILES[0])?,
            same_env: read(MODEL_FILES[1])?,
            type_model: read(MODEL_FILES[2])?,
            one_stage: read(MODEL_FILES[3])?,
        })
    }
}

// ---------------------------------------------------------------------------
// Per-condition assistance

pub fn highlights_for(
    condition: Condition,
    models: &Models,
    env: &Environment,
    route: &Route,
    ann: &AnnotatedInstruction,
    cap: usize,
) -> Result<Vec<Highlight>> {
    match condition {
        Condition::None => Ok(Vec::new()),
        Condition::ModelHighlights | Condition::ModelFull => detect_highlights(&models.detection, env, route, &ann.tokens, cap),
        Condition::OracleHighlights | Condition::OracleFull => Ok(gold_highlights(ann, cap)),
    }
}

/// Suggestions for one highlight, or `None` when the condition shows none.
#[allow(clippy::too_many_arguments)]
pub fn suggestions_for(
    condition: Condition,
    models: &Models,
    env: &Environment,
    route: &Route,
    ann: &AnnotatedInstruction,
    highlight: &Highlight,
    k: usize,
    factor: ReplacementFactor,
) -> Result<Option<SuggestionList>> {
    match condition {
        Condition::ModelFull => {
            rank_candidates(&models.detection, &models.type_model, env, route, &ann.tokens, highlight, k, factor).map(Some)
        }
        Condition::OracleFull => oracle_suggestions(ann, highlight).map(Some),
        _ => Ok(None),
    }
}

pub fn run_episode(ds: &Dataset, models: &Models, cfg: &SuiteConfig, entry: &CorpusEntry, condition: Condition) -> Result<Episode> {
    let env = ds.env(&entry.env_id)?;
    let ann = &entry.corrupted;
    let highlights = highlights_for(condition, models, env, &entry.route, ann, cfg.highlight_cap)?;
    let suggestions = highlights
        .iter()
        .map(|h| suggestions_for(condition, models, env, &entry.route, ann, h, cfg.top_k, cfg.replacement_factor))
        .collect::<Result<Vec<_>>>()?;
    let policy = FollowerPolicy { mode: condition.follower_mode(), ..cfg.follower.clone() };
    simulate_follower(
        env,
        &entry.route.id,
        &entry.route.start,
        entry.route.start_heading,
        &ann.tokens,
        &highlights,
        &suggestions,
        entry.route.goal(),
        &policy,
    )
}

// ---------------------------------------------------------------------------
// Experiment

/// One gold hallucination with its candidate corrections.
#[derive(Debug, Clone)]
pub struct SuggestionCase<'a> {
    pub entry: &'a CorpusEntry,
    pub span: PhraseSpan,
    pub candidates: CandidateSet,
    pub gold: Correction,
}

/// Every gold hallucination in the corrupted instructions of `split`.
pub fn suggestion_cases(ds: &Dataset, split: Split) -> Result<Vec<SuggestionCase<'_>>> {
    let mut out = Vec::new();
    for entry in ds.entries(split) {
        let env = ds.env(&entry.env_id)?;
        let ann = &entry.corrupted;
        for (s, g) in ann.phrase_spans.iter().zip(&ann.gold) {
            let Some(gold) = g.gold_correction.clone() else { continue };
            let candidates = generate_candidates(env, &ann.tokens, *s)?.with_gold(&gold);
            out.push(SuggestionCase { entry, span: *s, candidates, gold });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub enum Ranker<'a> {
    Random(u64),
    TwoStage { det: &'a GroundingModel, typ: &'a GroundingModel, factor: ReplacementFactor },
    OneStage(&'a GroundingModel),
}

pub fn rank_cases(ds: &Dataset, cases: &[SuggestionCase<'_>], ranker: Ranker<'_>, k: usize) -> Result<Vec<RankedExample>> {
    let ranked: Vec<Vec<Correction>> = match ranker {
        Ranker::Random(seed) => {
            let sets: Vec<Vec<Correction>> = cases.iter().map(|c| c.candidates.candidates.clone()).collect();
            random_suggestion_baseline(&sets, seed)
        }
        Ranker::TwoStage { det, typ, factor } => cases
            .iter()
            .map(|c| {
                let env = ds.env(&c.entry.env_id)?;
                let items = score_candidates(
                    det,
                    typ,
                    env,
                    &c.entry.route,
                    &c.entry.corrupted.tokens,
                    c.span.into(),
                    &c.candidates.candidates,
                    factor,
                )?;
                Ok(top_k(items, k).into_iter().map(|s| s.candidate).collect())
            })
            .collect::<Result<_>>()?,
        Ranker::OneStage(joint) => cases
            .iter()
            .map(|c| {
                let env = ds.env(&c.entry.env_id)?;
                let items = score_one_stage(
                    joint,
                    env,
                    &c.entry.route,
                    &c.entry.corrupted.tokens,
                    c.span.into(),
                    &c.candidates.candidates,
                )?;
                Ok(top_k(items, k).into_iter().map(|s| s.candidate).collect())
            })
            .collect::<Result<_>>()?,
    };
    Ok(cases
        .iter()
        .zip(ranked)
        .map(|(c, ranked)| RankedExample {
            ranked,
            gold: c.gold.clone(),
            candidate_count: c.candidates.len(),
            gold_in_candidates: c.candidates.gold_index.is_some(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub config_hash: String,
    pub detection: Vec<DetectionReport>,
    pub suggestion: Vec<SuggestionReport>,
    pub navigation: Vec<NavReport>,
}

pub fn intrinsic_reports(
    ds: &Dataset,
    models: &Models,
    cfg: &SuiteConfig,
) -> Result<(Vec<DetectionReport>, Vec<SuggestionReport>)> {
    let mut detection = Vec::new();
    let mut suggestion = Vec::new();
    for (split, examples) in [(Split::Dev, &ds.dev), (Split::Test, &ds.test)] {
        let golds: Vec<bool> = examples.iter().map(|e| e.example.label).collect();
        let random = random_detection_baseline(golds.len(), derive_seed_str(cfg.seed, &format!("random/{}", split.as_str())));
        detection.push(detection_report("random", split.as_str(), &random, &golds)?);
        for (name, model) in [("same_env_swap", &models.same_env), ("one_stage", &models.one_stage), ("final", &models.detection)] {
            let tau = model.threshold().ok_or(Error::ThresholdUnset)?;
            let preds: Vec<bool> = ds.scores(model, examples)?.into_iter().map(|s| s > tau).collect();
            detection.push(detection_report(name, split.as_str(), &preds, &golds)?);
        }

        let cases = suggestion_cases(ds, split)?;
        let k = cfg.top_k;
        let factor = cfg.replacement_factor;
        let rankers = [
            ("random", Ranker::Random(derive_seed_str(cfg.seed, &format!("random-suggest/{}", split.as_str())))),
            ("same_env_swap", Ranker::TwoStage { det: &models.same_env, typ: &models.type_model, factor }),
            ("one_stage", Ranker::OneStage(&models.one_stage)),
            ("final", Ranker::TwoStage { det: &models.detection, typ: &models.type_model, factor }),
        ];
        for (name, ranker) in rankers {
            let ranked = rank_cases(ds, &cases, ranker, k)?;
            suggestion.push(recall_at_k(name, split.as_str(), &ranked, k));
        }
    }
    Ok((detection, suggestion))
}

/// The first `nav_episodes` test routes in corpus order.
pub fn nav_entries<'a>(ds: &'a Dataset, cfg: &SuiteConfig) -> Vec<&'a CorpusEntry> {
    ds.entries(Split::Test).take(cfg.nav_episodes).collect()
}

pub fn extrinsic_reports(ds: &Dataset, models: &Models, cfg: &SuiteConfig) -> Result<Vec<NavReport>> {
    let entries = nav_entries(ds, cfg);
    Condition::ALL
        .into_iter()
        .map(|condition| {
            let episodes =
                entries.iter().map(|e| run_episode(ds, models, cfg, e, condition)).collect::<Result<Vec<_>>>()?;
            nav_report(condition.as_str(), &episodes, |id| ds.env(id).ok())
        })
        .collect()
}

pub fn run_experiment(ds: &Dataset, models: &Models, cfg: &SuiteConfig) -> Result<ExperimentReport> {
    let (detection, suggestion) = intrinsic_reports(ds, models, cfg)?;
    let navigation = extrinsic_reports(ds, models, cfg)?;
    Ok(ExperimentReport { seed: cfg.seed, config_hash: cfg.hash(), detection, suggestion, navigation })
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn detection(&self, system: &str, split: &str) -> Option<&DetectionReport> {
        self.detection.iter().find(|r| r.system == system && r.split == split)
    }

    pub fn suggestion(&self, system: &str, split: &str) -> Option<&SuggestionReport> {
        self.suggestion.iter().find(|r| r.system == system && r.split == split)
    }

    pub fn navigation(&self, condition: Condition) -> Option<&NavReport> {
        self.navigation.iter().find(|r| r.condition == condition.as_str())
    }

    /// Plain-text tables: intrinsic scores per system, then navigation per condition.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let pct = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v));
        writeln!(out, "seed {}  config {}", self.seed, self.config_hash).unwrap();
        writeln!(out).unwrap();
        writeln!(out, "{:<16}{:>10}{:>10}{:>10}{:>10}", "system", "dev F1", "test F1", "dev R@3", "test R@3").unwrap();
        for system in ["random", "same_env_swap", "one_stage", "final"] {
            writeln!(
                out,
                "{:<16}{:>10}{:>10}{:>10}{:>10}",
                system,
                pct(self.detection(system, "dev").map(|r| r.macro_f1)),
                pct(self.detection(system, "test").map(|r| r.macro_f1)),
                pct(self.suggestion(system, "dev").map(|r| r.recall_at_k)),
                pct(self.suggestion(system, "test").map(|r| r.recall_at_k)),
            )
            .unwrap();
        }
        if !self.navigation.is_empty() {
            writeln!(out).unwrap();
            writeln!(out, "{:<20}{:>8}{:>12}{:>12}{:>10}", "condition", "SR", "DIST mean", "DIST med", "checks").unwrap();
            for r in &self.navigation {
                writeln!(
                    out,
                    "{:<20}{:>8.1}{:>12.2}{:>12.2}{:>10.2}",
                    r.condition,
                    100.0 * r.success_rate,
                    r.mean_error_m,
                    r.median_error_m,
                    r.mean_checks
                )
                .unwrap();
            }
        }
        out
    }
}
