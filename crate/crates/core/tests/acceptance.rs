//! End-to-end acceptance criteria. Prints one line per criterion to stderr
//! (bypassing test capture) and fails if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::time::{Duration, Instant};

use rand::Rng as _;

use hear_core::grounding::{
    pair_loss, pair_loss_gradient, select_threshold, train_contrastive_with_history, FeaturePair, FeatureVector,
    GroundingModel, ModelMeta, Task, TrainConfig, DIM,
};
use hear_core::perturb::generate_candidates;
use hear_core::remedy::{
    apply_gold_corrections, rank_candidates, ConstantConfidence, Highlight, ReplacementFactor, TokenRange,
};
use hear_core::rng::{derive_seed, rng};
use hear_core::speaker::Correction;
use hear_core::suite::{
    extrinsic_reports, intrinsic_reports, rank_cases, run_experiment, suggestion_cases, Condition, Dataset, Models,
    Ranker, Split, SuiteConfig,
};

use common::*;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit: Duration, msg: String) -> Outcome {
    ensure(elapsed <= limit, format!("{msg} in {:.1}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs()))
}

fn small_suite(seed: u64) -> (SuiteConfig, Dataset) {
    let cfg = SuiteConfig {
        seed,
        environments: 4,
        routes_per_env: 10,
        split: (20, 10, 10),
        detection_pairs: 40,
        type_pairs: 40,
        one_stage_pairs: 40,
        eval_examples: 20,
        nav_episodes: 5,
        ..SuiteConfig::default()
    };
    let ds = Dataset::generate(&cfg).unwrap();
    (cfg, ds)
}

fn random_model(r: &mut impl rand::Rng, task: Task) -> GroundingModel {
    let w = (0..DIM).map(|_| r.gen_range(-3.0..3.0)).collect();
    GroundingModel::new(w, ModelMeta { task, seed: 0, config_hash: String::new() }).unwrap()
}

fn single_highlight(tokens: &[String], span: hear_core::lexicon::PhraseSpan) -> Highlight {
    let range = TokenRange::from(span);
    Highlight { span: range, text: range.text(tokens), confidence: 0.9, member_spans: vec![span], merged: false }
}

fn p1_formula() -> Outcome {
    let t = Instant::now();
    let (_, ds) = small_suite(11);
    let mut r = rng(101);
    let mut worst = 0.0f64;
    let mut instances = 0;
    while instances < 200 {
        let entry = &ds.corpus[r.gen_range(0..ds.corpus.len())];
        let ann = &entry.corrupted;
        if ann.phrase_spans.is_empty() {
            continue;
        }
        let span = ann.phrase_spans[r.gen_range(0..ann.phrase_spans.len())];
        let env = ds.env(&entry.env_id).unwrap();
        let det = random_model(&mut r, Task::Detection);
        let typ = random_model(&mut r, Task::Type);
        let candidates = generate_candidates(env, &ann.tokens, span).unwrap().candidates;
        let highlight = single_highlight(&ann.tokens, span);
        for factor in [ReplacementFactor::Literal, ReplacementFactor::Complement] {
            let got = rank_candidates(&det, &typ, env, &entry.route, &ann.tokens, &highlight, candidates.len(), factor)
                .map_err(|e| e.to_string())?;
            let want = oracle_order(oracle_replacement_scores(
                det.weights(),
                typ.weights(),
                env,
                &entry.route,
                &ann.tokens,
                span.into(),
                &candidates,
                factor,
            ));
            if got.items.len() != want.len() {
                return Err(format!("instance {instances}: {} items, oracle has {}", got.items.len(), want.len()));
            }
            for (g, (c, s)) in got.items.iter().zip(&want) {
                if g.candidate != *c {
                    return Err(format!("instance {instances}: order differs at {} vs {}", g.candidate, c));
                }
                worst = worst.max((g.score - s).abs());
            }
        }
        instances += 1;
    }
    let msg = format!("formula fidelity: 200 instances x 2 factors, max deviation {worst:e}");
    if worst != 0.0 {
        return Err(msg);
    }
    within(t.elapsed(), Duration::from_secs(10), msg)
}

fn p2_closed_form() -> Outcome {
    let (_, ds) = small_suite(12);
    let half = ConstantConfidence(0.5);
    let mut checked = 0;
    for entry in ds.corpus.iter().take(20) {
        let env = ds.env(&entry.env_id).unwrap();
        let ann = &entry.corrupted;
        for &span in &ann.phrase_spans {
            let n = generate_candidates(env, &ann.tokens, span).unwrap().len();
            let highlight = single_highlight(&ann.tokens, span);
            let list = rank_candidates(&half, &half, env, &entry.route, &ann.tokens, &highlight, n, ReplacementFactor::Literal)
                .map_err(|e| e.to_string())?;
            if list.items[0].candidate != Correction::Remove || list.items[0].score != 0.5 {
                return Err(format!("REMOVE not first with 0.5 for `{}`", highlight.text));
            }
            if let Some(bad) = list.items[1..].iter().find(|s| s.score != 0.25) {
                return Err(format!("replacement {} scored {}", bad.candidate, bad.score));
            }
            checked += 1;
        }
    }
    Ok(format!("closed form: {checked} candidate sets, replacements 0.25, REMOVE 0.5 and first"))
}

fn random_pairs(r: &mut impl rand::Rng, n: usize) -> Vec<FeaturePair> {
    let mut v = || {
        let mut f = [0.0; DIM];
        for x in &mut f {
            *x = r.gen_range(-1.0..1.0);
        }
        FeatureVector(f)
    };
    (0..n).map(|_| FeaturePair::new(v(), v())).collect()
}

fn p3_trainer() -> Outcome {
    let t = Instant::now();
    let mut r = rng(303);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = r.gen_range(1..20);
        let pairs = random_pairs(&mut r, n);
        let w: Vec<f64> = (0..DIM).map(|_| r.gen_range(-2.0..2.0)).collect();
        let mix = r.gen_range(0.0..1.0);
        let g = pair_loss_gradient(&w, &pairs, mix);
        let fd: Vec<f64> = (0..DIM).map(|k| central_difference(|w| pair_loss(w, &pairs, mix), &w, k, 1e-5)).collect();
        let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / norm);
    }
    if worst > 1e-6 {
        return Err(format!("gradient relative error {worst:e}"));
    }

    // separable toy set: positives light feature 0, negatives feature 1
    let mut toy = Vec::new();
    for k in 0..20 {
        let mut a = [0.0; DIM];
        let mut b = [0.0; DIM];
        a[0] = 1.0;
        b[1] = 1.0;
        a[DIM - 1] = 1.0;
        b[DIM - 1] = 1.0;
        a[2 + k % 5] = 0.5;
        b[2 + (k + 1) % 5] = 0.5;
        toy.push(FeaturePair::new(FeatureVector(a), FeatureVector(b)));
    }
    let cfg = TrainConfig { epochs: 200, ..TrainConfig::default() };
    let (model, history) = train_contrastive_with_history(&toy, Task::Detection, &cfg).map_err(|e| e.to_string())?;
    if let Some(k) = (1..history.len()).find(|&k| history[k] > history[k - 1]) {
        return Err(format!("loss rose at epoch {k}"));
    }
    let final_pair = pair_loss(model.weights(), &toy, 0.0);
    let msg = format!("trainer: gradient rel. error {worst:.1e}, toy pair loss {final_pair:.4} after 200 epochs");
    if final_pair >= 0.1 {
        return Err(msg);
    }
    within(t.elapsed(), Duration::from_secs(30), msg)
}

fn p6_threshold() -> Outcome {
    let mut r = rng(606);
    for case in 0..100 {
        let n = r.gen_range(2..60);
        let coarse = case % 2 == 0;
        let scores: Vec<f64> =
            (0..n).map(|_| if coarse { r.gen_range(-3..4) as f64 } else { r.gen_range(-5.0..5.0) }).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let tau = select_threshold(&scores, &labels).map_err(|e| e.to_string())?;
        let preds: Vec<bool> = scores.iter().map(|s| *s > tau).collect();
        let (best, best_preds) = brute_threshold(&scores, &labels);
        let got = brute_macro_f1(&preds, &labels);
        if got != best || preds != best_preds {
            return Err(format!("dev set {case}: selected F1 {got} vs brute force {best}"));
        }
    }
    Ok("threshold selection: 100 dev sets match brute force exactly".into())
}

struct Standard {
    cfg: SuiteConfig,
    ds: Dataset,
    models: Models,
    build: Duration,
}

fn standard() -> Standard {
    let t = Instant::now();
    let cfg = SuiteConfig::default();
    let ds = Dataset::generate(&cfg).unwrap();
    let models = Models::train(&ds, &cfg).unwrap();
    Standard { cfg, ds, models, build: t.elapsed() }
}

fn p4_detection(s: &Standard) -> Outcome {
    let t = Instant::now();
    let (det, _) = intrinsic_reports(&s.ds, &s.models, &s.cfg).map_err(|e| e.to_string())?;
    let elapsed = s.build + t.elapsed();
    let find = |sys: &str| det.iter().find(|r| r.system == sys && r.split == "test").unwrap().macro_f1;
    let (fin, rnd) = (find("final"), find("random"));
    let counts = det.iter().find(|r| r.split == "test").unwrap();
    let balanced = counts.positive.support == 250 && counts.negative.support == 250;
    let msg = format!(
        "detection skill: test macro-F1 {fin:.3}, random {rnd:.3}, same-env {:.3}, one-stage {:.3}",
        find("same_env_swap"),
        find("one_stage")
    );
    ensure(fin >= 0.8 && fin - rnd >= 0.25 && (rnd - 0.5).abs() <= 0.03 && balanced, msg.clone())?;
    within(elapsed, Duration::from_secs(120), msg)
}

fn p5_suggestion(s: &Standard) -> Outcome {
    let (_, sugg) = intrinsic_reports(&s.ds, &s.models, &s.cfg).map_err(|e| e.to_string())?;
    let find = |sys: &str| sugg.iter().find(|r| r.system == sys && r.split == "test").unwrap();
    let fin = find("final");
    let one = find("one_stage");
    ensure(fin.excluded == 0, format!("{} cases lack the gold candidate", fin.excluded))?;
    ensure(fin.recall_at_k >= 0.75, format!("two-stage R@3 {:.3}", fin.recall_at_k))?;

    let cases = suggestion_cases(&s.ds, Split::Test).map_err(|e| e.to_string())?;
    let ranked = rank_cases(&s.ds, &cases, Ranker::Random(derive_seed(s.cfg.seed, 5)), 3).map_err(|e| e.to_string())?;
    let mut buckets: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    for e in &ranked {
        let b = buckets.entry(e.candidate_count).or_default();
        b.0 += 1;
        b.1 += u64::from(e.ranked.contains(&e.gold));
    }
    for (&m, &(n, hits)) in &buckets {
        let (lo, hi) = binomial_interval(n, (3.0 / m as f64).min(1.0), 0.99);
        if hits < lo || hits > hi {
            return Err(format!("random R@3 bucket M={m}: {hits}/{n} outside [{lo}, {hi}]"));
        }
    }
    Ok(format!(
        "suggestion skill: two-stage R@3 {:.3}, one-stage {:.3}, random {:.3} ({} cases, {} size buckets within 99% CI)",
        fin.recall_at_k,
        one.recall_at_k,
        find("random").recall_at_k,
        fin.evaluated,
        buckets.len()
    ))
}

fn p7_extrinsic(s: &Standard) -> Outcome {
    let t = Instant::now();
    let nav = extrinsic_reports(&s.ds, &s.models, &s.cfg).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let get = |c: Condition| nav.iter().find(|r| r.condition == c.as_str()).unwrap();
    let none = get(Condition::None);
    let oh = get(Condition::OracleHighlights);
    let of = get(Condition::OracleFull);
    let assisted = [Condition::ModelHighlights, Condition::ModelFull, Condition::OracleHighlights, Condition::OracleFull];
    let msg = format!(
        "extrinsic orderings: SR none {:.2}, oracle highlights {:.2}, oracle full {:.2}; DIST {:.2} vs {:.2}; checks {:.2} vs min assisted {:.2}",
        none.success_rate,
        oh.success_rate,
        of.success_rate,
        of.mean_error_m,
        none.mean_error_m,
        none.mean_checks,
        assisted.iter().map(|c| get(*c).mean_checks).fold(f64::INFINITY, f64::min)
    );
    let ok = none.rows.len() == 100
        && oh.success_rate >= none.success_rate + 0.05
        && of.success_rate >= oh.success_rate
        && of.mean_error_m <= none.mean_error_m
        && assisted.iter().all(|c| get(*c).mean_checks >= none.mean_checks);
    ensure(ok, msg.clone())?;
    within(elapsed, Duration::from_secs(60), msg)
}

fn p8_calibration(s: &Standard) -> Outcome {
    let corpus = &s.ds.corpus;
    let inst = corpus.iter().filter(|c| c.corrupted.gold.iter().any(|g| g.is_hallucination)).count() as f64
        / corpus.len() as f64;
    let spans: usize = corpus.iter().map(|c| c.corrupted.gold.len()).sum();
    let bad: usize = corpus.iter().map(|c| c.corrupted.gold.iter().filter(|g| g.is_hallucination).count()).sum();
    let phrase = bad as f64 / spans as f64;
    ensure(
        corpus.len() == 1000 && (inst - 0.675).abs() <= 0.05 && (phrase - 0.209).abs() <= 0.03,
        format!("corruption calibration: {} instructions, instruction-level {inst:.3}, phrase-level {phrase:.3}", corpus.len()),
    )
}

fn p9_round_trip(s: &Standard) -> Outcome {
    let mut restored = 0;
    for entry in s.ds.corpus.iter().filter(|c| c.corrupted.gold.iter().any(|g| g.is_hallucination)).take(200) {
        let fixed = apply_gold_corrections(&entry.corrupted);
        if !oracle_grounded(&entry.route, &fixed) {
            return Err(format!("{}: corrected instruction not grounded: {}", entry.route.id, fixed.text()));
        }
        if fixed.tokens != entry.clean.tokens {
            return Err(format!("{}: correction differs from the clean instruction", entry.route.id));
        }
        restored += 1;
    }
    ensure(restored == 200, format!("only {restored} corrupted samples"))?;

    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    s.ds.save(a.path()).map_err(|e| e.to_string())?;
    s.models.save(a.path()).map_err(|e| e.to_string())?;
    Dataset::load(a.path()).and_then(|d| d.save(b.path())).map_err(|e| e.to_string())?;
    Models::load(a.path()).and_then(|m| m.save(b.path())).map_err(|e| e.to_string())?;
    let mut files = 0;
    for f in std::fs::read_dir(a.path()).map_err(|e| e.to_string())? {
        let name = f.map_err(|e| e.to_string())?.file_name();
        let x = std::fs::read(a.path().join(&name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(&name)).map_err(|e| e.to_string())?;
        ensure(x == y, format!("{} changed after a round trip", name.to_string_lossy()))?;
        files += 1;
    }
    Ok(format!("round trip: 200 gold-corrected samples grounded, {files} artifact files byte-identical"))
}

fn p10_determinism(first: &Standard) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let once = run_experiment(&first.ds, &first.models, &first.cfg).map_err(|e| e.to_string())?;
    // second run goes through the files, as separate commands would
    let cfg = SuiteConfig::default();
    Dataset::generate(&cfg).and_then(|d| d.save(dir.path())).map_err(|e| e.to_string())?;
    let ds = Dataset::load(dir.path()).map_err(|e| e.to_string())?;
    Models::train(&ds, &cfg).and_then(|m| m.save(dir.path())).map_err(|e| e.to_string())?;
    let models = Models::load(dir.path()).map_err(|e| e.to_string())?;
    let twice = run_experiment(&ds, &models, &cfg).map_err(|e| e.to_string())?;
    let (a, b) = (once.to_json().unwrap(), twice.to_json().unwrap());
    ensure(a == b && once.to_text() == twice.to_text(), "reports differ between runs".into())?;
    Ok(format!("determinism: two pipeline runs give identical reports ({} bytes)", a.len()))
}

#[test]
fn acceptance() {
    let mut results: Vec<(&str, Outcome)> = vec![("P1", p1_formula()), ("P2", p2_closed_form()), ("P3", p3_trainer())];
    let s = standard();
    results.push(("P4", p4_detection(&s)));
    results.push(("P5", p5_suggestion(&s)));
    results.push(("P6", p6_threshold()));
    results.push(("P7", p7_extrinsic(&s)));
    results.push(("P8", p8_calibration(&s)));
    results.push(("P9", p9_round_trip(&s)));
    results.push(("P10", p10_determinism(&s)));

    let mut err = std::io::stderr().lock();
    writeln!(err).unwrap();
    for (id, r) in &results {
        match r {
            Ok(m) => writeln!(err, "{id:<4} PASS  {m}").unwrap(),
            Err(m) => writeln!(err, "{id:<4} FAIL  {m}").unwrap(),
        }
    }
    let failed: Vec<&str> = results.iter().filter(|(_, r)| r.is_err()).map(|(id, _)| *id).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
