mod common;

use proptest::prelude::*;

use hear_core::env::{generate_environment, path_distance, sample_route, EnvConfig, Environment, Route};
use hear_core::eval::{recall_at_k, simulate_follower, FollowerMode, FollowerPolicy, RankedExample};
use hear_core::grounding::{
    featurize, train_contrastive, FeaturePair, FeatureVector, GroundingModel, ModelMeta, Task, TrainConfig, DIM,
};
use hear_core::lexicon::extract_phrases;
use hear_core::perturb::{generate_candidates, perturb_span, DetectionExample, ReplacementSource, BH, EH};
use hear_core::remedy::{
    gold_highlights, merge_highlights, rank_candidates, score_candidates, Highlight, ReplacementFactor, TokenRange,
};
use hear_core::speaker::{corrupt_instruction, describe_route, donor_sentences, CorruptionRates, HallucinationType};

use common::oracle_grounded;

fn world(seed: u64) -> (Environment, Route) {
    let env = generate_environment(seed, &EnvConfig::default()).unwrap();
    let route = sample_route(&env, seed ^ 0x5eed, (1, 6)).unwrap();
    (env, route)
}

fn model(weights: Vec<f64>, task: Task) -> GroundingModel {
    GroundingModel::new(weights, ModelMeta { task, seed: 0, config_hash: String::new() }).unwrap()
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, DIM)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn environments_are_well_formed(seed in any::<u64>()) {
        let env = generate_environment(seed, &EnvConfig::default()).unwrap();
        let n = env.nodes().len();
        let mut ids: Vec<&str> = env.nodes().iter().map(|x| x.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
        prop_assert!(env.distances_from(0).iter().all(|d| d.is_finite()));
        for e in env.edges() {
            let (a, b) = (env.node(&e.from).unwrap(), env.node(&e.to).unwrap());
            let len = ((a.position[0] - b.position[0]).powi(2) + (a.position[1] - b.position[1]).powi(2)).sqrt();
            prop_assert!((len - e.length_m).abs() < 1e-9);
            prop_assert!(env.is_adjacent(&e.to, &e.from));
        }
        for node in env.nodes() {
            prop_assert!(node.objects.len() <= 4);
            prop_assert!(env.room_vocab().contains(&node.room_label));
            prop_assert!(node.objects.iter().all(|o| env.object_vocab().contains(&o.name)));
        }
    }

    #[test]
    fn path_distance_is_a_metric(seed in any::<u64>(), a in 0usize..64, b in 0usize..64, c in 0usize..64) {
        let env = generate_environment(seed, &EnvConfig::default()).unwrap();
        let n = env.nodes().len();
        let id = |k: usize| env.nodes()[k % n].id.clone();
        let d = |x: &str, y: &str| path_distance(&env, x, y).unwrap();
        let (a, b, c) = (id(a), id(b), id(c));
        prop_assert_eq!(d(&a, b.as_str()), d(&b, a.as_str()));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
    }

    #[test]
    fn routes_validate(seed in any::<u64>()) {
        let (env, route) = world(seed);
        prop_assert!(route.validate(&env).is_ok());
        prop_assert!((1..=10).contains(&route.len()));
        let ids = route.node_ids();
        for w in ids.windows(2) {
            prop_assert!(env.is_adjacent(w[0], w[1]));
        }
    }

    #[test]
    fn speaker_output_is_grounded(seed in any::<u64>(), s in any::<u64>()) {
        let (env, route) = world(seed);
        let ann = describe_route(&env, &route, s).unwrap();
        prop_assert!(oracle_grounded(&route, &ann), "{}", ann.text());
        prop_assert_eq!(extract_phrases(&ann.tokens), ann.phrase_spans.clone());
        prop_assert!(ann.tokens.len() <= 60);
        prop_assert!(ann.gold.iter().all(|g| !g.is_hallucination));
    }

    #[test]
    fn corruption_keeps_labels_consistent(seed in any::<u64>(), s in any::<u64>()) {
        let (env, route) = world(seed);
        let clean = describe_route(&env, &route, s).unwrap();
        let donors = donor_sentences(&describe_route(&env, &route, s.wrapping_add(1)).unwrap());
        prop_assert_eq!(&corrupt_instruction(&env, &route, &clean, &CorruptionRates::zero(), &donors, s).unwrap(), &clean);
        let rates = CorruptionRates { instruction: 1.0, ..CorruptionRates::calibrated() };
        let bad = corrupt_instruction(&env, &route, &clean, &rates, &donors, s).unwrap();
        prop_assert!(bad.validate().is_ok());
        prop_assert!(bad.tokens.len() <= 60);
        for g in &bad.gold {
            prop_assert_eq!(g.h_type == HallucinationType::None, !g.is_hallucination);
            if g.h_type == HallucinationType::Extrinsic {
                prop_assert!(g.gold_correction.as_ref().unwrap().is_remove());
            }
        }
        let clause_count = bad.clauses().len();
        prop_assert_eq!(bad.alignment.len(), clause_count);
    }

    #[test]
    fn perturbations_invert_and_candidates_cover_gold(seed in any::<u64>(), s in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let (env, route) = world(seed);
        let clean = describe_route(&env, &route, s).unwrap();
        let idx = pick.index(clean.phrase_spans.len());
        let Ok((bad, record)) = perturb_span(&env, &route, &clean, idx, ReplacementSource::Default, s) else {
            return Ok(());
        };
        prop_assert_eq!(record.invert(&bad.tokens), clean.tokens.clone());
        let span = bad.phrase_spans[idx];
        let gold = bad.gold[idx].gold_correction.clone().unwrap();
        let set = generate_candidates(&env, &bad.tokens, span).unwrap().with_gold(&gold);
        prop_assert!(set.gold_index.is_some(), "gold {} missing", gold);
        prop_assert_eq!(set.candidates.iter().filter(|c| c.is_remove()).count(), 1);
        let mut sorted = set.candidates.clone();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), set.len());
        prop_assert!(!set.candidates.iter().any(|c| c.as_str() == set.original));

        let ex = DetectionExample::wrap(env.id(), &route.id, &bad.tokens, span.i, span.j, true);
        prop_assert!(ex.validate().is_ok());
        prop_assert_eq!(ex.tokens.iter().filter(|t| *t == BH).count(), 1);
        prop_assert_eq!(ex.tokens.iter().filter(|t| *t == EH).count(), 1);
        let f = featurize(&env, &route, &ex).unwrap();
        prop_assert!(f.as_slice().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn scaling_weights_and_threshold_keeps_labels(w in weights(), tau in -3.0f64..3.0, c in 0.1f64..10.0, x in weights()) {
        let mut a = model(w.clone(), Task::Detection);
        a.set_threshold(tau);
        let mut b = model(w.iter().map(|v| v * c).collect(), Task::Detection);
        b.set_threshold(tau * c);
        let fv = FeatureVector(x.try_into().unwrap());
        let (la, _) = a.predict_features(&fv).unwrap();
        let (lb, _) = b.predict_features(&fv).unwrap();
        // labels can only differ when the score sits on the threshold up to rounding
        let s = a.score(fv.as_slice()).unwrap();
        prop_assume!((s - tau).abs() > 1e-9);
        prop_assert_eq!(la, lb);
    }

    #[test]
    fn raising_a_positive_feature_never_unflags(w in weights(), x in weights(), k in 0usize..DIM, bump in 0.0f64..2.0) {
        let mut m = model(w.clone(), Task::Detection);
        m.set_threshold(0.0);
        let mut y = x.clone();
        y[k] += bump;
        let before = m.predict_features(&FeatureVector(x.try_into().unwrap())).unwrap().0;
        let after = m.predict_features(&FeatureVector(y.try_into().unwrap())).unwrap().0;
        prop_assume!(w[k] > 0.0);
        prop_assert!(!before || after);
    }

    #[test]
    fn training_ignores_pair_order(raw in prop::collection::vec((weights(), weights()), 1..12), rot in 0usize..12) {
        let pairs: Vec<FeaturePair> = raw
            .into_iter()
            .map(|(a, b)| FeaturePair::new(FeatureVector(a.try_into().unwrap()), FeatureVector(b.try_into().unwrap())))
            .collect();
        let mut shuffled = pairs.clone();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        shuffled.reverse();
        let cfg = TrainConfig { epochs: 50, ..TrainConfig::default() };
        let a = train_contrastive(&pairs, Task::Detection, &cfg).unwrap();
        let b = train_contrastive(&shuffled, Task::Detection, &cfg).unwrap();
        for (x, y) in a.weights().iter().zip(b.weights()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn suggestion_scores_are_bounded_and_order_free(seed in any::<u64>(), s in any::<u64>(), wd in weights(), wt in weights(), pick in any::<prop::sample::Index>(), rot in 0usize..64) {
        let (env, route) = world(seed);
        let ann = describe_route(&env, &route, s).unwrap();
        let span = ann.phrase_spans[pick.index(ann.phrase_spans.len())];
        let det = model(wd, Task::Detection);
        let typ = model(wt, Task::Type);
        let set = generate_candidates(&env, &ann.tokens, span).unwrap();
        let target = TokenRange::from(span);
        let scored = score_candidates(&det, &typ, &env, &route, &ann.tokens, target, &set.candidates, ReplacementFactor::Complement).unwrap();
        let ex = DetectionExample::wrap(env.id(), &route.id, &ann.tokens, span.i, span.j, false);
        let p_i = typ.confidence(featurize(&env, &route, &ex).unwrap().as_slice()).unwrap();
        for sg in &scored {
            prop_assert!((0.0..=1.0).contains(&sg.score));
            if sg.candidate.is_remove() {
                prop_assert_eq!(sg.score + p_i, 1.0);
            }
        }
        let h = Highlight { span: target, text: target.text(&ann.tokens), confidence: 0.5, member_spans: vec![span], merged: false };
        let list = rank_candidates(&det, &typ, &env, &route, &ann.tokens, &h, 3, ReplacementFactor::Complement).unwrap();
        prop_assert!(list.items.len() <= 3);
        for w in list.items.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].candidate < w[1].candidate));
        }
        let mut rotated = set.candidates.clone();
        let len = rotated.len();
        rotated.rotate_left(rot % len);
        let again = score_candidates(&det, &typ, &env, &route, &ann.tokens, target, &rotated, ReplacementFactor::Complement).unwrap();
        let top = |v: Vec<_>| hear_core::remedy::top_k(v, 3);
        prop_assert_eq!(top(scored), top(again));
    }

    #[test]
    fn highlights_are_capped_and_disjoint(seed in any::<u64>(), s in any::<u64>(), flags in prop::collection::vec((any::<bool>(), 0.01f64..0.99), 40)) {
        let (env, route) = world(seed);
        let ann = describe_route(&env, &route, s).unwrap();
        let preds: Vec<(bool, f64)> = flags.into_iter().take(ann.phrase_spans.len()).collect();
        prop_assume!(preds.len() == ann.phrase_spans.len());
        let hs = merge_highlights(&ann.tokens, &ann.phrase_spans, &preds, 3);
        prop_assert!(hs.len() <= 3);
        for w in hs.windows(2) {
            prop_assert!(w[0].span.j < w[1].span.i);
        }
        prop_assert!(hs.iter().all(|h| h.confidence > 0.0 && h.confidence < 1.0));
        prop_assert!(gold_highlights(&ann, 3).is_empty());
    }

    #[test]
    fn recall_grows_with_k(ranks in prop::collection::vec(0usize..8, 1..30)) {
        use hear_core::speaker::Correction;
        let examples: Vec<RankedExample> = ranks
            .iter()
            .map(|&r| RankedExample {
                ranked: (0..8).map(|k| Correction::parse(&format!("c{k}"))).collect(),
                gold: Correction::parse(&format!("c{r}")),
                candidate_count: 8,
                gold_in_candidates: true,
            })
            .collect();
        let mut last = 0.0;
        for k in 1..=8 {
            let r = recall_at_k("s", "t", &examples, k).recall_at_k;
            prop_assert!(r >= last && (0.0..=1.0).contains(&r));
            last = r;
        }
        prop_assert_eq!(last, 1.0);
    }

    #[test]
    fn follower_walks_the_graph(seed in any::<u64>(), s in any::<u64>(), mode in 0usize..3, budget in 1usize..6) {
        let (env, route) = world(seed);
        let clean = describe_route(&env, &route, s).unwrap();
        let rates = CorruptionRates { instruction: 1.0, ..CorruptionRates::calibrated() };
        let ann = corrupt_instruction(&env, &route, &clean, &rates, &[], s).unwrap();
        let mode = [FollowerMode::Literal, FollowerMode::HighlightAware, FollowerMode::SuggestionAware][mode];
        let policy = FollowerPolicy { mode, check_budget: budget, ..FollowerPolicy::default() };
        let hs = gold_highlights(&ann, 3);
        let sugg: Vec<_> = hs.iter().map(|h| hear_core::remedy::oracle_suggestions(&ann, h).ok()).collect();
        let ep = simulate_follower(&env, &route.id, &route.start, route.start_heading, &ann.tokens, &hs, &sugg, route.goal(), &policy).unwrap();
        prop_assert!(ep.checks_used >= 1 && ep.checks_used <= budget);
        prop_assert_eq!(ep.trajectory.first().unwrap(), &route.start);
        prop_assert_eq!(ep.trajectory.last().unwrap(), &ep.final_node);
        for w in ep.trajectory.windows(2) {
            prop_assert!(env.is_adjacent(&w[0], &w[1]), "{} -> {}", w[0], w[1]);
        }
        let err = path_distance(&env, &ep.final_node, route.goal()).unwrap();
        prop_assert_eq!(ep.success, err <= 3.0);
    }
}
