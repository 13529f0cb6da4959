mod oracles;

use std::collections::BTreeMap;

use proptest::prelude::*;
use softscale::analysis::oracle_gain_fraction;
use softscale::data::{Cache, CacheKey, CachePayload, PayloadKind};
use softscale::inference::{build_prompt, parse_sample, PromptConfig, Templates};
use softscale::metrics::{entropy, manhattan, prediction_diversity, wasserstein};
use softscale::scaling::{
    bon_oracle, bon_select, majority_voting, model_averaging, smooth_uniform,
};
use softscale::*;

fn label(raw: Vec<f64>) -> SoftLabel {
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return SoftLabel::delta(raw.len(), 0);
    }
    SoftLabel::new(raw.iter().map(|w| w / sum).collect()).unwrap()
}

fn soft_label(k: usize) -> impl Strategy<Value = SoftLabel> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.0..1.0f64], k).prop_map(label)
}

fn sized_labels(
    n: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = (usize, Vec<SoftLabel>)> {
    (2usize..=7).prop_flat_map(move |k| (Just(k), prop::collection::vec(soft_label(k), n.clone())))
}

fn scale(k: usize) -> LabelSpace {
    LabelSpace::likert(1, k as i32)
}

fn sample(index: usize, steps: usize, prediction: Option<Prediction>) -> Sample {
    Sample {
        problem_id: "p".into(),
        index,
        compliance: if prediction.is_some() {
            Compliance::Compliant
        } else {
            Compliance::NonCompliant
        },
        prediction,
        steps: (0..steps).map(|s| format!("step {s}")).collect(),
        raw_text: String::new(),
        raw_reasoning: String::new(),
        token_counts: TokenCounts::default(),
    }
}

fn rating(good: bool) -> StepRating {
    StepRating::new(if good {
        RatingLabel::Good
    } else {
        RatingLabel::Bad
    })
}

proptest! {
    #[test]
    fn labels_from_counts_are_distributions(counts in prop::collection::vec(0u64..50, 2..8)) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let l = SoftLabel::from_counts(&counts).unwrap();
        prop_assert!((l.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(l.weights().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn declared_score_must_match_ratings(goods in prop::collection::vec(any::<bool>(), 1..8), off in 0.01..1.0f64) {
        let s = sample(0, goods.len(), Some(Prediction::SoftLabel(SoftPrediction::single(SoftLabel::uniform(2)))));
        let ratings: Vec<_> = goods.iter().map(|&g| rating(g)).collect();
        let ok = ScoredSample::new(s.clone(), ratings.clone(), Reduction::Mean).unwrap();
        prop_assert!(ScoredSample::with_score(s.clone(), ratings.clone(), Reduction::Mean, ok.prediction_score()).is_ok());
        prop_assert!(ScoredSample::with_score(s, ratings, Reduction::Mean, ok.prediction_score() + off).is_err());
    }

    #[test]
    fn distances_are_metrics((k, ls) in sized_labels(3..=3)) {
        let space = scale(k);
        let (p, q, r) = (&ls[0], &ls[1], &ls[2]);
        for d in [
            |a: &SoftLabel, b: &SoftLabel, s: &LabelSpace| wasserstein(a, b, s).unwrap(),
            |a: &SoftLabel, b: &SoftLabel, _: &LabelSpace| manhattan(a, b).unwrap(),
        ] {
            prop_assert!(d(p, q, &space) >= 0.0);
            prop_assert!((d(p, q, &space) - d(q, p, &space)).abs() <= 1e-12);
            prop_assert_eq!(d(p, p, &space), 0.0);
            prop_assert!(d(p, r, &space) <= d(p, q, &space) + d(q, r, &space) + 1e-9);
            if p.weights().iter().zip(q.weights()).any(|(a, b)| (a - b).abs() > 1e-9) {
                prop_assert!(d(p, q, &space) > 0.0);
            }
        }
    }

    #[test]
    fn manhattan_is_twice_wasserstein_on_binary(a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let p = SoftLabel::new(vec![1.0 - a, a]).unwrap();
        let q = SoftLabel::new(vec![1.0 - b, b]).unwrap();
        let w = wasserstein(&p, &q, &LabelSpace::binary()).unwrap();
        prop_assert_eq!(manhattan(&p, &q).unwrap(), 2.0 * w);
    }

    #[test]
    fn wasserstein_matches_transport_lp((k, ls) in sized_labels(2..=2)) {
        let space = scale(k);
        let fast = wasserstein(&ls[0], &ls[1], &space).unwrap();
        let lp = oracles::transport_lp(ls[0].weights(), ls[1].weights(), space.positions());
        prop_assert!((fast - lp).abs() <= 1e-9, "{} vs {}", fast, lp);
    }

    #[test]
    fn entropy_is_concave((_, ls) in sized_labels(1..=10)) {
        let avg = model_averaging(&ls).unwrap();
        let mean_h = ls.iter().map(entropy).sum::<f64>() / ls.len() as f64;
        prop_assert!(entropy(&avg) >= mean_h - 1e-12);
    }

    #[test]
    fn smoothing_never_lowers_entropy((_, ls) in sized_labels(1..=1)) {
        prop_assert!(entropy(&smooth_uniform(&ls[0])) >= entropy(&ls[0]) - 1e-12);
    }

    #[test]
    fn diversity_ignores_order_and_scales((k, ls) in sized_labels(2..=10), seed in any::<u64>(), c in 0.1..10.0f64) {
        let space = scale(k);
        let d = prediction_diversity(&ls, &space).unwrap();
        let mut shuffled = ls.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        prop_assert!((prediction_diversity(&shuffled, &space).unwrap() - d).abs() <= 1e-12);
        let stretched = LabelSpace::new(
            SpaceKind::OrderedScale,
            space.positions().iter().map(|x| c * x).collect(),
            Vec::new(),
        ).unwrap();
        let ds = prediction_diversity(&ls, &stretched).unwrap();
        prop_assert!((ds - c * d).abs() <= 1e-9 * (1.0 + c * d));
    }

    #[test]
    fn averaging_is_a_symmetric_distribution((_, ls) in sized_labels(1..=10)) {
        let avg = model_averaging(&ls).unwrap();
        prop_assert!((avg.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let mut rev = ls.clone();
        rev.reverse();
        let back = model_averaging(&rev).unwrap();
        for (a, b) in avg.weights().iter().zip(back.weights()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn majority_voting_ignores_order(votes in prop::collection::vec(prop::collection::vec(1i32..=4, 3), 1..8)) {
        let preds: Vec<PerspectivistPrediction> = votes
            .iter()
            .map(|v| {
                let labels: BTreeMap<String, f64> =
                    v.iter().enumerate().map(|(a, &l)| (format!("a{a}"), l as f64)).collect();
                PerspectivistPrediction::new(labels, &LabelSpace::likert(1, 4), &[]).unwrap()
            })
            .collect();
        let refs: Vec<&PerspectivistPrediction> = preds.iter().collect();
        let mut rev = refs.clone();
        rev.reverse();
        let m = majority_voting(&refs).unwrap();
        prop_assert_eq!(&m, &majority_voting(&rev).unwrap());
        for (a, label) in m.labels() {
            let counts = |x: f64| refs.iter().filter(|p| p.get(a) == Some(x)).count();
            let best = counts(*label);
            for other in 1..=4 {
                let c = counts(other as f64);
                prop_assert!(c < best || (c == best && other as f64 >= *label));
            }
        }
    }

    #[test]
    fn mean_score_is_bounded_and_order_free(goods in prop::collection::vec(any::<bool>(), 1..12)) {
        let ratings: Vec<_> = goods.iter().map(|&g| rating(g)).collect();
        let mut rev = ratings.clone();
        rev.reverse();
        let s = Reduction::Mean.apply(&ratings);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s, Reduction::Mean.apply(&rev));
        prop_assert!((0.0..=1.0).contains(&Reduction::Product.apply(&ratings)));
    }

    #[test]
    fn all_good_judge_picks_first_compliant(first in 0usize..5, n in 1usize..6) {
        let scored: Vec<ScoredSample> = (0..first + n)
            .map(|i| {
                let pred = (i >= first).then(|| Prediction::SoftLabel(SoftPrediction::single(SoftLabel::uniform(3))));
                let s = sample(i, 2, pred);
                ScoredSample::new(s, vec![rating(true); 2], Reduction::Mean).unwrap()
            })
            .collect();
        prop_assert_eq!(bon_select(&scored).unwrap().sample().index, first);
    }

    #[test]
    fn oracle_judge_reproduces_bon_oracle((k, ls) in sized_labels(1..=10), truth in any::<u64>()) {
        let space = scale(k);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(truth);
        let t = label(oracles::random_weights(&mut rng, k));
        let best = bon_oracle(&ls, &t, |a, b| wasserstein(a, b, &space)).unwrap().unwrap();
        let scored: Vec<ScoredSample> = ls
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let s = sample(i, 3, Some(Prediction::SoftLabel(SoftPrediction::single(l.clone()))));
                ScoredSample::new(s, vec![rating(i == best); 3], Reduction::Mean).unwrap()
            })
            .collect();
        prop_assert_eq!(bon_select(&scored).unwrap().sample().index, best);
    }

    #[test]
    fn gain_fraction_endpoints(oracle in 0.0..5.0f64, gap in 1e-6..5.0f64, t in -1.0..2.0f64) {
        let simple = oracle + gap;
        prop_assert_eq!(oracle_gain_fraction(simple, oracle, oracle).unwrap(), Some(1.0));
        prop_assert_eq!(oracle_gain_fraction(simple, simple, oracle).unwrap(), Some(0.0));
        let method = simple - t * gap;
        let f = oracle_gain_fraction(simple, method, oracle).unwrap().unwrap();
        prop_assert!((f - t).abs() <= 1e-9 * (1.0 + simple / gap));
    }

    #[test]
    fn parsing_never_panics(raw in ".{0,400}") {
        let d = DatasetDescriptor::builtin("PAR", Task::SoftLabel).unwrap();
        let s = parse_sample("p", 0, &raw, &[], &d);
        prop_assert_eq!(&s.raw_text, &raw);
        prop_assert!(s.check().is_ok());
    }

    #[test]
    fn parsing_survives_json_shaped_noise(
        parts in prop::collection::vec(prop_oneof![
            Just("{".to_string()), Just("}".to_string()), Just("\"prediction\":".to_string()),
            Just("\"steps\": [\"a\"],".to_string()), Just("[0.5, 0.5]".to_string()),
            Just("\"".to_string()), Just("\\".to_string()), "[a-z0-9 ,:.]{0,6}",
        ], 0..30),
        task in prop_oneof![Just(Task::SoftLabel), Just(Task::Perspectivist)],
        name in prop_oneof![Just("MP"), Just("VEN"), Just("CSC")],
    ) {
        let raw = parts.concat();
        let d = DatasetDescriptor::builtin(name, task).unwrap();
        let s = parse_sample("p", 0, &raw, &["a".to_string()], &d);
        prop_assert!(s.check().is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cache_round_trip_is_exact(
        raw_text in "\\PC{0,80}",
        reasoning in "(.|\n){0,80}",
        weights in prop::collection::vec(0.0..1.0f64, 6),
        index in 0usize..100,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let mut s = sample(index, 2, Some(Prediction::SoftLabel(SoftPrediction::single(label(weights)))));
        s.raw_text = raw_text;
        s.raw_reasoning = reasoning;
        s.token_counts = TokenCounts { prompt: 7, completion: 11, reasoning: 5, approximate: true };
        let key = CacheKey {
            kind: PayloadKind::Sample,
            problem_id: "p".into(),
            model_name: "m".into(),
            params_digest: "0".repeat(64),
            template_id: "t".into(),
            index,
        };
        let mut cache = Cache::open(&path).unwrap();
        prop_assert!(cache.put(key.clone(), CachePayload::Sample(s.clone())).unwrap());
        cache.sync().unwrap();
        drop(cache);
        let reopened = Cache::open(&path).unwrap();
        prop_assert_eq!(reopened.get_sample(&key), Some(&s));
    }

    #[test]
    fn prompts_are_pure(text in "\\PC{0,60}", include_definition in any::<bool>()) {
        let d = DatasetDescriptor::builtin("CSC", Task::SoftLabel).unwrap();
        let problem = Problem {
            id: "x".into(),
            dataset: "CSC".into(),
            payload: [("context".to_string(), text.clone()), ("response".to_string(), text)].into_iter().collect(),
            annotators: vec!["a".into()],
            human_soft: None,
            human_persp: None,
        };
        let cfg = PromptConfig { include_definition, ..PromptConfig::default() };
        let t = Templates::builtin();
        prop_assert_eq!(build_prompt(&problem, &d, &cfg, &t).unwrap(), build_prompt(&problem, &d, &cfg, &t).unwrap());
    }
}
