use proptest::prelude::*;

use vfds::backbone::OutputMode;
use vfds::data::{segment, split, write_csv, load_csv, CsvSchema, Labels, NormMode, NormStats, PadPolicy, Sequence, SequenceDataset, SplitMode};
use vfds::estimators::arm_pair;
use vfds::gating::{apply_gates, hard_gate_deterministic, hard_gate_sampled, logistic_from_uniform, relaxed_gate, FeatureGroups, GatePrior};
use vfds::report::{classification_metrics, moving_window_accuracy, selection_metrics, SelectionTrace};
use vfds::tape::Tape;
use vfds::tensor::{sigmoid, Tensor};
use vfds::train::{clip_global_norm, rmsprop_update, RmsPropConfig};

fn dataset_strategy() -> impl Strategy<Value = SequenceDataset> {
    (1usize..4, prop::collection::vec((1usize..12, 0usize..5), 1..8)).prop_flat_map(|(k, shapes)| {
        let seqs: Vec<_> = shapes
            .into_iter()
            .enumerate()
            .map(move |(i, (t, subj))| {
                (
                    prop::collection::vec(-50.0f32..50.0, t * k),
                    prop::collection::vec(prop::option::weighted(0.8, 0usize..3), t),
                )
                    .prop_map(move |(x, labels)| Sequence {
                        subject: format!("s{subj}"),
                        id: format!("q{i}"),
                        features: Tensor::new(vec![t, k], x).unwrap(),
                        labels: Labels::Classes(labels),
                        context: None,
                    })
            })
            .collect();
        seqs.prop_map(move |sequences| SequenceDataset {
            sequences,
            feature_names: (0..k).map(|j| format!("f{j}")).collect(),
            mode: OutputMode::Multiclass,
            n_outputs: 3,
            relevance: None,
        })
    })
}

fn labelled(ds: &SequenceDataset) -> usize {
    ds.sequences.iter().map(|s| s.mask().iter().filter(|&&m| m).count()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relaxed_gate_in_unit_interval_and_monotone(p in 0.001f64..0.999, e1 in -8.0f64..8.0, e2 in -8.0f64..8.0, tau in 0.05f64..10.0) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let a = relaxed_gate(p, lo, tau).unwrap();
        let b = relaxed_gate(p, hi, tau).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(a <= b);
    }

    #[test]
    fn sampled_gate_matches_uniform_threshold(p in 0.01f64..0.99, u in 0.001f64..0.999) {
        // 1[logit σ + logistic(u) > 0] is 1[u > 1 - σ].
        let z = hard_gate_sampled(p, logistic_from_uniform(u));
        let expected = if u > 1.0 - p { 1.0 } else { 0.0 };
        if (u - (1.0 - p)).abs() > 1e-9 {
            prop_assert_eq!(z, expected);
        }
    }

    #[test]
    fn deterministic_gate_is_threshold(p in 0.0f64..1.0) {
        prop_assert_eq!(hard_gate_deterministic(p) == 1.0, p > 0.5);
    }

    #[test]
    fn arm_second_configuration_is_bernoulli_threshold(phi in -6.0f64..6.0, u in 0.0f64..1.0) {
        let (first, second) = arm_pair(&[phi], &[u]);
        prop_assert_eq!(second[0] == 1.0, u < sigmoid(phi));
        prop_assert_eq!(first[0] == 1.0, u > sigmoid(-phi));
    }

    #[test]
    fn open_gates_are_identity_and_closed_gates_zero(x in prop::collection::vec(-5.0f64..5.0, 12)) {
        let t = Tensor::new(vec![3, 4], x).unwrap();
        let groups = FeatureGroups::blocks(4, 2).unwrap();
        prop_assert_eq!(apply_gates(&t, &Tensor::ones(3, 2), &groups).unwrap(), t.clone());
        let closed = apply_gates(&t, &Tensor::zeros(3, 2), &groups).unwrap();
        prop_assert!(closed.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn penalty_nonnegative_and_linear(probs in prop::collection::vec(0.0f64..1.0, 1..6), lambda in 0.0f64..2.0) {
        let prior = GatePrior::uniform(probs.len(), lambda, 100.0).unwrap();
        let pen = prior.kl_penalty_approx(&probs).unwrap();
        prop_assert!(pen >= 0.0);
        let doubled = GatePrior::uniform(probs.len(), 2.0 * lambda, 100.0).unwrap().kl_penalty_approx(&probs).unwrap();
        prop_assert!((doubled - 2.0 * pen).abs() <= 1e-12 * (1.0 + pen));
    }

    #[test]
    fn product_rule_gradient(a in prop::collection::vec(-3.0f64..3.0, 6), b in prop::collection::vec(-3.0f64..3.0, 6)) {
        let mut tape = Tape::new();
        let va = tape.param(Tensor::new(vec![2, 3], a.clone()).unwrap()).unwrap();
        let vb = tape.param(Tensor::new(vec![2, 3], b.clone()).unwrap()).unwrap();
        let prod = tape.mul(va, vb).unwrap();
        let root = tape.sum(prod).unwrap();
        let g = tape.backward(root).unwrap();
        prop_assert_eq!(g.get(va).into_data(), b);
        prop_assert_eq!(g.get(vb).into_data(), a);
    }

    #[test]
    fn rmsprop_ignores_zero_gradients(p in prop::collection::vec(-3.0f32..3.0, 4), v in prop::collection::vec(0.0f32..1.0, 4)) {
        let mut param = Tensor::new(vec![2, 2], p.clone()).unwrap();
        let mut state = Tensor::new(vec![2, 2], v).unwrap();
        let cfg = RmsPropConfig { learning_rate: 1e-2, smoothing: 0.99, epsilon: 1e-8 };
        rmsprop_update(&mut param, &[0.0; 4], &mut state, &cfg).unwrap();
        prop_assert_eq!(param.data(), &p[..]);
    }

    #[test]
    fn clipping_bounds_global_norm(g in prop::collection::vec(prop::collection::vec(-10.0f32..10.0, 1..5), 1..4), max in 0.1f64..5.0) {
        let mut g = g;
        clip_global_norm(&mut g, max);
        let norm: f64 = g.iter().flatten().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        prop_assert!(norm <= max * (1.0 + 1e-5));
    }

    #[test]
    fn union_at_least_average(gates in prop::collection::vec(prop::collection::vec(prop::collection::vec(any::<bool>(), 3), 1..6), 1..4)) {
        let trace = SelectionTrace { n_gates: 3, gates };
        let (avg, union) = selection_metrics(&trace);
        prop_assert!((0.0..=100.0).contains(&avg));
        prop_assert!(union + 1e-12 >= avg);
    }

    #[test]
    fn segmentation_keeps_labelled_steps(ds in dataset_strategy(), len in 1usize..7) {
        let seg = segment(&ds, len, PadPolicy::RepeatLast).unwrap();
        prop_assert_eq!(labelled(&seg), labelled(&ds));
        prop_assert!(seg.sequences.iter().all(|s| s.len() == len));
        seg.validate().unwrap();
    }

    #[test]
    fn subject_split_partitions(ds in dataset_strategy(), seed in any::<u64>()) {
        let subjects: std::collections::BTreeSet<_> = ds.sequences.iter().map(|s| s.subject.clone()).collect();
        prop_assume!(subjects.len() >= 3);
        let (a, b, c) = split(&ds, [0.6, 0.2, 0.2], SplitMode::Subject, seed).unwrap();
        prop_assert_eq!(a.len() + b.len() + c.len(), ds.len());
        let subj = |d: &SequenceDataset| d.sequences.iter().map(|s| s.subject.clone()).collect::<std::collections::BTreeSet<_>>();
        prop_assert!(subj(&a).is_disjoint(&subj(&b)));
        prop_assert!(subj(&a).is_disjoint(&subj(&c)));
        prop_assert!(subj(&b).is_disjoint(&subj(&c)));
    }

    #[test]
    fn zscore_centres_training_data(ds in dataset_strategy()) {
        let mut train = ds.clone();
        let stats = NormStats::fit(&train, NormMode::Zscore).unwrap();
        stats.apply(&mut train).unwrap();
        let k = train.n_features();
        let n = train.total_steps() as f64;
        for j in 0..k {
            let mean: f64 = train.sequences.iter().flat_map(|s| (0..s.len()).map(move |t| s.features.get(t, j) as f64)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-3);
        }
    }

    #[test]
    fn csv_round_trip(ds in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&path, &ds).unwrap();
        let back = load_csv(&path, &CsvSchema { classes: None, n_classes: Some(3) }).unwrap();
        // Sequences sharing (subject, id) would merge; ids are unique here.
        prop_assert_eq!(back.sequences.len(), ds.sequences.len());
        for (a, b) in back.sequences.iter().zip(&ds.sequences) {
            prop_assert_eq!(&a.labels, &b.labels);
            prop_assert_eq!(a.features.data(), b.features.data());
        }
    }

    #[test]
    fn perfect_predictions_score_full_marks(labels in prop::collection::vec(prop::collection::vec(0usize..4, 1..10), 1..5), window in 1usize..6) {
        let preds: Vec<Vec<Vec<usize>>> = labels.iter().map(|s| s.iter().map(|&c| vec![c]).collect()).collect();
        let labels: Vec<Labels> = labels.iter().map(|s| Labels::Classes(s.iter().map(|&c| Some(c)).collect())).collect();
        let m = classification_metrics(&preds, &labels, 4).unwrap();
        prop_assert_eq!(m.accuracy, 100.0);
        prop_assert_eq!(m.macro_f1, 100.0);
        for row in moving_window_accuracy(&preds, &labels, window).unwrap() {
            prop_assert_eq!(row.accuracy, 100.0);
            prop_assert_eq!(row.std, 0.0);
        }
    }
}
