mod common;

use brag_augment::autodiff::{Graph, Tensor};
use brag_augment::data::LabelMode;
use brag_augment::metrics::{argmax_predict, collapse_confusion, confusion_matrix, evaluate, MetricsReport};
use brag_augment::rng::{stream_rng, Stream};
use common::{collapse, oracle_gap};
use proptest::prelude::*;
use rand::Rng as _;

fn labelled(max_k: usize, max_n: usize) -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>)> {
    (2..=max_k, 0..=max_n).prop_flat_map(|(k, n)| {
        (
            Just(k),
            prop::collection::vec(0..k, n),
            prop::collection::vec(0..k, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_counting_oracle((k, pred, gold) in labelled(7, 60)) {
        let report = evaluate(&pred, &gold, k, LabelMode::Multiclass).unwrap();
        prop_assert!(oracle_gap(&report, &pred, &gold, k) <= 1e-10);
        prop_assert_eq!(report.total(), gold.len() as u64);
    }

    #[test]
    fn order_of_pairs_is_irrelevant((k, pred, gold) in labelled(7, 60), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..pred.len()).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut stream_rng(seed, Stream::Split, 0));
        let p2: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
        let g2: Vec<usize> = idx.iter().map(|&i| gold[i]).collect();
        prop_assert_eq!(
            evaluate(&pred, &gold, k, LabelMode::Multiclass).unwrap(),
            evaluate(&p2, &g2, k, LabelMode::Multiclass).unwrap()
        );
    }

    #[test]
    fn collapsing_commutes_with_evaluation((_, pred, gold) in labelled(7, 80).prop_filter("seven classes", |t| t.0 == 7)) {
        let evaluate_then_collapse = evaluate(&pred, &gold, 7, LabelMode::Binary).unwrap();
        let collapse_then_evaluate =
            evaluate(&collapse(&pred), &collapse(&gold), 2, LabelMode::Binary).unwrap();
        prop_assert_eq!(&evaluate_then_collapse, &collapse_then_evaluate);
        let via_matrix = MetricsReport::from_confusion(
            collapse_confusion(&confusion_matrix(&pred, &gold, 7).unwrap()),
            LabelMode::Binary,
        );
        prop_assert_eq!(&via_matrix, &collapse_then_evaluate);
    }

    #[test]
    fn argmax_ignores_logit_shift(
        (rows, shift) in (1..=6usize).prop_flat_map(|n| (
            prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 7), n),
            -100.0..100.0f64,
        ))
    ) {
        let probs = |offset: f64| {
            let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v + offset).collect()).collect();
            let mut g = Graph::new();
            let v = g.constant(Tensor::from_rows(&shifted).unwrap());
            let s = g.softmax_rows(v).unwrap();
            g.value(s).clone()
        };
        prop_assert_eq!(argmax_predict(&probs(0.0)), argmax_predict(&probs(shift)));
        prop_assert_eq!(argmax_predict(&Tensor::from_rows(&rows).unwrap()), argmax_predict(&probs(0.0)));
    }
}

#[test]
fn worked_two_class_example() {
    // Gold rows: [[8, 2], [1, 9]].
    let gold: Vec<usize> = [vec![0; 10], vec![1; 10]].concat();
    let pred: Vec<usize> = [vec![0; 8], vec![1; 2], vec![0; 1], vec![1; 9]].concat();
    let r = evaluate(&pred, &gold, 2, LabelMode::Binary).unwrap();
    assert_eq!(r.confusion, vec![vec![8, 2], vec![1, 9]]);
    assert!((r.per_class[0].precision - 8.0 / 9.0).abs() < 1e-12);
    assert!((r.per_class[1].precision - 9.0 / 11.0).abs() < 1e-12);
    assert!((r.per_class[0].f1 - 0.842_105_263_157_894_7).abs() < 1e-12);
    assert!((100.0 * r.macro_f1 - 84.96).abs() < 0.005);
}

#[test]
fn never_predicted_class_scores_zero() {
    let gold = [0, 1, 2, 2];
    let pred = [0, 1, 1, 1];
    let r = evaluate(&pred, &gold, 3, LabelMode::Multiclass).unwrap();
    assert_eq!((r.per_class[2].precision, r.per_class[2].recall, r.per_class[2].f1), (0.0, 0.0, 0.0));
    assert!((r.macro_f1 - (1.0 + 0.5) / 3.0).abs() < 1e-12);
}

#[test]
fn perfect_predictions_give_one_hundred() {
    let gold: Vec<usize> = (0..7).cycle().take(70).collect();
    let r = evaluate(&gold, &gold, 7, LabelMode::Multiclass).unwrap();
    assert_eq!((r.macro_precision, r.macro_recall, r.macro_f1), (1.0, 1.0, 1.0));
    assert!(r.table().contains("100.00"));
}

#[test]
fn uniform_guessing_on_balanced_pairs_converges() {
    // For a balanced gold vector and a fair-coin predictor, each class has
    // expected precision and recall of one half, so macro-F1 tends to 0.5.
    // Monte-Carlo standard error at n = 1e5 is about 0.0016.
    let n = 100_000;
    let mut rng = stream_rng(19, Stream::Synth, 0);
    let gold: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let r = evaluate(&pred, &gold, 2, LabelMode::Binary).unwrap();
    assert!((r.macro_f1 - 0.5).abs() < 0.008, "{}", r.macro_f1);
}

#[test]
fn mismatched_inputs_are_contract_errors() {
    assert!(evaluate(&[0, 1], &[0], 2, LabelMode::Binary).is_err());
    assert!(evaluate(&[0, 5], &[0, 1], 2, LabelMode::Binary).is_err());
}
