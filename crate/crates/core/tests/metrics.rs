use mtdqn::metrics::{
    cosine_similarity, hit_rate_at_k, intra_list_similarity, mae, mse, ndcg_at_k, precision_recall_f1,
    ConfusionCounts,
};
use proptest::prelude::*;

fn grades() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0..4u8).prop_map(f64::from), 1..10)
}

proptest! {
    #[test]
    fn ndcg_is_one_for_the_ideal_order(mut g in grades(), k in 1..8usize) {
        let n = ndcg_at_k(&g, k)?;
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        g.sort_by(|a, b| b.total_cmp(a));
        let ideal = ndcg_at_k(&g, k)?;
        if g[0] > 0.0 {
            prop_assert!((ideal - 1.0).abs() < 1e-12);
        } else {
            prop_assert_eq!(ideal, 0.0);
        }
    }

    #[test]
    fn promoting_a_better_item_never_lowers_ndcg(g in grades(), i in 0..10usize, k in 1..8usize) {
        let i = i % g.len();
        if i > 0 && g[i] > g[i - 1] {
            let mut better = g.clone();
            better.swap(i - 1, i);
            prop_assert!(ndcg_at_k(&better, k)? >= ndcg_at_k(&g, k)? - 1e-12);
        }
    }

    #[test]
    fn f1_lies_between_precision_and_recall(tp in 0..50u64, fp in 0..50u64, fn_ in 0..50u64, tn in 0..50u64) {
        let s = precision_recall_f1(ConfusionCounts { true_pos: tp, false_pos: fp, false_neg: fn_, true_neg: tn });
        prop_assert!([s.precision, s.recall, s.f1].iter().all(|v| (0.0..=1.0).contains(v)));
        if !s.degenerate {
            prop_assert!(s.f1 >= s.precision.min(s.recall) - 1e-12);
            prop_assert!(s.f1 <= s.precision.max(s.recall) + 1e-12);
        }
        prop_assert_eq!(s.degenerate, tp == 0);
    }

    #[test]
    fn confusion_counts_add_up(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..40)) {
        let (p, a): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
        let c = ConfusionCounts::from_predictions(&p, &a)?;
        prop_assert_eq!((c.true_pos + c.false_pos + c.false_neg + c.true_neg) as usize, pairs.len());
        prop_assert_eq!((c.true_pos + c.false_pos) as usize, p.iter().filter(|&&x| x).count());
    }

    #[test]
    fn mse_dominates_squared_mae(pairs in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..30)) {
        let (y, yh): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (e2, e1) = (mse(&y, &yh)?, mae(&y, &yh)?);
        prop_assert!(e2 >= e1 * e1 - 1e-9);
        prop_assert_eq!(mse(&y, &y)?, 0.0);
    }

    #[test]
    fn hit_rate_is_bounded_by_its_positions(
        lists in prop::collection::vec(prop::collection::vec(0..10usize, 5), 1..10),
        positives in prop::collection::vec(prop::collection::vec(0..10usize, 0..3), 10),
        k in 1..6usize,
    ) {
        let positives = &positives[..lists.len()];
        let h = hit_rate_at_k(&lists, positives, k)?;
        prop_assert_eq!(h.per_position.len(), k);
        prop_assert!(h.rate <= h.per_position.iter().sum::<f64>() + 1e-12);
        prop_assert!(h.per_position.iter().all(|&p| p <= h.rate + 1e-12));
        let wider = hit_rate_at_k(&lists, positives, k + 1)?;
        prop_assert!(wider.rate >= h.rate);
    }

    #[test]
    fn ils_ignores_positive_scaling(
        items in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 2..6),
        scales in prop::collection::vec(0.1..10.0f64, 6),
    ) {
        let ils = intra_list_similarity(&items)?;
        prop_assert!((-1.0..=1.0).contains(&ils));
        let scaled: Vec<Vec<f64>> = items.iter().zip(&scales).map(|(v, s)| v.iter().map(|x| x * s).collect()).collect();
        prop_assert!((intra_list_similarity(&scaled)? - ils).abs() < 1e-9);
    }

    #[test]
    fn cosine_is_symmetric(a in prop::collection::vec(-1.0..1.0f64, 4), b in prop::collection::vec(-1.0..1.0f64, 4)) {
        prop_assert_eq!(cosine_similarity(&a, &b), cosine_similarity(&b, &a));
        prop_assert!(cosine_similarity(&a, &b).abs() <= 1.0);
    }
}

#[test]
fn worked_examples() {
    // ranks 1 and 3 relevant out of 3 relevant in total
    let s = precision_recall_f1(ConfusionCounts { true_pos: 2, false_pos: 1, false_neg: 1, true_neg: 0 });
    assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    let n = ndcg_at_k(&[0.0, 1.0], 2).unwrap();
    assert!((n - 0.6309297535714575).abs() < 1e-15);
    assert!(ndcg_at_k(&[1.0], 0).is_err());
    assert!(ndcg_at_k(&[-1.0], 1).is_err());
    assert!(intra_list_similarity(&[vec![1.0]]).is_err());
}
