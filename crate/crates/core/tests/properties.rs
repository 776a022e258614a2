use fusesurv_core::experiment::{adam_step, early_stop_epoch, AdamConfig, FoldPlan, MomentState};
use fusesurv_core::fusion::{aggregate, aggregate_model_weights, Aggregation};
use fusesurv_core::nn::{masked_mean_pool, Linear, Matrix, Parameter};
use fusesurv_core::survival::{concordance_index, cox_loss, cox_loss_and_gradient, roc_auc, SurvivalLabel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Breslow partial likelihood by direct enumeration of each risk set.
fn breslow(h: &[f64], y: &[SurvivalLabel]) -> f64 {
    let mut loss = 0.0;
    for (i, a) in y.iter().enumerate() {
        if a.event {
            let risk: f64 = y
                .iter()
                .zip(h)
                .filter(|(b, _)| b.time_months >= a.time_months)
                .map(|(_, hj)| hj.exp())
                .sum();
            loss -= h[i] - risk.ln();
        }
    }
    loss
}

fn harrell(h: &[f64], y: &[SurvivalLabel]) -> Option<f64> {
    let (mut pairs, mut score) = (0.0, 0.0);
    for i in 0..y.len() {
        for j in 0..y.len() {
            let (a, b) = (&y[i], &y[j]);
            if a.event && (a.time_months < b.time_months || (a.time_months == b.time_months && !b.event)) {
                pairs += 1.0;
                score += if h[i] > h[j] {
                    1.0
                } else if h[i] == h[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0.0).then(|| score / pairs)
}

/// Labels with heavy time ties and at least one event.
fn cohort(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<SurvivalLabel>)> {
    (2..=max).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0..3.0f64, n),
            prop::collection::vec((1u8..6, any::<bool>()), n),
        )
            .prop_filter("needs an event", |(_, y)| y.iter().any(|(_, e)| *e))
            .prop_map(|(h, y)| {
                let labels = y
                    .into_iter()
                    .map(|(t, e)| SurvivalLabel::new(t as f64, e).unwrap())
                    .collect();
                (h, labels)
            })
    })
}

/// Scores drawn from a few levels so ties occur often.
fn tied_scores(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u8..4).prop_map(f64::from), n)
}

proptest! {
    #[test]
    fn cox_loss_matches_enumeration((h, y) in cohort(20)) {
        let fast = cox_loss(&h, &y).unwrap();
        let slow = breslow(&h, &y);
        prop_assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0), "{fast} vs {slow}");
    }

    #[test]
    fn cox_loss_is_shift_invariant((h, y) in cohort(20), c in -50.0..50.0f64) {
        let shifted: Vec<f64> = h.iter().map(|v| v + c).collect();
        let (l0, g0) = cox_loss_and_gradient(&h, &y).unwrap();
        let (l1, g1) = cox_loss_and_gradient(&shifted, &y).unwrap();
        prop_assert!((l0 - l1).abs() <= 1e-9 * l0.abs().max(1.0));
        for (a, b) in g0.iter().zip(&g1) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn cox_gradient_sums_to_zero((h, y) in cohort(20)) {
        let (_, g) = cox_loss_and_gradient(&h, &y).unwrap();
        prop_assert!(g.iter().sum::<f64>().abs() <= 1e-9);
    }

    #[test]
    fn cox_loss_ignores_subject_order((h, y) in cohort(20), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..h.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let hp: Vec<f64> = idx.iter().map(|&i| h[i]).collect();
        let yp: Vec<SurvivalLabel> = idx.iter().map(|&i| y[i]).collect();
        let (l0, g0) = cox_loss_and_gradient(&h, &y).unwrap();
        let (l1, g1) = cox_loss_and_gradient(&hp, &yp).unwrap();
        prop_assert!((l0 - l1).abs() <= 1e-10 * l0.abs().max(1.0));
        for (k, &i) in idx.iter().enumerate() {
            prop_assert!((g1[k] - g0[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn cox_loss_is_non_negative((h, y) in cohort(20)) {
        prop_assert!(cox_loss(&h, &y).unwrap() >= -1e-12);
    }

    #[test]
    fn cindex_matches_pair_enumeration((_, y) in cohort(12), seed in any::<u64>()) {
        let h: Vec<f64> = {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..y.len()).map(|_| f64::from(rng.random_range(0u8..4))).collect()
        };
        match harrell(&h, &y) {
            Some(c) => {
                let fast = concordance_index(&h, &y).unwrap();
                prop_assert_eq!(fast, c);
                prop_assert!((0.0..=1.0).contains(&fast));
            }
            None => prop_assert!(concordance_index(&h, &y).is_err()),
        }
    }

    #[test]
    fn negated_scores_complement_cindex((h, y) in cohort(12)) {
        if let Ok(c) = concordance_index(&h, &y) {
            let neg: Vec<f64> = h.iter().map(|v| -v).collect();
            prop_assert!((concordance_index(&neg, &y).unwrap() - (1.0 - c)).abs() <= 1e-12);
        }
    }

    #[test]
    fn cindex_depends_only_on_score_order((h, y) in cohort(12)) {
        if let Ok(c) = concordance_index(&h, &y) {
            let warped: Vec<f64> = h.iter().map(|v| (0.7 * v).exp() + 3.0).collect();
            prop_assert_eq!(concordance_index(&warped, &y).unwrap(), c);
        }
    }

    #[test]
    fn auc_matches_pair_enumeration(
        (scores, labels) in (2usize..12).prop_flat_map(|n| (tied_scores(n), prop::collection::vec(any::<bool>(), n)))
    ) {
        let (mut pairs, mut score) = (0.0, 0.0);
        for (si, &li) in scores.iter().zip(&labels) {
            for (sj, &lj) in scores.iter().zip(&labels) {
                if li && !lj {
                    pairs += 1.0;
                    score += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        match roc_auc(&scores, &labels) {
            Ok(auc) => prop_assert_eq!(auc, score / pairs),
            Err(_) => prop_assert_eq!(pairs, 0.0),
        }
    }

    #[test]
    fn masked_rows_do_not_reach_the_pool(
        seq_len in 1usize..5,
        blocks in 1usize..4,
        seed in any::<u64>(),
        garbage in -1e6..1e6f64,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = seq_len * blocks;
        let mut mask: Vec<bool> = (0..rows).map(|_| rng.random_bool(0.6)).collect();
        for b in 0..blocks {
            mask[b * seq_len] = true;
        }
        let x = Parameter::uniform(rows, 3, 1.0, &mut rng).value;
        let mut y = x.clone();
        for (r, &m) in mask.iter().enumerate() {
            if !m {
                y.row_mut(r).fill(garbage);
            }
        }
        let a = masked_mean_pool(&x, &mask, seq_len).unwrap();
        let b = masked_mean_pool(&y, &mask, seq_len).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn median_ignores_moving_an_extreme(mut v in prop::collection::vec(-10.0..10.0f64, 3..9), bump in 0.0..100.0f64) {
        let m = aggregate(&v, Aggregation::Median).unwrap();
        let (imax, _) = v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        v[imax] += bump;
        prop_assert_eq!(aggregate(&v, Aggregation::Median).unwrap(), m);
    }

    #[test]
    fn mean_of_linear_heads_is_mean_of_outputs(seeds in prop::collection::vec(any::<u64>(), 1..6), xs in prop::collection::vec(-1.0..1.0f64, 4)) {
        let heads: Vec<Linear> = seeds.iter().map(|&s| Linear::new(4, 1, &mut ChaCha8Rng::seed_from_u64(s))).collect();
        let x = Matrix::from_rows(&[xs]).unwrap();
        let merged = aggregate_model_weights(&heads, Aggregation::Mean).unwrap().forward(&x).unwrap().data()[0];
        let outputs: Vec<f64> = heads.iter().map(|h| h.forward(&x).unwrap().data()[0]).collect();
        prop_assert!((merged - aggregate(&outputs, Aggregation::Mean).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn identical_models_aggregate_exactly(seed in any::<u64>(), copies in 1usize..6) {
        let head = Linear::new(5, 3, &mut ChaCha8Rng::seed_from_u64(seed));
        let heads = vec![head.clone(); copies];
        for mode in Aggregation::ALL {
            let merged = aggregate_model_weights(&heads, mode).unwrap();
            prop_assert_eq!(merged.weight.value.data(), head.weight.value.data());
            prop_assert_eq!(merged.bias.value.data(), head.bias.value.data());
        }
    }

    #[test]
    fn plain_folds_partition_subjects(n in 9usize..200, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let plan = FoldPlan::plain(n, k, seed, None).unwrap();
        let mut seen = vec![0; n];
        for s in &plan.splits {
            prop_assert_eq!(s.train.len() + s.val.len(), n);
            prop_assert!(s.val.iter().all(|v| s.train.binary_search(v).is_err()));
            prop_assert!(s.val.len() >= n / k && s.val.len() <= n.div_ceil(k));
            s.val.iter().for_each(|&v| seen[v] += 1);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn nested_splits_hold_ratios(n in 50usize..400, seed in any::<u64>(), stratified in any::<bool>()) {
        let events: Vec<bool> = (0..n).map(|i| (i * 7 + seed as usize % 5) % 3 != 0).collect();
        let plan = FoldPlan::nested(n, 5, 5, seed, stratified.then_some(&events[..])).unwrap();
        prop_assert_eq!(plan.splits.len(), 25);
        let nf = n as f64;
        for s in &plan.splits {
            prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
            let disjoint = |a: &[usize], b: &[usize]| a.iter().all(|v| b.binary_search(v).is_err());
            prop_assert!(disjoint(&s.train, &s.val) && disjoint(&s.train, &s.test) && disjoint(&s.val, &s.test));
            prop_assert!((s.test.len() as f64 - 0.2 * nf).abs() <= 1.0, "test {} of {n}", s.test.len());
            prop_assert!((s.val.len() as f64 - 0.16 * nf).abs() <= 1.0, "val {} of {n}", s.val.len());
            // Train absorbs both roundings, so it is held to the inner 80% of its pool.
            let pool = (n - s.test.len()) as f64;
            prop_assert!((s.train.len() as f64 - 0.8 * pool).abs() <= 1.0, "train {} of {pool}", s.train.len());
        }
    }

    #[test]
    fn early_stop_never_precedes_min_epochs(curve in prop::collection::vec(-5.0..5.0f64, 0..40), min in 0usize..40) {
        if let Some(t) = early_stop_epoch(&curve, min) {
            prop_assert!(t >= min && t + 1 < curve.len());
        }
    }

    #[test]
    fn adam_leaves_parameters_without_gradient_alone(seed in any::<u64>(), steps in 1u64..20) {
        let mut p = Parameter::uniform(3, 4, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let before = p.value.clone();
        let mut state = MomentState::for_param(&p);
        for t in 1..=steps {
            adam_step(&mut p, &mut state, t, &AdamConfig::adam(0.1)).unwrap();
        }
        prop_assert_eq!(p.value.data(), before.data());
    }
}

#[test]
fn early_stop_examples() {
    // second differences 1, 1.5, 1.2, 0.2
    assert_eq!(early_stop_epoch(&[10.0, 6.0, 3.0, 1.5, 1.2, 1.1], 0), None);
    // second differences -1, -1, 1, 1, 0.5
    assert_eq!(early_stop_epoch(&[10.0, 9.0, 7.0, 4.0, 2.0, 1.0, 0.5], 0), Some(3));
    assert_eq!(early_stop_epoch(&[10.0, 9.0, 7.0, 4.0, 2.0, 1.0, 0.5], 4), None);
    assert_eq!(early_stop_epoch(&[2.0; 8], 0), None);
    assert_eq!(early_stop_epoch(&[1.0, 2.0], 0), None);
}
