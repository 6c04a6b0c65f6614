mod common;

use std::collections::BTreeSet;

use common::*;
use organcorr::pipeline::{make_folds, pair_scheduler, Phase};
use organcorr::volumes::{window_normalize, window_soft_tissue};
use proptest::prelude::*;

#[test]
fn paper_pair_counts() {
    let (sizes, counts) = scheduled_counts();
    assert_eq!(sizes, [24, 3, 7]);
    assert_eq!(counts, [4032, 63, 294]);
}

#[test]
fn window_endpoints() {
    assert_eq!(window_soft_tissue(-135.0), 0.0);
    assert_eq!(window_soft_tissue(40.0), 0.5);
    assert_eq!(window_soft_tissue(215.0), 1.0);
    assert_eq!(window_soft_tissue(-1000.0), 0.0);
    assert_eq!(window_soft_tissue(3000.0), 1.0);
    assert_eq!(window_normalize(40.0, 350.0, 40.0), 0.5);
}

#[test]
fn single_patient_has_no_eval_pairs() {
    let organs = seven_organs();
    assert!(pair_scheduler(&["p".to_string()], &organs, Phase::Eval, 0).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_each_fold(n in 10usize..60, seed in 0u64..1000) {
        let ids: Vec<String> = (0..n).map(|k| format!("p{k:03}")).collect();
        let spec = make_folds(&ids, seed).unwrap();
        prop_assert_eq!(spec.folds.len(), 5);
        let mut tested = BTreeSet::new();
        for f in &spec.folds {
            let all: BTreeSet<&String> = f.train.iter().chain(&f.val).chain(&f.test).collect();
            prop_assert_eq!(all.len(), n);
            prop_assert_eq!(f.train.len() + f.val.len() + f.test.len(), n);
            prop_assert!(!f.val.is_empty() && !f.test.is_empty());
            tested.extend(f.test.iter().cloned());
        }
        prop_assert_eq!(tested.len(), n);
        prop_assert_eq!(make_folds(&ids, seed).unwrap(), spec);
    }

    #[test]
    fn training_order_is_a_seeded_shuffle(seed in 0u64..1000, epoch in 0u64..50) {
        let ids: Vec<String> = (0..6).map(|k| format!("p{k}")).collect();
        let organs = seven_organs();
        let a = pair_scheduler(&ids, &organs, Phase::Train { epoch }, seed);
        let b = pair_scheduler(&ids, &organs, Phase::Train { epoch }, seed);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), 7 * 36);
        prop_assert!(a.iter().all(|p| ids.contains(&p.a) && ids.contains(&p.b)));
        let ids_set: BTreeSet<String> = a.iter().map(|p| p.id()).collect();
        prop_assert_eq!(ids_set.len(), a.len());
    }
}
