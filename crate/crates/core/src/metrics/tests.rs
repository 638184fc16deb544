use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::*;

fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
    let ids = (0..scores.len()).map(|i| format!("C{i:04}")).collect();
    ScoredSet::new(ids, scores.to_vec(), labels.to_vec()).unwrap()
}

#[test]
fn auprc_examples() {
    assert_eq!(auprc(&set(&[0.9, 0.8, 0.1], &[1, 1, 0])).unwrap(), 1.0);
    assert_eq!(auprc(&set(&[0.2, 0.9], &[1, 0])).unwrap(), 0.5);
    let v = auprc(&set(&[0.9, 0.3, 0.5], &[1, 1, 0])).unwrap();
    assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    assert_eq!(auprc(&set(&[0.5, 0.4], &[0, 0])), Err(Error::UndefinedMetric("auprc needs at least one positive")));
}

#[test]
fn auprc_ties_follow_company_id() {
    // both at 0.5: C0000 (negative) ranks ahead of C0001 (positive)
    assert_eq!(auprc(&set(&[0.5, 0.5], &[0, 1])).unwrap(), 0.5);
    assert_eq!(auprc(&set(&[0.5, 0.5], &[1, 0])).unwrap(), 1.0);
}

#[test]
fn auroc_examples() {
    assert_eq!(auroc(&set(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])).unwrap(), 1.0);
    assert_eq!(auroc(&set(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0])).unwrap(), 0.0);
    assert_eq!(auroc(&set(&[0.4; 5], &[1, 0, 1, 0, 0])).unwrap(), 0.5);
    assert_eq!(auroc(&set(&[0.9, 0.5, 0.3], &[1, 0, 1])).unwrap(), 0.5);
    assert!(auroc(&set(&[0.9, 0.5], &[1, 1])).is_err());
    assert!(auroc(&set(&[0.9, 0.5], &[0, 0])).is_err());
}

#[test]
fn f1_examples() {
    let val = set(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]);
    let test = set(&[0.95, 0.85, 0.3, 0.05], &[1, 1, 0, 0]);
    let (t, f1) = f1_optimal(&val, &test).unwrap();
    assert_eq!(t, 0.8);
    assert_eq!(f1, 1.0);

    // predicting everything positive gives 2p/(p+1)
    let s = set(&[0.1, 0.7, 0.4, 0.9, 0.3], &[1, 0, 0, 1, 0]);
    let p = 0.4;
    assert!((f1_at(&s, 0.0) - 2.0 * p / (p + 1.0)).abs() < 1e-15);
}

#[test]
fn f1_tie_takes_lowest_threshold() {
    // 0.9 -> 2/3, 0.5 -> 1/2, 0.4 -> 2/5, 0.3 -> 2/3
    let val = set(&[0.9, 0.5, 0.4, 0.3], &[1, 0, 0, 1]);
    let (t, f1) = best_threshold(&val).unwrap();
    assert_eq!(t, 0.3);
    assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
    // a unique optimum in the middle of the grid
    let val = set(&[0.9, 0.5, 0.2], &[1, 1, 0]);
    assert_eq!(best_threshold(&val).unwrap(), (0.5, 1.0));
}

#[test]
fn precision_and_lift() {
    let s = set(&[0.9, 0.8, 0.7, 0.1], &[1, 1, 0, 0]);
    assert_eq!(precision_at_k(&s, 2).unwrap(), 1.0);
    assert_eq!(precision_at_k(&s, 4).unwrap(), 0.5);
    assert_eq!(lift_at_k(&s, 4).unwrap(), 1.0);
    assert_eq!(lift_at_k(&s, 2).unwrap(), 2.0);
    assert_eq!(precision_at_k(&s, 5), Err(Error::KExceedsN { k: 5, n: 4 }));
    assert!(precision_at_k(&s, 0).is_err());
    assert_eq!(lift_at_k(&set(&[0.3], &[0]), 1), Err(Error::ZeroBaseRate));
    let reported = lift(0.896, 1124.0 / 2689.0).unwrap();
    assert!((reported - 2.14).abs() < 5e-3);
}

#[test]
fn precision_ignores_input_order() {
    let a = ScoredSet::new(
        vec!["B".into(), "A".into(), "C".into()],
        vec![0.5, 0.5, 0.1],
        vec![1, 0, 1],
    )
    .unwrap();
    let b = ScoredSet::new(
        vec!["C".into(), "A".into(), "B".into()],
        vec![0.1, 0.5, 0.5],
        vec![1, 0, 1],
    )
    .unwrap();
    assert_eq!(precision_at_k(&a, 1).unwrap(), 0.0);
    assert_eq!(precision_at_k(&b, 1).unwrap(), 0.0);
}

#[test]
fn scored_set_validation() {
    assert!(ScoredSet::new(vec![], vec![], vec![]).is_err());
    assert!(ScoredSet::new(vec!["A".into()], vec![0.1, 0.2], vec![1]).is_err());
    assert!(ScoredSet::new(vec!["A".into()], vec![f64::NAN], vec![1]).is_err());
    assert!(ScoredSet::new(vec!["A".into()], vec![0.3], vec![2]).is_err());
}

#[test]
fn evaluate_skips_large_k_and_keeps_lift_identity() {
    let val = set(&[0.9, 0.2, 0.6, 0.4], &[1, 0, 1, 0]);
    let test = set(&[0.8, 0.3, 0.7, 0.1, 0.5], &[1, 0, 0, 0, 1]);
    let r = evaluate("hgt", 42, &val, &test, &[2, 5, 100]).unwrap();
    assert_eq!(r.skipped_k, vec![100]);
    assert_eq!(r.precision_at.keys().copied().collect::<Vec<_>>(), vec![2, 5]);
    for (k, p) in &r.precision_at {
        assert_eq!(r.lift_at[k], p / r.base_rate);
    }
    assert_eq!(r.n, 5);
    assert_eq!(r.n_pos, 2);
    assert_eq!(r.threshold, 0.6);
    assert_eq!(r.f1, f1_at(&test, 0.6));
    let names: Vec<String> = r.metrics().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["auprc", "auroc", "f1", "precision@2", "precision@5", "lift@2", "lift@5"]);
}

#[test]
fn aggregation_uses_sample_std() {
    let v = mean_std(&[0.60, 0.62, 0.64, 0.66, 0.68]).unwrap();
    assert!((v.mean - 0.64).abs() < 1e-12);
    // squared deviations sum to 0.004; divisor 4
    assert!((v.std - libm::sqrt(0.001)).abs() < 1e-12);
    assert_eq!(mean_std(&[0.7]).unwrap().std, 0.0);
    assert!(mean_std(&[]).is_err());
}

#[test]
fn identical_seeds_have_zero_std() {
    let val = set(&[0.9, 0.2, 0.6, 0.4], &[1, 0, 1, 0]);
    let test = set(&[0.8, 0.3, 0.7, 0.1], &[1, 0, 0, 1]);
    let reports: Vec<_> = [42, 123, 456, 789, 1024]
        .iter()
        .map(|&s| evaluate("mlp", s, &val, &test, &[2]).unwrap())
        .collect();
    let agg = aggregate(&reports).unwrap();
    for stat in agg["mlp"].values() {
        assert_eq!(stat.std, 0.0);
        assert_eq!(stat.runs, 5);
    }
}
