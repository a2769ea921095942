mod common;

use proptest::collection::vec;
use proptest::prelude::*;
use sandpiper::evalengine::{cohen_kappa, precision_recall};

fn label_pairs() -> impl Strategy<Value = Vec<(String, String)>> {
    vec((0u8..5, 0u8..5), 1..120).prop_map(|v| v.into_iter().map(|(a, b)| (format!("c{a}"), format!("c{b}"))).collect())
}

fn split(pairs: &[(String, String)]) -> (Vec<String>, Vec<String>) {
    pairs.iter().cloned().unzip()
}

proptest! {
    #[test]
    fn kappa_matches_contingency_oracle(pairs in label_pairs()) {
        let s = cohen_kappa(&pairs).unwrap();
        let (a, b) = split(&pairs);
        let (po, pe, k) = common::kappa_oracle(&a, &b);
        prop_assert!((s.observed_agreement - po).abs() < 1e-12);
        prop_assert!((s.expected_agreement - pe).abs() < 1e-12);
        prop_assert!((s.kappa - k).abs() < 1e-9);
        prop_assert_eq!(s.n_items, pairs.len());
    }

    #[test]
    fn kappa_is_bounded(pairs in label_pairs()) {
        let s = cohen_kappa(&pairs).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s.kappa), "kappa {}", s.kappa);
        prop_assert!((0.0..=1.0).contains(&s.observed_agreement));
    }

    #[test]
    fn kappa_is_symmetric(pairs in label_pairs()) {
        let swapped: Vec<_> = pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect();
        let (x, y) = (cohen_kappa(&pairs).unwrap(), cohen_kappa(&swapped).unwrap());
        prop_assert!((x.kappa - y.kappa).abs() < 1e-12);
    }

    #[test]
    fn kappa_ignores_item_order(pairs in label_pairs(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut common::rng(seed));
        let (x, y) = (cohen_kappa(&pairs).unwrap(), cohen_kappa(&shuffled).unwrap());
        prop_assert!((x.kappa - y.kappa).abs() < 1e-12);
    }

    #[test]
    fn kappa_ignores_label_names(pairs in label_pairs()) {
        let rename = |s: &String| format!("zz-{}", s.chars().rev().collect::<String>());
        let renamed: Vec<_> = pairs.iter().map(|(a, b)| (rename(a), rename(b))).collect();
        let (x, y) = (cohen_kappa(&pairs).unwrap(), cohen_kappa(&renamed).unwrap());
        prop_assert!((x.kappa - y.kappa).abs() < 1e-12);
    }

    #[test]
    fn identical_raters_agree_fully(labels in vec(0u8..4, 1..60)) {
        let pairs: Vec<_> = labels.iter().map(|l| (l.to_string(), l.to_string())).collect();
        let s = cohen_kappa(&pairs).unwrap();
        prop_assert_eq!(s.observed_agreement, 1.0);
        prop_assert_eq!(s.kappa, 1.0);
    }

    #[test]
    fn precision_recall_matches_oracle(pairs in label_pairs()) {
        let pr = precision_recall(&pairs).unwrap();
        let (oracle, mp, mr) = common::pr_oracle(&pairs);
        prop_assert_eq!(pr.per_code.len(), oracle.len());
        for (code, o) in &oracle {
            let got = &pr.per_code[code];
            prop_assert!((got.precision - o.precision).abs() < 1e-12, "{} precision", code);
            prop_assert!((got.recall - o.recall).abs() < 1e-12, "{} recall", code);
            prop_assert_eq!(got.support, o.support);
        }
        prop_assert!((pr.macro_precision - mp).abs() < 1e-12);
        prop_assert!((pr.macro_recall - mr).abs() < 1e-12);
    }
}

#[test]
fn empty_input_has_no_statistics() {
    assert!(cohen_kappa::<String>(&[]).is_none());
    assert!(precision_recall(&[]).is_none());
}

#[test]
fn seeded_oracle_sweep() {
    let mut r = common::rng(7);
    for _ in 0..300 {
        let (a, b) = common::random_labels(&mut r, 80, 7);
        let pairs: Vec<_> = a.iter().cloned().zip(b.iter().cloned()).collect();
        let (_, _, k) = common::kappa_oracle(&a, &b);
        assert!((cohen_kappa(&pairs).unwrap().kappa - k).abs() < 1e-9);
    }
}
