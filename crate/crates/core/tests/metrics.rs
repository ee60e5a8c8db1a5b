//! Metrics against brute-force oracles, fixtures and algebraic properties.

mod common;

use kgalign::metrics::*;
use proptest::prelude::*;

const TOL: f64 = 1e-9;

#[test]
fn metrics_match_oracles_on_random_pairs() {
    for (p, r) in common::random_pairs(200, 11) {
        let checks = [
            ("em", exact_match(&p, &r), common::em(&p, &r)),
            ("f1", token_f1(&p, &r), common::token_f1(&p, &r)),
            ("rouge1", rouge_n(&p, &r, 1), common::rouge_n(&p, &r, 1)),
            ("rouge2", rouge_n(&p, &r, 2), common::rouge_n(&p, &r, 2)),
            ("rougeL", rouge_l(&p, &r), common::rouge_l(&p, &r)),
            ("rougeLsum", rouge_lsum(&p, &r), common::rouge_lsum(&p, &r)),
            ("bleu1", bleu_k(&p, &r, 1), common::bleu(&p, &r, 1)),
            ("bleu2", bleu_k(&p, &r, 2), common::bleu(&p, &r, 2)),
            ("bleu3", bleu_k(&p, &r, 3), common::bleu(&p, &r, 3)),
            ("bleu4", bleu_k(&p, &r, 4), common::bleu(&p, &r, 4)),
            ("rwb", rwb(&p, &r), common::rwb(&p, &r)),
        ];
        for (name, got, want) in checks {
            assert!((got - want).abs() <= TOL, "{name} on {p:?} / {r:?}: {got} vs {want}");
        }
    }
}

#[test]
fn hand_fixtures() {
    assert_eq!(token_f1("the cat sat", "the cat"), 0.8);
    assert_eq!(exact_match("the cat sat", "the cat"), 0.0);
    assert_eq!(rouge_l("a b c", "a c"), 0.8);
    assert!((bleu_k("the cat", "the cat sat", 1) - 0.5f64.neg_exp()).abs() < 1e-15);
    assert_eq!(rwb("the cat sat on the mat", "the cat sat on the mat"), 1.0);
    for k in 2..=4 {
        assert_eq!(bleu_k("a", "a", k), 1.0);
    }
}

trait NegExp {
    fn neg_exp(self) -> f64;
}

impl NegExp for f64 {
    fn neg_exp(self) -> f64 {
        (-self).exp()
    }
}

#[test]
fn report_means_are_macro_averages() {
    let pairs = common::random_pairs(40, 3);
    let (p, r): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
    let report = MetricReport::compute(&p, &r).unwrap();
    assert_eq!(report.count, 40);
    let mean_em = report.per_example.iter().map(|s| s.em).sum::<f64>() / 40.0;
    assert!((report.mean.em - mean_em).abs() < 1e-12);
    for s in &report.per_example {
        assert!(s.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

fn words(len: std::ops::Range<usize>) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]), len).prop_map(|w| w.join(" "))
}

fn phrase() -> impl Strategy<Value = String> {
    words(1..8)
}

proptest! {
    #[test]
    fn identity_scores_one(s in words(4..9)) {
        for v in MetricScores::score(&s, &s).values() {
            prop_assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn disjoint_scores_zero(n in 1usize..6, m in 1usize..6) {
        let p = vec!["x"; n].join(" ");
        let r = vec!["y"; m].join(" ");
        let s = MetricScores::score(&p, &r);
        for v in [s.em, s.f1, s.rouge1, s.rouge2, s.rouge_l, s.rouge_lsum, s.bleu1] {
            prop_assert_eq!(v, 0.0);
        }
        for v in [s.bleu2, s.bleu3, s.bleu4, s.rwb] {
            prop_assert!(v < 0.05);
        }
    }

    #[test]
    fn f_measures_are_symmetric(a in phrase(), b in phrase()) {
        prop_assert!((token_f1(&a, &b) - token_f1(&b, &a)).abs() < 1e-12);
        prop_assert!((rouge_n(&a, &b, 1) - rouge_n(&b, &a, 1)).abs() < 1e-12);
        prop_assert!((rouge_n(&a, &b, 2) - rouge_n(&b, &a, 2)).abs() < 1e-12);
    }

    #[test]
    fn rwb_is_convex(a in phrase(), b in phrase()) {
        let bs: Vec<f64> = (1..=4).map(|k| bleu_k(&a, &b, k)).collect();
        let lo = bs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = bs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w = rwb(&a, &b);
        prop_assert!(lo - 1e-12 <= w && w <= hi + 1e-12);
    }
}

#[test]
fn bleu_is_asymmetric() {
    assert_ne!(bleu_k("the cat", "the cat sat", 2), bleu_k("the cat sat", "the cat", 2));
}
