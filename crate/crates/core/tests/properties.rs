use std::f64::consts::LN_2;

use mbde::booster::{float_slack, theta_schedule, theta_sum_limit, MollifiedDensity};
use mbde::sampler::PrivacyLedger;
use mbde::targets::{mollify, BaseDensity, Dataset, ExactSampler, FiniteGridDensity, Region};
use mbde::theory::{gamma_fn, kl_drop_bound};
use mbde::weak_learner::{Classifier, Regime, WlaReport};
use proptest::prelude::*;

fn unit_interval() -> Region {
    Region::new(vec![0.0], vec![1.0]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mollified_grid_stays_in_range_and_keeps_mass(
        raw in prop::collection::vec(0.0f64..50.0, 4..64),
        eps in 0.01f64..5.0,
    ) {
        prop_assume!(raw.iter().any(|v| *v > 0.0));
        let n = raw.len();
        let values = raw.clone();
        let f = FiniteGridDensity::from_fn(unit_interval(), vec![n], |x| {
            values[((x[0] * n as f64) as usize).min(n - 1)]
        }).unwrap();
        let g = mollify(&f, eps).unwrap();
        let (lo, hi) = ((-0.5 * eps).exp(), (0.5 * eps).exp());
        for v in g.values() {
            prop_assert!(*v >= lo * (1.0 - 1e-12) && *v <= hi * (1.0 + 1e-12), "{v} outside [{lo}, {hi}]");
        }
        prop_assert!((g.mass() - 1.0).abs() < 1e-9);
        prop_assert_eq!(g.argmax_set(), f.argmax_set());

        // Forward differences all shrink by the same factor.
        let df = f.forward_differences(0);
        let dg = g.forward_differences(0);
        let big = df.iter().cloned().fold(0.0f64, |m, d| m.max(d.abs()));
        let alpha = dg.iter().zip(&df).find(|(_, d)| d.abs() >= 0.5 * big).map(|(a, b)| a / b);
        if let Some(alpha) = alpha {
            prop_assert!(alpha > 0.0 && alpha <= 1.0 + 1e-12);
            for (a, b) in dg.iter().zip(&df) {
                prop_assert!((a - alpha * b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn classifier_output_is_strictly_inside_log2(seed in any::<u64>(), x in -1e3f64..1e3, y in -1e3f64..1e3, scale in 0.0f64..50.0) {
        let mut c = Classifier::init(2, seed).unwrap();
        c.params_mut().iter_mut().for_each(|p| *p *= scale);
        let v = c.classify(&[x, y]);
        prop_assert!(v.abs() < LN_2);
        prop_assert!(v.is_finite());
    }

    #[test]
    fn advantages_ignore_sample_order(
        cp in prop::collection::vec(-0.69f64..0.69, 1..50),
        cq in prop::collection::vec(-0.69f64..0.69, 1..50),
        rot in 0usize..50,
    ) {
        prop_assume!(cp.iter().chain(&cq).any(|v| *v != 0.0));
        let a = WlaReport::from_outputs(&cp, &cq).unwrap();
        let mut cp2 = cp.clone();
        let mut cq2 = cq.clone();
        let k = rot % cp2.len();
        cp2.rotate_left(k);
        cq2.reverse();
        let b = WlaReport::from_outputs(&cp2, &cq2).unwrap();
        prop_assert!((a.gamma_p - b.gamma_p).abs() < 1e-12);
        prop_assert!((a.gamma_q - b.gamma_q).abs() < 1e-12);
        prop_assert_eq!(a.c_star, b.c_star);
        prop_assert!(a.gamma_p.abs() <= 1.0 && a.gamma_q.abs() <= 1.0);
    }

    #[test]
    fn theta_partial_sums_stay_below_limit(eps in 0.01f64..100.0, t in 1usize..2000) {
        let s = theta_schedule(eps, t).unwrap();
        prop_assert!(s.partial_sums_below_limit());
        prop_assert!(s.log_gap().is_finite());
        prop_assert!(s.sum() <= theta_sum_limit(eps) + float_slack(eps));
    }

    #[test]
    fn drop_bound_matches_closed_forms(gp in 0.001f64..1.0, gq in 0.001f64..1.0, cs in 0.01f64..LN_2, theta in 0.0f64..1.0) {
        let r = WlaReport { gamma_p: gp, gamma_q: gq, c_star: cs, regime: Regime::classify(gp, gq) };
        let b = kl_drop_bound(&r, theta).unwrap();
        let expected = if gq >= 1.0 / 3.0 {
            cs * gp + (4.0 / (5.0 - 3.0 * gq)).ln()
        } else {
            gp + gq - cs * theta / 2.0
        };
        prop_assert!((b.lambda_t - expected).abs() < 1e-12);
        prop_assert!((b.guaranteed_drop() - theta * expected).abs() < 1e-12);
        if gq >= 1.0 / 3.0 {
            prop_assert!(gamma_fn(gq).unwrap() >= -1e-15);
        }
    }

    #[test]
    fn ledger_totals_do_not_depend_on_chunking(eps in 1e-6f64..1.0, chunks in prop::collection::vec(0u64..500, 1..20)) {
        let mut chunked = PrivacyLedger::new(eps).unwrap();
        for k in &chunks {
            chunked.record(*k);
        }
        let mut once = PrivacyLedger::new(eps).unwrap();
        once.record(chunks.iter().sum());
        prop_assert_eq!(chunked, once);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 20, failure_persistence: None, ..ProptestConfig::default() })]

    // Any classifiers under the schedule keep the model within ε/2 of Q_0,
    // whatever their weights.
    #[test]
    fn random_models_are_mollified(seed in any::<u64>(), eps in 0.05f64..5.0, rounds in 1usize..5, scale in 0.1f64..20.0) {
        let mut m = MollifiedDensity::base_only(1, eps).unwrap();
        let s = theta_schedule(eps, rounds).unwrap();
        for t in 0..rounds {
            let mut c = Classifier::init(1, seed.wrapping_add(t as u64)).unwrap();
            c.params_mut().iter_mut().for_each(|p| *p *= scale);
            m.classifiers.push(c);
            m.thetas.values.push(s.values[t]);
        }
        m.normalize(1000, seed).unwrap();
        let mut eval = BaseDensity::new(1).sample(500, seed ^ 1);
        for i in 0..=200 {
            eval.push(&[-50.0 + 0.5 * i as f64]).unwrap();
        }
        let cert = m.privacy_certificate(&eval).unwrap();
        prop_assert!(cert.pass, "{cert:?}");
        // The statistic alone is bounded by Σθ log 2 < ε/4.
        let bound = 0.25 * eps;
        prop_assert!(eval.iter().all(|x| m.statistic(x).abs() < bound));
        prop_assert!(m.phi_hat.abs() < bound);
    }
}

#[test]
fn dataset_round_trips_through_csv() {
    let d = BaseDensity::new(2).sample(50, 4);
    let mut buf = Vec::new();
    d.write_csv(&mut buf).unwrap();
    let back = Dataset::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, d);
}
