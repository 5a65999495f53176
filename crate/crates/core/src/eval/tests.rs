use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn ls(scores: &[f64], labels: &[u8]) -> LabeledScores {
    LabeledScores::new(
        scores.to_vec(),
        labels.iter().map(|l| *l == 1).collect(),
        "t",
    )
    .unwrap()
}

/// Average precision by direct confusion-matrix enumeration at every distinct threshold.
fn brute_force_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|l| **l).count();
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = scores
            .iter()
            .zip(labels)
            .filter(|(s, l)| **s >= t && **l)
            .count();
        let flagged = scores.iter().filter(|s| **s >= t).count();
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / flagged as f64);
        prev_recall = recall;
    }
    ap
}

#[test]
fn pr_curve_hand_example() {
    let c = pr_curve(&ls(&[0.9, 0.8, 0.1], &[1, 0, 1])).unwrap();
    let pts: Vec<(f64, f64, f64)> = c
        .points
        .iter()
        .map(|p| (p.threshold, p.precision, p.recall))
        .collect();
    assert_eq!(
        pts,
        vec![(0.9, 1.0, 0.5), (0.8, 0.5, 0.5), (0.1, 2.0 / 3.0, 1.0)]
    );
    assert!((auprc(&c) - 0.8333333333333333).abs() < 1e-15);
}

#[test]
fn perfect_and_constant_rankings() {
    let c = pr_curve(&ls(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0])).unwrap();
    assert!(c
        .points
        .iter()
        .take_while(|p| p.recall < 1.0)
        .all(|p| p.precision == 1.0));
    assert_eq!(auprc(&c), 1.0);

    let c = pr_curve(&ls(&[0.5; 4], &[0, 1, 0, 0])).unwrap();
    assert_eq!(c.points.len(), 1);
    assert_eq!((c.points[0].precision, c.points[0].recall), (0.25, 1.0));
    assert_eq!(auprc(&c), 0.25);
    assert!(matches!(
        pr_curve(&ls(&[0.1, 0.2], &[0, 0])),
        Err(Error::UndefinedMetric(_))
    ));
}

#[test]
fn auprc_matches_brute_force_on_small_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 1..=8usize {
        for pattern in 1u32..(1 << n) {
            let labels: Vec<bool> = (0..n).map(|i| pattern >> i & 1 == 1).collect();
            for _ in 0..10 {
                // a coarse grid forces ties
                let scores: Vec<f64> = (0..n)
                    .map(|_| f64::from(rng.random_range(0..5u8)) / 4.0)
                    .collect();
                let data = LabeledScores::new(scores.clone(), labels.clone(), "s").unwrap();
                assert_eq!(
                    average_precision(&data).unwrap(),
                    brute_force_ap(&scores, &labels)
                );
            }
        }
    }
}

#[test]
fn auprc_is_rank_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let scores: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let mut labels: Vec<bool> = (0..30).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        let a = LabeledScores::new(scores.clone(), labels.clone(), "s").unwrap();
        let b = LabeledScores::new(
            scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect(),
            labels,
            "s",
        )
        .unwrap();
        let (ca, cb) = (pr_curve(&a).unwrap(), pr_curve(&b).unwrap());
        for (p, q) in ca.points.iter().zip(&cb.points) {
            assert_eq!((p.precision, p.recall), (q.precision, q.recall));
        }
        let v = auprc(&ca);
        assert_eq!(v, auprc(&cb));
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn prf_examples() {
    let d = ls(&[0.9, 0.8, 0.1], &[1, 0, 1]);
    let r = prf_at_threshold(&d, 0.5);
    assert_eq!((r.precision, r.recall, r.f1), (Some(0.5), Some(0.5), 0.5));
    let r = prf_at_threshold(&d, 1.0);
    assert_eq!((r.precision, r.recall, r.f1), (None, Some(0.0), 0.0));
    let sep = ls(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]);
    let r = prf_at_threshold(&sep, 0.5);
    assert_eq!((r.precision, r.recall, r.f1), (Some(1.0), Some(1.0), 1.0));
}

fn seeded_scores(n: usize, positives: usize, seed: u64) -> LabeledScores {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<bool> = (0..n).map(|i| i < positives).collect();
    let scores = labels
        .iter()
        .map(|l| rng.random::<f64>() + if *l { 0.6 } else { 0.0 })
        .collect();
    LabeledScores::new(scores, labels, "seeded").unwrap()
}

#[test]
fn bootstrap_examples() {
    let d = seeded_scores(200, 20, 1);
    let constant = bootstrap_ci(&d, |_| Some(0.42), 1000, 3).unwrap();
    assert_eq!(
        (constant.median, constant.ci_lo, constant.ci_hi),
        (0.42, 0.42, 0.42)
    );

    let a = bootstrap_ci(&d, |s| average_precision(s).ok(), 1000, 3).unwrap();
    let b = bootstrap_ci(&d, |s| average_precision(s).ok(), 1000, 3).unwrap();
    assert_eq!(a, b);
    let point = average_precision(&d).unwrap();
    assert!(a.ci_lo <= point && point <= a.ci_hi, "{a:?} {point}");
    assert!(a.ci_lo <= a.median && a.median <= a.ci_hi);
    let width = a.ci_hi - a.ci_lo;
    assert!(width > 0.0 && width < 1.0);
    assert_eq!(a.redraws, 0);
}

#[test]
fn bootstrap_redraws_rare_positives() {
    let d = seeded_scores(30, 1, 2);
    let r = bootstrap_ci(&d, |s| average_precision(s).ok(), 200, 4).unwrap();
    assert!(r.redraws > 0);
    assert_eq!(r.undefined, 0);
    let none = LabeledScores::new(vec![0.1; 10], vec![false; 10], "x").unwrap();
    assert!(matches!(
        bootstrap_ci(&none, |s| average_precision(s).ok(), 10, 1),
        Err(Error::DegenerateBootstrap(_))
    ));
}

#[test]
fn wilcoxon_five_positive_differences() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [0.0; 5];
    let r = wilcoxon_signed_rank(&a, &b).unwrap();
    assert_eq!(r.w, 0.0);
    assert!(r.exact);
    assert_eq!(r.p_greater, 0.03125);
    assert_eq!(r.p_two_sided, 0.0625);
    assert!(matches!(
        wilcoxon_signed_rank(&a, &a),
        Err(Error::NoSignal(_))
    ));
}

/// Two-sided p by listing every sign pattern of the ranked differences.
fn enumerate_p(diffs: &[f64]) -> f64 {
    let sr = signed_ranks(diffs).unwrap();
    let n = sr.ranks2.len();
    let observed = sr.w_plus2().min(sr.total2() - sr.w_plus2());
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let wp: u64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| sr.ranks2[i])
            .sum();
        if wp.min(sr.total2() - wp) <= observed {
            extreme += 1;
        }
    }
    (extreme as f64 / (1u64 << n) as f64).min(1.0)
}

#[test]
fn exact_wilcoxon_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let normal = Normal::new(0.3, 1.0).unwrap();
    for n in 5..=10 {
        for round in 0..20 {
            let mut d: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            if round % 3 == 0 {
                // ties in |d|
                d = d
                    .iter()
                    .map(|v| (v * 2.0).round() / 2.0 + if *v == 0.0 { 0.5 } else { 0.0 })
                    .collect();
                if d.iter().filter(|v| **v != 0.0).count() < 5 {
                    continue;
                }
            }
            let exact = wilcoxon_exact(&d).unwrap();
            let brute = enumerate_p(&d);
            assert!(
                (exact.p_two_sided - brute).abs() < 1e-12,
                "n={n}: {} vs {brute}",
                exact.p_two_sided
            );
        }
    }
}

#[test]
fn normal_approximation_close_to_exact_at_25() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let normal = Normal::new(1.0, 1.0).unwrap();
    let d: Vec<f64> = (0..25).map(|_| normal.sample(&mut rng)).collect();
    let e = wilcoxon_exact(&d).unwrap();
    let z = wilcoxon_normal(&d).unwrap();
    assert_eq!(e.w, z.w);
    assert!(
        (e.p_two_sided - z.p_two_sided).abs() < 1e-3,
        "{} vs {}",
        e.p_two_sided,
        z.p_two_sided
    );
}

#[test]
fn cohens_d_examples() {
    assert_eq!(cohens_d_paired(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
    assert_eq!(cohens_d_paired(&[-1.0, -2.0, -3.0]).unwrap(), -2.0);
    assert!(matches!(
        cohens_d_paired(&[0.5; 4]),
        Err(Error::DegenerateEffect(_))
    ));
}

#[test]
fn relative_improvement_examples() {
    let r = relative_improvement(0.74, 0.65).unwrap();
    assert!((r - 0.13846153846153847).abs() < 1e-12);
    assert_eq!((100.0 * r).round(), 14.0);
    let r = relative_improvement(0.68, 0.50).unwrap();
    assert!((r - 0.36).abs() < 1e-12);
    assert_eq!((100.0 * r).round(), 36.0);
    assert_eq!(relative_improvement(0.4, 0.4).unwrap(), 0.0);
    assert!(matches!(
        relative_improvement(0.4, 0.0),
        Err(Error::Domain(_))
    ));
}

fn two_methods() -> BTreeMap<Method, LabeledScores> {
    let good = seeded_scores(120, 12, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let weak = LabeledScores::new(
        good.labels
            .iter()
            .map(|l| rng.random::<f64>() + if *l { 0.2 } else { 0.0 })
            .collect(),
        good.labels.clone(),
        "seeded",
    )
    .unwrap();
    BTreeMap::from([(Method::Lrc, good), (Method::Cva, weak)])
}

#[test]
fn compare_methods_report() {
    let opts = CompareOptions {
        n_boot: 300,
        ..CompareOptions::default()
    };
    let rep = compare_methods(&two_methods(), Method::Cva, &opts).unwrap();
    assert_eq!(rep.methods.len(), 2);
    for m in &rep.methods {
        for k in Metric::ALL {
            let s = &m.metrics[&k];
            assert!(s.ci_lo <= s.median && s.median <= s.ci_hi);
        }
    }
    let lrc = rep.method(Method::Lrc).unwrap();
    assert!(lrc.p_vs_reference.value.unwrap() < 0.01);
    assert!(lrc.cohens_d[&Metric::Auprc].value.unwrap() > 0.0);
    assert!(lrc.rel_improvement.value.unwrap() > 0.0);

    let own = rep.method(Method::Cva).unwrap();
    assert!(own.p_vs_reference.value.is_none() && own.p_vs_reference.flag.is_some());
    assert!(own.cohens_d[&Metric::Auprc].flag.is_some());
    assert_eq!(own.rel_improvement.value, Some(0.0));

    let again = compare_methods(&two_methods(), Method::Cva, &opts).unwrap();
    assert_eq!(
        serde_json::to_string(&rep).unwrap(),
        serde_json::to_string(&again).unwrap()
    );

    let csv = rep.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER);
    assert!(lines.all(|l| l.split(',').count() == 12));
    assert!(rep.to_table().contains("| LRC |"));
}

#[test]
fn identical_methods_are_flagged() {
    let mut m = two_methods();
    let copy = m[&Method::Lrc].clone();
    m.insert(Method::Cosine, copy);
    let rep = compare_methods(
        &m,
        Method::Lrc,
        &CompareOptions {
            n_boot: 100,
            ..CompareOptions::default()
        },
    )
    .unwrap();
    let c = rep.method(Method::Cosine).unwrap();
    assert!(c.p_vs_reference.flag.is_some());
    assert!(Metric::ALL.iter().all(|k| c.cohens_d[k].flag.is_some()));
    assert_eq!(c.rel_improvement.value, Some(0.0));
}

#[test]
fn mismatched_tiles_are_pairing_errors() {
    let mut m = two_methods();
    let short = seeded_scores(50, 5, 1);
    m.insert(Method::Irmad, short);
    assert!(matches!(
        compare_methods(&m, Method::Cva, &CompareOptions::default()),
        Err(Error::Pairing(_))
    ));
}
