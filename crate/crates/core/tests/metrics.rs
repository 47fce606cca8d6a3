use proptest::prelude::*;
use trajbo::metrics::{quality_curve, rauc_from_curve, rauc_from_discrepancies, rmse, QualityReport};

/// Direct transcription of the trapezoid sum over t = 2..=Nmax.
fn rauc_direct(qt: &[usize]) -> f64 {
    let nmax = qt.len();
    let mut sum = 0.0;
    for t in 2..=nmax {
        sum += (qt[t - 1] as f64 + qt[t - 2] as f64) / 2.0;
    }
    sum / (nmax * nmax) as f64
}

#[test]
fn closed_forms() {
    for nmax in [1usize, 2, 10, 300, 700] {
        assert_eq!(rauc_from_discrepancies(&vec![100.0; nmax], 30.0, nmax), 0.0);
        let all = rauc_from_discrepancies(&vec![0.0; nmax], 30.0, nmax);
        let n = nmax as f64;
        assert!((all - (n * n - 1.0) / (2.0 * n * n)).abs() < 1e-12);
    }
    let r300 = rauc_from_discrepancies(&[0.0; 300], 30.0, 300);
    assert!((r300 - 0.49999444444444444).abs() < 1e-12);
}

#[test]
fn brute_force_threshold_counts() {
    let d: Vec<f64> = (0..20).map(|i| ((i * 37) % 50) as f64 + 0.5).collect();
    let thresholds = [15.0, 20.0, 25.0, 30.0];
    let report = QualityReport::from_discrepancies(&d, &thresholds, 20);
    for (k, th) in thresholds.iter().enumerate() {
        let count = d.iter().filter(|&&v| v < *th).count();
        assert_eq!(report.counts[k], count);
        assert!((report.proportions[k] - count as f64 / 20.0).abs() < 1e-15);
        assert_eq!(report.curves[k][19], count);
    }
    let above = QualityReport::from_discrepancies(&[31.0; 5], &thresholds, 5);
    assert_eq!(above.counts, vec![0; 4]);
}

proptest! {
    #[test]
    fn rauc_matches_direct_sum(d in prop::collection::vec(0.0f64..60.0, 1..400), th in 1.0f64..60.0) {
        let qt = quality_curve(&d, th, d.len());
        prop_assert!((rauc_from_curve(&qt) - rauc_direct(&qt)).abs() < 1e-12);
    }

    #[test]
    fn curve_invariants(d in prop::collection::vec(0.0f64..60.0, 1..200)) {
        let th = [15.0, 20.0, 25.0, 30.0];
        let r = QualityReport::from_discrepancies(&d, &th, d.len());
        for k in 0..th.len() {
            prop_assert!(r.curves[k].windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(r.curves[k][d.len() - 1], r.counts[k]);
            prop_assert!((0.0..=1.0).contains(&r.proportions[k]));
            if k > 0 {
                prop_assert!(r.proportions[k - 1] <= r.proportions[k]);
                prop_assert!(r.rauc[k - 1] <= r.rauc[k]);
            }
        }
    }

    #[test]
    fn dominating_curve_has_larger_rauc(d in prop::collection::vec(0.0f64..60.0, 2..200), shift in 0.0f64..20.0) {
        let better: Vec<f64> = d.iter().map(|v| v - shift).collect();
        prop_assert!(
            rauc_from_discrepancies(&better, 30.0, d.len()) >= rauc_from_discrepancies(&d, 30.0, d.len())
        );
    }

    #[test]
    fn rmse_is_a_metric(
        a in prop::collection::vec(-100.0f64..100.0, 1..50),
        seed_b in prop::collection::vec(-100.0f64..100.0, 50),
        seed_c in prop::collection::vec(-100.0f64..100.0, 50),
        c in -50.0f64..50.0,
    ) {
        let n = a.len();
        let b = &seed_b[..n];
        let cc = &seed_c[..n];
        let ab = rmse(&a, b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - rmse(b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(rmse(&a, cc).unwrap() <= ab + rmse(b, cc).unwrap() + 1e-9);
        let shifted: Vec<f64> = a.iter().map(|v| v + c).collect();
        prop_assert!((rmse(&shifted, &a).unwrap() - c.abs()).abs() < 1e-9);
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
    }
}
