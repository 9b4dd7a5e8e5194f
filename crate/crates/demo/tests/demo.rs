use impsym_demo::{controller_domain, precision_at, precision_curve, trajectory};

#[test]
fn curve_is_increasing_and_matches_point_evaluation() {
    let curve = precision_curve(1, 0.005, 0.02, 4, 0.99).unwrap();
    assert_eq!(curve.len(), 8);
    let eps: Vec<f64> = curve.chunks(2).map(|p| p[1]).collect();
    assert!(eps.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(eps[0], precision_at(0.005, 0.99).unwrap());
    assert!((precision_at(0.01, 0.99).unwrap() - 0.25761).abs() < 1e-4);
}

#[test]
fn curve_rejects_bad_ranges() {
    assert!(precision_curve(1, 0.02, 0.01, 4, 0.99).is_err());
    assert!(precision_curve(1, 0.01, 0.02, 1, 0.99).is_err());
    assert!(precision_curve(9, 0.01, 0.02, 4, 0.99).is_err());
}

#[test]
fn domain_lies_in_deflated_safe_set() {
    let d = controller_domain(1, 0.05).unwrap();
    assert!(!d.is_empty() && d.len().is_multiple_of(3));
    let eps = precision_at(0.05, 0.99).unwrap();
    for e in d.chunks(3) {
        assert!(e[0] >= 25.0 + eps - 1e-9 && e[0] <= 50.0 - eps + 1e-9);
        assert!(e[1] <= 5.0 && e[2] >= 1.0);
    }
}

#[test]
fn trajectory_stays_safe() {
    let t = trajectory(1, 0.02, 37.5, 100, 4).unwrap();
    assert_eq!(t.len(), 1 + 5 * 101);
    for row in t[1..].chunks(5) {
        assert!((25.0..=50.0).contains(&row[1]) && (25.0..=50.0).contains(&row[2]));
    }
    assert!(trajectory(1, 0.02, 25.01, 10, 0).is_err());
}
