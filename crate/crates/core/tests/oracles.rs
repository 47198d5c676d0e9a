use ifs_response::ifs::{tail_exponent, Ifs, ParamDirection};
use ifs_response::moments::{exact_moment, expected_formal_derivative, expected_weighted_product};
use ifs_response::response::faa_di_bruno_terms;
use ifs_response::sampler::{estimate_vector, formal_derivatives_into, McPlan};
use ifs_response::witness::{
    build_family, derivative_lower_constant, detect_regime, divergence_report, estimate_hn_prime,
    estimate_hn_prime_plain, median_scale, DeviationBound, RegimeKind, SmoothPlateauBump, WitnessEntry,
    WitnessFamily,
};

/// Number of set partitions of an `n`-set by restricted growth strings.
fn set_partitions(n: usize) -> u64 {
    fn grow(pos: usize, n: usize, max: usize) -> u64 {
        if pos == n {
            return 1;
        }
        (0..=max + 1).map(|b| grow(pos + 1, n, max.max(b))).sum()
    }
    if n == 0 { 1 } else { grow(1, n, 0) }
}

#[test]
fn faa_di_bruno_coefficients_count_partitions() {
    for l in 1..=8 {
        let total: u64 = faa_di_bruno_terms(l).unwrap().iter().map(|t| t.coefficient).sum();
        assert_eq!(total, set_partitions(l), "l = {l}");
    }
    assert_eq!(set_partitions(8), 4140);
}

#[test]
fn tail_exponent_by_plain_bisection() {
    let ifs = Ifs::canonical(0.5, 1.2).unwrap();
    let f = |s: f64| 0.5 * 0.5f64.powf(s) + 0.5 * 1.2f64.powf(s) - 1.0;
    let (mut lo, mut hi) = (1.0, 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 { lo = mid } else { hi = mid }
    }
    assert!((tail_exponent(&ifs).unwrap() - lo).abs() < 1e-10);
}

#[test]
fn derivative_lower_constant_by_hand() {
    assert!((derivative_lower_constant(0.1, 2.0) - 5.0 / 14.0).abs() < 1e-15);
}

#[test]
fn formal_derivative_mean_matches_series() {
    let ifs = Ifs::canonical(0.5, 1.1).unwrap();
    // E[X^(j)] = j! / λ₁^j Σ_m E[Λ_m C(o(m), j)] summed directly
    for j in 1..=3u32 {
        let mut series = 0.0;
        for m in 1..2000 {
            series += expected_weighted_product(&ifs, m, j).unwrap();
        }
        let fact: f64 = (1..=j).map(f64::from).product();
        let direct = fact / 0.5f64.powi(j as i32) * series;
        let closed = expected_formal_derivative(&ifs, j).unwrap();
        assert!((direct - closed).abs() < 1e-9 * closed, "j = {j}: {direct} vs {closed}");
    }
    let plan = McPlan::new(300, 100_000, 5);
    let mc = estimate_vector(&ifs, &plan, 1, |p, out| {
        formal_derivatives_into(p, &ifs, ParamDirection::Ratio(0), out).unwrap();
    })
    .unwrap();
    let exact = expected_formal_derivative(&ifs, 1).unwrap();
    assert!((mc[0].mean - exact).abs() < 4.0 * mc[0].std_error, "{} vs {exact}", mc[0].mean);
    assert!((exact_moment(&ifs, 1).unwrap() - 1.0 / (1.0 - 0.8)).abs() < 1e-12);
}

#[test]
fn stratified_and_plain_witness_estimates_agree() {
    let ifs = Ifs::canonical(0.1, 2.0).unwrap();
    let rho = detect_regime(&ifs).unwrap().a.unwrap().rho;
    let scale = median_scale(&ifs, &McPlan::new(200, 20_001, 7)).unwrap();
    let family =
        build_family(&ifs, RegimeKind::A, &[8, 11], scale, Some(DeviationBound::ExactPrefix { rho })).unwrap();
    for entry in &family.entries {
        let s = estimate_hn_prime(&ifs, entry, &McPlan::new(200, 20_000, 1)).unwrap();
        let p = estimate_hn_prime_plain(&ifs, entry, &McPlan::new(200, 50_000, 2)).unwrap();
        let z = (s.mean - p.mean).abs() / s.std_error.hypot(p.std_error);
        assert!(z < 4.0, "N = {}: {} vs {}", entry.n(), s.mean, p.mean);
    }
    let report = divergence_report(&ifs, &family, &McPlan::new(200, 4_000, 3)).unwrap();
    assert!(report.rows.iter().all(|r| r.pass && r.estimate.mean >= -4.0 * r.estimate.std_error));
    assert!(report.audit_pass);
}

#[test]
fn zero_derivative_gives_zero() {
    let ifs = Ifs::canonical(0.1, 2.0).unwrap();
    let rho = detect_regime(&ifs).unwrap().a.unwrap().rho;
    let scale = median_scale(&ifs, &McPlan::new(200, 2_001, 7)).unwrap();
    let mut family =
        build_family(&ifs, RegimeKind::A, &[8], scale, Some(DeviationBound::ExactPrefix { rho })).unwrap();
    if let WitnessEntry::A { bump, .. } = &mut family.entries[0] {
        *bump = std::sync::Arc::new(SmoothPlateauBump::from_intervals(Vec::new(), 1.0));
    }
    let e = estimate_hn_prime(&ifs, &family.entries[0], &McPlan::new(200, 100, 1)).unwrap();
    assert_eq!((e.mean, e.std_error), (0.0, 0.0));
    let empty = divergence_report(&ifs, &WitnessFamily { entries: Vec::new(), ..family }, &McPlan::new(200, 100, 1))
        .unwrap();
    assert!(empty.rows.is_empty());
}

#[test]
fn family_json_round_trip() {
    let ifs = Ifs::canonical(1.0 / 11.0, 10.0).unwrap();
    let scale = median_scale(&ifs, &McPlan::new(400, 2_001, 7)).unwrap();
    let family = build_family(&ifs, RegimeKind::B, &[2, 3], scale, None).unwrap();
    let text = family.to_json().unwrap();
    let back = WitnessFamily::from_json(&text).unwrap();
    assert_eq!(back, family);
    assert_eq!(back.entries[1].bump().value(1e30), family.entries[1].bump().value(1e30));
}
