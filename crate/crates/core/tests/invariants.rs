use ifs_response::ifs::{
    conjugate_to_unit_translations, cramer_rate, spectral_report, tail_exponent, AffineMap, Ifs, ParamDirection,
};
use ifs_response::jet::Jet;
use ifs_response::moments::{binomial_identity, exact_moment, exact_moment_derivative};
use ifs_response::response::{faa_di_bruno_sum, faa_di_bruno_terms};
use ifs_response::sampler::{
    estimate_expectation, eval_series, sample_path, series_value, McPlan, TruncatedPath,
};
use ifs_response::witness::{
    enumerate_prefix_atoms, largest_feasible_m, DeviationBound, SmoothPlateauBump,
};
use proptest::prelude::*;

fn canonical_strategy() -> impl Strategy<Value = Ifs> {
    (0.05f64..0.95, 1.01f64..1.6)
        .prop_filter("contracting on average", |(a, b)| a * b < 0.98)
        .prop_map(|(a, b)| Ifs::canonical(a, b).unwrap())
}

fn general_strategy() -> impl Strategy<Value = Ifs> {
    (0.05f64..0.95, 1.01f64..1.6, -3.0f64..3.0, -3.0f64..3.0, 0.2f64..0.8)
        .prop_filter("contracting, distinct fixed points", |(a, b, d1, d2, p)| {
            p * a.ln() + (1.0 - p) * b.ln() < -0.01 && (d1 / (1.0 - a) - d2 / (1.0 - b)).abs() > 0.1
        })
        .prop_map(|(a, b, d1, d2, p)| Ifs::from_parts(&[a, b], &[d1, d2], &[p, 1.0 - p]).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn log_mgf_is_convex(ifs in general_strategy(), s in -5.0f64..10.0, t in -5.0f64..10.0) {
        let mid = ifs.log_moment_generating(0.5 * (s + t));
        let chord = 0.5 * (ifs.log_moment_generating(s) + ifs.log_moment_generating(t));
        prop_assert!(mid <= chord + 1e-12 * (1.0 + chord.abs()));
    }

    #[test]
    fn tail_exponent_is_the_positive_root(ifs in canonical_strategy()) {
        let s0 = tail_exponent(&ifs).unwrap();
        prop_assert!(s0 > 0.0);
        prop_assert!((ifs.moment_growth(s0) - 1.0).abs() < 1e-9);
        prop_assert!(ifs.moment_growth(0.5 * s0) < 1.0);
    }

    #[test]
    fn conjugation_round_trip(ifs in general_strategy(), word in prop::collection::vec(0u8..2, 1..12), y in -5.0f64..5.0) {
        let (canon, c) = conjugate_to_unit_translations(&ifs).unwrap();
        // c ∘ f_w = f̃_w ∘ c for every finite word
        let mut lhs = y;
        let mut rhs = c.apply(y);
        for &s in word.iter().rev() {
            lhs = canon.maps()[s as usize].apply(lhs);
            rhs = ifs.maps()[s as usize].apply(rhs);
        }
        prop_assert!((c.apply(lhs) - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        let back = c.inverse().apply(c.apply(y));
        prop_assert!((back - y).abs() <= 1e-12 * (1.0 + y.abs()));
    }

    #[test]
    fn strong_contraction_has_dimension_below_one(a in 0.01f64..0.5, frac in 0.0f64..1.0) {
        // b ranges over (1, 1/(4a))
        let b = 1.0 + frac * (0.25 / a - 1.0);
        prop_assume!(b > 1.0 && a * b < 0.25);
        let ifs = Ifs::canonical(a, b).unwrap();
        prop_assert!(spectral_report(&ifs).unwrap().lyapunov_dimension < 1.0);
    }

    #[test]
    fn cramer_rate_is_nonnegative_and_monotone(ifs in canonical_strategy(), u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let lo = ifs.ratio(0).ln();
        let hi = ifs.ratio(1).ln();
        let mean = ifs.mean_log_ratio();
        prop_assert!(cramer_rate(&ifs, mean).unwrap().abs() < 1e-12);
        for (a, b) in [(lo, mean), (mean, hi)] {
            let (x, y) = (a + u * (b - a), a + v * (b - a));
            let (ix, iy) = (cramer_rate(&ifs, x).unwrap(), cramer_rate(&ifs, y).unwrap());
            prop_assert!(ix >= 0.0 && iy >= 0.0);
            // increasing in the distance from the mean
            if (x - mean).abs() < (y - mean).abs() {
                prop_assert!(ix <= iy + 1e-10);
            }
        }
    }

    #[test]
    fn truncations_are_monotone_and_consistent(ifs in canonical_strategy(), seed in any::<u64>(), n in 1usize..300) {
        let short = sample_path(&ifs, n, seed, 3);
        let long = sample_path(&ifs, n + 17, seed, 3);
        prop_assert_eq!(&long.symbols[..n], &short.symbols[..]);
        prop_assert!(long.x_n >= short.x_n);
        prop_assert_eq!(eval_series(&short, &ifs, 0.0, ParamDirection::Ratio(1)).unwrap(), short.x_n);
    }

    #[test]
    fn prefix_decomposition(ifs in general_strategy(), word in prop::collection::vec(0u8..2, 2..60), cut in 0usize..60) {
        let d = cut.min(word.len());
        let head = TruncatedPath::from_symbols(&ifs, &word[..d], 0);
        let full = series_value(&ifs, &word);
        let split = series_value(&ifs, &word[..d]) + head.lambda_n() * series_value(&ifs, &word[d..]);
        prop_assert!((full - split).abs() <= 1e-10 * (1.0 + full.abs()));
    }

    #[test]
    fn binomial_identity_holds(j in 0u32..=40, t_frac in 0.0f64..=1.0, a in 0.01f64..3.0, b in 0.01f64..3.0) {
        let t = (t_frac * j as f64).floor() as u32;
        let (lhs, rhs) = binomial_identity(j, t, a, b).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn moment_derivative_matches_difference_quotient(a in 0.1f64..0.7, b in 1.01f64..1.2, k in 1u32..4, which in 0usize..4) {
        let ifs = Ifs::canonical(a, b).unwrap();
        prop_assume!(ifs.moment_growth(k as f64) < 0.95);
        let dir = [ParamDirection::Ratio(0), ParamDirection::Ratio(1), ParamDirection::Translation(0), ParamDirection::Translation(1)][which];
        let h = 1e-5;
        let up = exact_moment(&ifs.perturbed(dir, h).unwrap(), k).unwrap();
        let down = exact_moment(&ifs.perturbed(dir, -h).unwrap(), k).unwrap();
        let quotient = (up - down) / (2.0 * h);
        let exact = exact_moment_derivative(&ifs, k, dir, 1).unwrap();
        prop_assert!((quotient - exact).abs() <= 1e-5 * (1.0 + exact.abs()));
    }

    #[test]
    fn faa_di_bruno_matches_jet_composition(inner in prop::collection::vec(-2.0f64..2.0, 9), l in 1usize..=8) {
        // d^l/dx^l exp(g(x)) at 0, where g has the given Taylor coefficients
        let g = Jet::from_coefficients(&inner).truncate(l);
        let composed = g.exp();
        let outer: Vec<f64> = vec![inner[0].exp(); l + 1];
        let formal: Vec<f64> = (1..=l).map(|j| g.derivative(j)).collect();
        let sum = faa_di_bruno_sum(&faa_di_bruno_terms(l).unwrap(), &outer, &formal);
        let expected = composed.derivative(l);
        prop_assert!((sum - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
    }

    #[test]
    fn plateau_bump_invariants(
        centers in prop::collection::vec(-20.0f64..20.0, 1..8),
        inner in 0.05f64..2.0,
        ratio in 1.05f64..3.0,
        probes in prop::collection::vec(-30.0f64..30.0, 32),
    ) {
        let outer = inner * ratio;
        let bump = SmoothPlateauBump::from_balls(&centers, inner, outer).unwrap();
        let mut sorted = probes.clone();
        sorted.sort_by(f64::total_cmp);
        let mut last = f64::NEG_INFINITY;
        for &x in &sorted {
            let d = bump.derivative(x);
            prop_assert!((0.0..=1.0).contains(&d));
            let near = centers.iter().map(|c| (x - c).abs()).fold(f64::INFINITY, f64::min);
            if near <= inner {
                prop_assert_eq!(d, 1.0);
            }
            if near >= outer {
                prop_assert_eq!(d, 0.0);
            }
            let v = bump.value(x);
            prop_assert!(v >= last - 1e-12);
            last = v;
        }
        prop_assert!(bump.l1_norm() <= 2.0 * outer * centers.len() as f64 + 1e-12);
        prop_assert!((bump.value(1e6) - bump.l1_norm()).abs() < 1e-9 * (1.0 + bump.l1_norm()));
    }

    #[test]
    fn find_m_agrees_with_downward_scan(a in 0.05f64..0.5, b in 1.5f64..4.0, n in 1usize..=12, rho in 0.3f64..0.5) {
        prop_assume!(a * b < 0.95);
        let ifs = Ifs::canonical(a, b).unwrap();
        let deviation = DeviationBound::ExactPrefix { rho }.value(&ifs, n);
        let atoms = enumerate_prefix_atoms(&ifs, n, 0.0).unwrap().atoms;
        let found = largest_feasible_m(&atoms, n, deviation);

        // brute force: word values computed directly, every integer scanned
        let values: Vec<f64> = (0..1u32 << n)
            .map(|w| {
                let word: Vec<u8> = (0..n).map(|k| ((w >> k) & 1) as u8).collect();
                let head = TruncatedPath::from_symbols(&ifs, &word, 0);
                head.x_n + head.lambda_n()
            })
            .collect();
        let top = values.iter().cloned().fold(0.0, f64::max).ceil() as u64;
        let total = values.len() as f64;
        let scan = (1..=top).rev().find_map(|m| {
            let p = values.iter().filter(|&&v| v >= m as f64 - 1e-12).count() as f64 / total;
            (m as f64 * p >= (n as f64).powf(-0.5) && p >= 2.0 * deviation).then_some((m, p))
        });
        prop_assert_eq!(found.map(|f| f.0), scan.map(|s| s.0));
        if let (Some((_, p)), Some((_, q))) = (found, scan) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn estimates_do_not_depend_on_worker_count(ifs in canonical_strategy(), seed in any::<u64>()) {
        let plan = McPlan::new(64, 5000, seed);
        let one = estimate_expectation(&ifs, &plan.with_threads(1), |p| p.x_n.sqrt()).unwrap();
        let many = estimate_expectation(&ifs, &plan.with_threads(8), |p| p.x_n.sqrt()).unwrap();
        prop_assert_eq!(one.mean.to_bits(), many.mean.to_bits());
        prop_assert_eq!(one.std_error.to_bits(), many.std_error.to_bits());
    }
}

#[test]
fn degenerate_atoms_collapse() {
    let ifs = Ifs::new_unchecked(vec![AffineMap::new(0.5, 1.0); 2], vec![0.5, 0.5]).unwrap();
    let atoms = enumerate_prefix_atoms(&ifs, 3, 0.0).unwrap();
    assert_eq!(atoms.atoms.len(), 1);
    assert_eq!(atoms.atoms[0].probability, 1.0);
}
