use proptest::prelude::*;

use ergodic_interval::cycles::{find_cycles, find_minimal_cycles, renormalize};
use ergodic_interval::inducer::{binding_period, build_induced, default_params};
use ergodic_interval::map::{PiecewiseMap, Side, SidedPoint};
use ergodic_interval::observable::Observable;
use ergodic_interval::orbit::all_critical_orbits;
use ergodic_interval::regime::{classify_decay, Regime};
use ergodic_interval::stats::{kahan_sum, ulam_density, ulam_matrix};

fn any_map() -> impl Strategy<Value = PiecewiseMap> {
    prop_oneof![
        (1.05f64..=2.0).prop_map(|s| PiecewiseMap::tent(s).unwrap()),
        (2.5f64..=4.0).prop_map(|a| PiecewiseMap::quadratic(a).unwrap()),
        Just(PiecewiseMap::doubling().unwrap()),
        (0.3f64..0.7, 1.2f64..3.0, 1.2f64..3.0).prop_map(|(c, rm, rp)| {
            PiecewiseMap::lorenz(c, 1.0 / c.powf(rm), 1.0 / (1.0 - c).powf(rp), rm, rp).unwrap()
        }),
    ]
}

fn continuous_map() -> impl Strategy<Value = PiecewiseMap> {
    prop_oneof![
        (1.05f64..=2.0).prop_map(|s| PiecewiseMap::tent(s).unwrap()),
        (3.0f64..=4.0).prop_map(|a| PiecewiseMap::quadratic(a).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn branches_are_monotone(f in any_map(), u in 0.0f64..1.0, v in 0.0f64..1.0, k in 0usize..8) {
        let b = f.branch(k % f.branches().len());
        let (u, v) = (u.min(v), u.max(v));
        let (x, y) = (b.lo + u * (b.hi - b.lo), b.lo + v * (b.hi - b.lo));
        prop_assume!(y - x > 1e-9);
        prop_assert_eq!((b.value(y) - b.value(x)).signum(), b.sign);
    }

    #[test]
    fn chain_rule(f in any_map(), x in 0.001f64..0.999, a in 0usize..12, b in 0usize..12) {
        let p = SidedPoint::interior(x);
        prop_assume!(f.critical_at(x).is_none());
        let (Ok(ab), Ok(da), Ok(q)) = (f.deriv_n(p, a + b), f.deriv_n(p, a), f.iterate(p, a)) else {
            return Ok(());
        };
        let Ok(db) = f.deriv_n(q, b) else { return Ok(()); };
        prop_assert!((ab.log_abs - da.log_abs - db.log_abs).abs() <= 1e-10 * (1.0 + ab.log_abs.abs()));
    }

    #[test]
    fn side_limits(f in any_map()) {
        for cp in f.critical_points() {
            for (side, h) in [(Side::Minus, -1e-9), (Side::Plus, 1e-9)] {
                let y = f.eval(SidedPoint::new(cp.c, side)).unwrap().x;
                prop_assert!((y - f.apply(cp.c + h)).abs() <= 1e-6);
            }
            if f.is_continuous() {
                let lo = f.eval(SidedPoint::new(cp.c, Side::Minus)).unwrap().x;
                let hi = f.eval(SidedPoint::new(cp.c, Side::Plus)).unwrap().x;
                prop_assert!((lo - hi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distances_are_monotone(f in any_map()) {
        // orbits that land on a critical point are rejected, not recorded
        let Ok(recs) = all_critical_orbits(&f, 200) else { return Ok(()); };
        for r in recs {
            for n in 1..r.horizon {
                prop_assert!(r.dmin[n] <= r.dmin[n - 1]);
                prop_assert!(r.dmin[n] <= r.gamma[n - 1]);
                prop_assert!(r.gamma[n - 1] <= 0.5);
            }
        }
    }

    #[test]
    fn planted_exponents_recovered(beta in 0.2f64..1.5, alpha in 2.5f64..4.0, seed in 0u64..1000) {
        let mut s = seed;
        let mut noise = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            1.0 + 0.1 * ((s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
        };
        let exp: Vec<f64> = (1..=1000).map(|n| (-beta * n as f64).exp().max(1e-300) * noise()).collect();
        let exp: Vec<f64> = exp.into_iter().take(((600.0 / beta) as usize).min(1000)).collect();
        match classify_decay(&exp).unwrap().regime {
            Regime::Exponential { beta: b } => prop_assert!((b / beta - 1.0).abs() <= 0.1),
            r => prop_assert!(false, "expected exponential, got {r:?}"),
        }
        let poly: Vec<f64> = (1..=1000).map(|n| (n as f64).powf(-alpha) * noise()).collect();
        match classify_decay(&poly).unwrap().regime {
            Regime::Polynomial { alpha: a } => prop_assert!((a / alpha - 1.0).abs() <= 0.1),
            r => prop_assert!(false, "expected polynomial, got {r:?}"),
        }
    }

    #[test]
    fn cycles_are_invariant_and_disjoint(f in continuous_map()) {
        let cycles = find_cycles(&f, 64).unwrap();
        for cyc in &cycles {
            let m = cyc.intervals.len();
            for k in 0..m {
                let (a, b) = cyc.intervals[k];
                let (u, v) = cyc.intervals[(k + 1) % m];
                let mut lo = f.apply(a).min(f.apply(b));
                let mut hi = f.apply(a).max(f.apply(b));
                for cp in f.critical_points() {
                    if a < cp.c && cp.c < b {
                        lo = lo.min(f.apply(cp.c));
                        hi = hi.max(f.apply(cp.c));
                    }
                }
                prop_assert!(lo >= u - 1e-9 && hi <= v + 1e-9);
            }
        }
        let minimal = find_minimal_cycles(&f, 64).unwrap();
        prop_assert!(minimal.len() <= f.critical_points().len());
        for (i, a) in minimal.iter().enumerate() {
            for b in &minimal[i + 1..] {
                for &(p, q) in &a.intervals {
                    for &(r, s) in &b.intervals {
                        prop_assert!(q <= r + 1e-9 || s <= p + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn renormalization_conjugates(s in 1.1f64..1.4) {
        let f = PiecewiseMap::tent(s).unwrap();
        let cyc = find_minimal_cycles(&f, 64).unwrap();
        prop_assume!(!cyc.is_empty() && cyc[0].period > 1);
        let r = renormalize(&f, &cyc[0]).unwrap();
        for k in 0..=1000 {
            let y = k as f64 / 1000.0;
            let mut x = r.lambda(y);
            for _ in 0..cyc[0].period {
                x = f.apply(x);
            }
            prop_assert!((r.lambda(r.map.apply(y)) - x).abs() <= 1e-8 * r.scale.abs());
        }
    }

    #[test]
    fn ulam_rows_sum_to_one(f in any_map()) {
        let m = ulam_matrix(&f, 256).unwrap();
        for (i, s) in m.row_sums().into_iter().enumerate() {
            prop_assert!((s - 1.0).abs() <= 1e-12, "row {} sums to {}", i, s);
        }
    }

    #[test]
    fn ulam_density_is_normalised(f in continuous_map()) {
        let d = ulam_density(&f, 256, 20_000).unwrap();
        prop_assert!(d.rho.iter().all(|&r| r >= 0.0));
        prop_assert!((d.total_mass() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn kahan_matches_exact_sum(v in prop::collection::vec(-1_000_000i64..1_000_000, 1..400)) {
        let scale = 2f64.powi(-30);
        let exact = v.iter().sum::<i64>() as f64 * scale;
        let approx = kahan_sum(v.iter().map(|&k| k as f64 * scale));
        prop_assert!((approx - exact).abs() <= 1e-15 * (1.0 + exact.abs()));
    }

    #[test]
    fn observable_names_round_trip(k in 1u32..100, c in 0.0f64..1.0, w in 0.001f64..1.0, wrap in any::<bool>()) {
        let mut obs = vec![Observable::Cos(k), Observable::Sin(k), Observable::Bump { center: c, width: w }];
        if wrap {
            obs = obs.into_iter().map(|o| Observable::Coboundary(Box::new(o))).collect();
        }
        for o in obs {
            let back: Observable = o.to_string().parse().unwrap();
            prop_assert_eq!(back, o);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn binding_period_grows_towards_c(u in 0.0f64..1.0, v in 0.0f64..1.0, plus in any::<bool>()) {
        let f = PiecewiseMap::quadratic(4.0).unwrap();
        let recs = all_critical_orbits(&f, 200).unwrap();
        let delta = default_params(&f, &recs).unwrap().delta;
        let sign = if plus { 1.0 } else { -1.0 };
        let (near, far) = (u.min(v), u.max(v));
        let x = 0.5 + sign * (1e-9 + near * (delta - 2e-9));
        let y = 0.5 + sign * (1e-9 + far * (delta - 2e-9));
        prop_assert!(binding_period(&f, x, &recs, delta).p >= binding_period(&f, y, &recs, delta).p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn induced_partition(a in 0.05f64..0.45, len in 0.2f64..0.5, tent in any::<bool>()) {
        let f = if tent { PiecewiseMap::tent(2.0).unwrap() } else { PiecewiseMap::quadratic(4.0).unwrap() };
        let recs = all_critical_orbits(&f, 200).unwrap();
        let params = default_params(&f, &recs).unwrap();
        let j = (a, (a + len).min(0.95));
        let ind = build_induced(&f, j, &params, &recs).unwrap();
        let mut mass = ind.unresolved_mass;
        for w in ind.elements.windows(2) {
            prop_assert!(w[0].hi <= w[1].lo);
        }
        for e in &ind.elements {
            prop_assert!(e.lo >= j.0 && e.hi <= j.1);
            prop_assert!(e.image.1 - e.image.0 >= params.delta_prime - 1e-9);
            mass += e.len();
        }
        prop_assert!((mass / (j.1 - j.0) - 1.0).abs() <= 1e-12);
    }
}
