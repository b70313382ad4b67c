//! Property tests for the structural invariants: norm axioms, torus
//! geometry, truncation shape, spectral round trips and serialization.

use proptest::prelude::*;

use exp_sq_core::io::{read_field, write_field};
use exp_sq_core::lattice::{
    apply_l, apply_linv, convolve, weighted_lp_norm, Field, LatticeConfig, WeightSpec,
};
use exp_sq_core::noise::{sample_white_noise, RngStream};
use exp_sq_core::solver::TruncationKR;
use exp_sq_core::SymbolMode;

fn small_lattice() -> LatticeConfig {
    LatticeConfig::new(2, 16, 8.0, 1.0, SymbolMode::DiscreteLaplacian).unwrap()
}

fn field_strategy(lat: LatticeConfig) -> impl Strategy<Value = Field> {
    proptest::collection::vec(-100.0f64..100.0, lat.site_count())
        .prop_map(move |v| Field::new(lat, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_triangle_inequality_and_homogeneity(
        a in field_strategy(small_lattice()),
        b in field_strategy(small_lattice()),
        c in -5.0f64..5.0,
        p in 1.0f64..4.0,
        ell in 0.0f64..3.0,
    ) {
        let w = WeightSpec::REll { ell };
        let na = weighted_lp_norm(&a, p, &w).unwrap();
        let nb = weighted_lp_norm(&b, p, &w).unwrap();
        let nab = weighted_lp_norm(&a.add(&b).unwrap(), p, &w).unwrap();
        prop_assert!(nab <= na + nb + 1e-12 * (na + nb).max(1.0));
        let scaled = weighted_lp_norm(&a.scale(c), p, &w).unwrap();
        prop_assert!((scaled - c.abs() * na).abs() <= 1e-12 * (na.max(1.0)));
        // weight sandwich: 0 < w <= 1 makes the weighted norm smaller
        let unweighted = weighted_lp_norm(&a, p, &WeightSpec::REll { ell: 0.0 }).unwrap();
        prop_assert!(na <= unweighted + 1e-12 * unweighted.max(1.0));
    }

    #[test]
    fn torus_distance_is_a_metric(
        ax in 0i64..16, ay in 0i64..16,
        bx in 0i64..16, by in 0i64..16,
        cx in 0i64..16, cy in 0i64..16,
    ) {
        let lat = small_lattice();
        let (a, b, c) = ([ax, ay], [bx, by], [cx, cy]);
        let dab = lat.torus_distance(&a, &b);
        let dba = lat.torus_distance(&b, &a);
        prop_assert!((dab - dba).abs() < 1e-14);
        prop_assert_eq!(lat.torus_distance(&a, &a), 0.0);
        let dac = lat.torus_distance(&a, &c);
        let dcb = lat.torus_distance(&c, &b);
        prop_assert!(dab <= dac + dcb + 1e-12);
    }

    #[test]
    fn truncation_is_monotone_bounded_and_capped(
        r in 1.0f64..50.0,
        x in 1e-6f64..100.0,
        y in 1e-6f64..100.0,
    ) {
        let kr = TruncationKR::new(r).unwrap();
        let vx = kr.value(x).unwrap();
        let vy = kr.value(y).unwrap();
        if x <= y {
            prop_assert!(vx <= vy + 1e-12);
        }
        prop_assert!(vx > 0.0 && vx <= r);
        if x <= r - 1.0 {
            prop_assert_eq!(vx, x);
        }
        if x >= r {
            prop_assert_eq!(vx, r);
        }
        let d = kr.derivative(x).unwrap();
        prop_assert!((-1e-12..=4.0 / 3.0 + 1e-12).contains(&d));
    }

    #[test]
    fn convolution_commutes(
        f in field_strategy(small_lattice()),
        g in field_strategy(small_lattice()),
    ) {
        let fg = convolve(&f, &g).unwrap();
        let gf = convolve(&g, &f).unwrap();
        let scale = fg.norm_inf().max(1.0);
        for (a, b) in fg.values().iter().zip(gf.values()) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn field_binary_round_trip(values in proptest::collection::vec(-1e12f64..1e12, 64)) {
        let lat = LatticeConfig::new(1, 64, 16.0, 2.0, SymbolMode::DiscreteLaplacian).unwrap();
        let field = Field::new(lat, values).unwrap();
        let dir = std::env::temp_dir().join("exp_sq_core_prop_io");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("f_{}.bin", std::process::id()));
        write_field(&path, &field).unwrap();
        let back = read_field(&path).unwrap();
        std::fs::remove_file(&path).ok();
        prop_assert_eq!(field.values(), back.values());
    }
}

/// Spectral round trip at the spec'd sample count: 1000 random fields with
/// relative sup error below 1e-10.
#[test]
fn spectral_round_trip_thousand_fields() {
    let lat = LatticeConfig::new(2, 32, 16.0, 1.0, SymbolMode::DiscreteLaplacian).unwrap();
    let mut worst = 0.0f64;
    for s in 0..1000 {
        let f = sample_white_noise(&lat, RngStream::new(777, s));
        let back = apply_linv(&apply_l(&f).unwrap()).unwrap();
        let err = back.sub(&f).unwrap().norm_inf() / f.norm_inf();
        worst = worst.max(err);
    }
    assert!(worst <= 1e-10, "worst relative round-trip error {worst:.3e}");
}

/// Positivity of the discrete resolvent kernel on random nonnegative inputs.
#[test]
fn resolvent_preserves_nonnegativity() {
    let lat = LatticeConfig::new(2, 32, 16.0, 1.0, SymbolMode::DiscreteLaplacian).unwrap();
    for s in 0..50 {
        let f = sample_white_noise(&lat, RngStream::new(778, s)).map(f64::abs);
        let u = apply_linv(&f).unwrap();
        let min = u.values().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > -1e-12, "negative resolvent output {min:.3e}");
    }
}
