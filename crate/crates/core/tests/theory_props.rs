use desdis_core::theory::{closed_form_student, numeric_oracle, TripletDistanceRecord};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;

#[test]
fn numeric_oracle_agrees_on_random_records() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let rec = common::random_record(&mut rng);
        let closed = closed_form_student(&rec).unwrap();
        let num = numeric_oracle(&rec, (2.0, 0.0)).unwrap();
        worst = worst
            .max((num.optimum.d_pos - closed.d_pos).abs())
            .max((num.optimum.d_neg - closed.d_neg).abs());
    }
    assert!(worst < 1e-6, "largest gap {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn optimum_moves_away_from_teacher(
        d_t_pos in 0.0f64..2.0, d_t_neg in 0.0f64..2.0,
        alpha_p in 0.05f64..50.0, alpha_n in 0.05f64..50.0,
    ) {
        prop_assume!(d_t_pos > 1.0 / (2.0 * alpha_p));
        let rec = TripletDistanceRecord { d_t_pos, d_t_neg, alpha_p, alpha_n, margin: 1.0 };
        let s = closed_form_student(&rec).unwrap();
        prop_assert!(s.d_pos < d_t_pos);
        prop_assert!(s.d_neg > d_t_neg);
    }

    #[test]
    fn hessian_is_positive_definite(
        d_t_pos in 0.0f64..2.0, d_t_neg in 0.0f64..2.0,
        alpha_p in 0.05f64..50.0, alpha_n in 0.05f64..50.0,
        p in 0.0f64..2.0, q in 0.0f64..2.0,
    ) {
        let rec = TripletDistanceRecord { d_t_pos, d_t_neg, alpha_p, alpha_n, margin: 1.0 };
        let f = |a: f64, b: f64| rec.objective(a, b);
        let h = 1e-3;
        let hpp = (f(p + h, q) - 2.0 * f(p, q) + f(p - h, q)) / (h * h);
        let hnn = (f(p, q + h) - 2.0 * f(p, q) + f(p, q - h)) / (h * h);
        let hpn = (f(p + h, q + h) - f(p + h, q - h) - f(p - h, q + h) + f(p - h, q - h)) / (4.0 * h * h);
        let tol = 1e-5 * (1.0 + alpha_p.max(alpha_n)) * 100.0;
        prop_assert!((hpp - 2.0 * alpha_p).abs() < tol, "{} vs {}", hpp, 2.0 * alpha_p);
        prop_assert!((hnn - 2.0 * alpha_n).abs() < tol, "{} vs {}", hnn, 2.0 * alpha_n);
        prop_assert!(hpn.abs() < tol);
        // leading principal minors
        prop_assert!(hpp > 0.0 && hpp * hnn - hpn * hpn > 0.0);
    }
}
