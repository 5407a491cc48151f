use proptest::prelude::*;

use thinlab::experiments::{fit_rate, ExperimentConfig, RateModel};
use thinlab::geometry::ChannelProfile;
use thinlab::linalg::gauss_legendre;
use thinlab::nonlinearity::{Cutoff, ReactionTerm};
use thinlab::operators::ChannelPair;
use thinlab::shadowing::{hausdorff_distance, weighted_metric};

fn eps_grid() -> Vec<f64> {
    (3..=7).map(|k| 0.5f64.powi(k)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn power_fit_recovers_exponent(p in 0.3f64..2.5, c in 0.01f64..100.0) {
        let pairs: Vec<(f64, f64)> = eps_grid().iter().map(|&e| (e, c * e.powf(p))).collect();
        let fit = fit_rate(&pairs).unwrap();
        prop_assert_eq!(fit.preferred, RateModel::Power);
        prop_assert!((fit.best().p - p).abs() < 0.05);
    }

    #[test]
    fn log_fit_recovers_exponent(p in 0.3f64..2.5, c in 0.01f64..100.0) {
        let pairs: Vec<(f64, f64)> = eps_grid().iter().map(|&e| (e, c * e.powf(p) * e.ln().abs())).collect();
        let fit = fit_rate(&pairs).unwrap();
        prop_assert_eq!(fit.preferred, RateModel::PowerLog);
        prop_assert!((fit.best().p - p).abs() < 0.05);
    }

    #[test]
    fn eps_lists_validate_iff_strictly_decreasing(raw in prop::collection::vec(0.001f64..1.0, 1..8)) {
        let decreasing = raw.windows(2).all(|w| w[1] < w[0]);
        prop_assert_eq!(ExperimentConfig::default().with_eps(raw).is_ok(), decreasing);
    }

    #[test]
    fn config_toml_round_trips(seed in 0..=i64::MAX as u64, alpha in 0.01f64..0.49, a in 1.5f64..30.0) {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.alpha = alpha;
        cfg.reaction.a = a;
        prop_assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn average_inverts_extension(amp in 0.0f64..0.5, eps in 0.01f64..1.0, u in prop::collection::vec(-3.0f64..3.0, 16)) {
        let p = ChannelProfile::sine(amp, 2).unwrap();
        let pair = ChannelPair::new(&p, 1.0, 0.25, eps, 16, 4).unwrap();
        let eu = pair.transfer.extend(&u);
        for (a, b) in pair.transfer.average(&eu).iter().zip(&u) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let (q, g) = (pair.transfer.norm_q(&eu), pair.transfer.norm_g(&u));
        prop_assert!((q - g).abs() <= 1e-12 * g.max(1.0));
    }

    #[test]
    fn gauss_legendre_exact_to_degree(n in 1usize..12, coeffs in prop::collection::vec(-1.0f64..1.0, 24)) {
        let (x, w) = gauss_legendre(n);
        let deg = 2 * n - 1;
        let poly = |t: f64| coeffs[..=deg].iter().enumerate().map(|(k, c)| c * t.powi(k as i32)).sum::<f64>();
        let exact: f64 = coeffs[..=deg].iter().enumerate().filter(|(k, _)| k % 2 == 0).map(|(k, c)| 2.0 * c / (k + 1) as f64).sum();
        let quad: f64 = x.iter().zip(&w).map(|(t, wi)| wi * poly(*t)).sum();
        prop_assert!((quad - exact).abs() < 1e-12);
    }

    #[test]
    fn gate_is_monotone_in_unit_interval(r in 0.1f64..10.0, s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let c = Cutoff::new(r).unwrap();
        let (lo, hi) = (5.0 * r * r * s.min(t), 5.0 * r * r * s.max(t));
        let (a, b) = (c.theta_hat(lo), c.theta_hat(hi));
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(b <= a);
    }

    #[test]
    fn reaction_dissipative_beyond_threshold(a in 1.5f64..30.0, t in 1.0f64..5.0) {
        let f = ReactionTerm::cubic(a).unwrap();
        let s = f.m * t;
        prop_assert!(f.f(s) * s <= 0.0 && f.f(-s) * (-s) <= 0.0);
    }

    #[test]
    fn hausdorff_symmetric_and_triangle(
        a in prop::collection::vec(-5.0f64..5.0, 1..8),
        b in prop::collection::vec(-5.0f64..5.0, 1..8),
        c in prop::collection::vec(-5.0f64..5.0, 1..8),
    ) {
        let m = weighted_metric(&[1.0]);
        let wrap = |v: &Vec<f64>| v.iter().map(|x| vec![*x]).collect::<Vec<Vec<f64>>>();
        let (a, b, c) = (wrap(&a), wrap(&b), wrap(&c));
        let ab = hausdorff_distance(&a, &b, &m).unwrap();
        prop_assert_eq!(ab, hausdorff_distance(&b, &a, &m).unwrap());
        let bc = hausdorff_distance(&b, &c, &m).unwrap();
        let ac = hausdorff_distance(&a, &c, &m).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }
}
