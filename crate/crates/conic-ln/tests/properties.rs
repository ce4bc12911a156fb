use conic_ln::consts::Constants;
use conic_ln::cylinder::{solve_mode_ode, CylinderField, CylinderGrid, CylinderSolver};
use conic_ln::expansion::{correct_to_order, free_data_modes, nonlinear_part, taylor_coeffs};
use conic_ln::grid::AngularGrid;
use conic_ln::harness::{parse_config, Cache, Lookup};
use conic_ln::index_set::{build_index_chain, IndexChain};
use conic_ln::profile::{solve_profile, ProfileOptions};
use conic_ln::spectrum::{compute_spectrum, Spectrum};
use proptest::prelude::*;
use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;

fn hemisphere() -> &'static (Spectrum, IndexChain) {
    static CELL: OnceLock<(Spectrum, IndexChain)> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = AngularGrid::build(3, FRAC_PI_2, 160, 2.0).unwrap();
        let p = solve_profile(&g, &ProfileOptions::default()).unwrap();
        let sp = compute_spectrum(&p, 6).unwrap();
        let chain = build_index_chain(sp.gammas(), 12.0, 1e-6).unwrap();
        (sp, chain)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn indicial_identity(n in 3usize..200) {
        let c = Constants::new(n).unwrap();
        prop_assert!((c.s * (c.s - 1.0) - c.kappa).abs() <= 1e-12 * c.kappa);
        prop_assert!((c.nonlinear_coeff() - c.beta * (c.beta + 1.0)).abs() <= 1e-12 * c.kappa);
        prop_assert!((c.q() - (c.p - 1.0)).abs() <= 1e-12 * c.p);
    }

    #[test]
    fn taylor_series_sums_to_the_power(n in 3usize..9, x in -0.3f64..0.3) {
        let c = Constants::new(n).unwrap();
        let a = taylor_coeffs(n, 40).unwrap();
        let sum: f64 = 1.0 + c.p * x + a.iter().enumerate().map(|(i, ak)| ak * x.powi(i as i32 + 2)).sum::<f64>();
        let want = (1.0 + x).powf(c.p);
        prop_assert!((sum - want).abs() <= 1e-12 * want, "{} vs {}", sum, want);
    }

    #[test]
    fn pointwise_nonlinearity_matches_the_power(n in 3usize..8, xi in 0.5f64..20.0, r in -0.4f64..0.4) {
        let c = Constants::new(n).unwrap();
        let omega = r * xi;
        let got = nonlinear_part(&[xi], &[omega], &c).unwrap()[0];
        let u = xi + omega;
        let want = -c.nonlinear_coeff() * (u.powf(c.p) - xi.powf(c.p) - c.p * xi.powf(c.p - 1.0) * omega);
        prop_assert!((got - want).abs() <= 1e-9 * xi.powf(c.p), "{} vs {}", got, want);
    }

    #[test]
    fn mode_ode_exponential_forcing(gamma in 0.5f64..4.0, gap in 0.3f64..3.0, amp in -5.0f64..5.0) {
        let mu = gamma + gap;
        let (t0, h) = (0.5, 0.01);
        let f: Vec<f64> = (0..=600).map(|j| amp * (-mu * (t0 + j as f64 * h)).exp()).collect();
        let v = solve_mode_ode(gamma, &f, t0, h).unwrap();
        for (j, x) in v.iter().enumerate() {
            let want = amp * (-mu * (t0 + j as f64 * h)).exp() / (mu * mu - gamma * gamma);
            prop_assert!((x - want).abs() <= 1e-7 * want.abs().max(1e-300), "j={}", j);
        }
    }

    #[test]
    fn config_round_trip(nodes in 20usize..2000, mu in 3.1f64..11.0, c1 in -1.0f64..1.0, seed in any::<u64>()) {
        let text = format!(r#"{{"n": 3, "phi_max": 1.2, "mu": {mu}, "c": [{c1}], "node_count": {nodes}, "seed": {seed}}}"#);
        let a = parse_config(&text).unwrap();
        let b = parse_config(&serde_json::to_string(&a).unwrap()).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.hash(), b.hash());
        let mut d = a.clone();
        d.node_count += 1;
        prop_assert_ne!(a.hash(), d.hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cache_detects_any_single_byte_change(
        payload in prop::collection::btree_map("[a-z]{1,8}", "[ -~]{0,40}", 1..5),
        pos in any::<prop::sample::Index>(),
        byte in any::<u8>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path());
        let payload: BTreeMap<String, String> = payload;
        cache.put("stage", "key", &payload).unwrap();
        match cache.get("stage", "key") {
            Lookup::Hit(p) => prop_assert_eq!(&p, &payload),
            other => prop_assert!(false, "{:?}", other),
        }
        let path = dir.path().join("stage-key.json");
        let mut bytes = std::fs::read(&path).unwrap();
        let i = pos.index(bytes.len());
        prop_assume!(bytes[i] != byte);
        bytes[i] = byte;
        std::fs::write(&path, &bytes).unwrap();
        match cache.get("stage", "key") {
            Lookup::Hit(p) => prop_assert_eq!(&p, &payload),
            Lookup::Corrupt(_) => {}
            Lookup::Miss => prop_assert!(false, "miss after corruption"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn inverse_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, mu in 3.3f64..5.7, k in 1.0f64..4.0) {
        let (sp, chain) = hemisphere();
        prop_assume!(chain.values().iter().all(|v| (v - mu).abs() > 0.1));
        let solver = CylinderSolver::new(sp).unwrap();
        let s = sp.operator().constants().s;
        let len = conic_ln::cylinder::truncation_length(mu, sp.gammas()).unwrap();
        let cg = CylinderGrid::build(sp.grid().clone(), 1.0, 1.0 + len, 0.05).unwrap();
        let g1: Vec<f64> = sp.operator().rho().iter().map(|r| r.powf(s)).collect();
        let g2: Vec<f64> = sp.operator().rho().iter().zip(sp.grid().nodes()).map(|(r, p)| r.powf(s) * (k * p).cos()).collect();
        let f1 = CylinderField::separable(cg.clone(), |t| (-mu * t).exp(), &g1);
        let f2 = CylinderField::separable(cg.clone(), |t| (-mu * t).exp() * (1.0 + 0.5 * t.sin()), &g2);
        let (v1, _) = solver.invert(chain, &f1, mu).unwrap();
        let (v2, _) = solver.invert(chain, &f2, mu).unwrap();
        let (v, _) = solver.invert(chain, &f1.scaled(a).add_scaled(b, &f2).unwrap(), mu).unwrap();
        let sum = v1.scaled(a).add_scaled(b, &v2).unwrap();
        let scale = v1.max_abs() * a.abs() + v2.max_abs() * b.abs();
        prop_assert!(v.add_scaled(-1.0, &sum).unwrap().max_abs() <= 1e-9 * scale.max(1e-300));
    }

    #[test]
    fn second_order_family_scales_quadratically(c in 0.01f64..0.2, lambda in 0.2f64..3.0) {
        let (sp, chain) = hemisphere();
        let g1 = sp.gammas()[0];
        let family = |c: f64| -> Vec<f64> {
            let mut d = vec![0.0; chain.k1];
            d[0] = c;
            let exp = correct_to_order(&free_data_modes(sp, chain, &d).unwrap(), chain, 6.5).unwrap();
            exp.terms().iter().find(|t| (t.gamma - 2.0 * g1).abs() < 1e-6).unwrap().w.values().to_vec()
        };
        let (x, y) = (family(c), family(lambda * c));
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((lambda * lambda * a - b).abs() <= 1e-10 * scale);
        }
    }
}
