use super::*;
use crate::grid::AngularGrid;
use crate::index_set::build_index_chain;
use crate::profile::{solve_profile, ProfileOptions};
use crate::spectrum::compute_spectrum;
use std::f64::consts::FRAC_PI_2;

fn hemisphere(n: usize, nodes: usize, count: usize) -> Spectrum {
    let g = AngularGrid::build(n, FRAC_PI_2, nodes, 2.0).unwrap();
    let p = solve_profile(&g, &ProfileOptions::default()).unwrap();
    compute_spectrum(&p, count).unwrap()
}

fn pad(c: &[f64], k1: usize) -> Vec<f64> {
    let mut v = c.to_vec();
    v.resize(k1, 0.0);
    v
}

fn residual_rate(exp: &Expansion, t0: f64, t1: f64) -> f64 {
    let ts: Vec<f64> = (0..=30).map(|i| t0 + (t1 - t0) * i as f64 / 30.0).collect();
    let ys: Vec<f64> = ts
        .iter()
        .map(|&t| exp.weighted_sup(exp.residual_at(t).unwrap().values(), 2.0).ln())
        .collect();
    -linear_fit(&ts, &ys).0
}

#[test]
fn taylor_coefficients() {
    let a = taylor_coeffs(4, 4).unwrap();
    assert_eq!(a, vec![3.0, 1.0, 0.0]);
    let a = taylor_coeffs(3, 6).unwrap();
    assert_eq!(a, vec![10.0, 10.0, 5.0, 1.0, 0.0]);
    let a = taylor_coeffs(5, 2).unwrap();
    assert!((a[0] - 14.0 / 9.0).abs() < 1e-15);
    assert!(matches!(taylor_coeffs(5, 1), Err(Error::Parameter(_))));
}

#[test]
fn free_data_length_is_checked() {
    let sp = hemisphere(3, 200, 8);
    let chain = build_index_chain(sp.gammas(), 12.0, 1e-6).unwrap();
    assert_eq!(chain.k1, 2);
    assert!(matches!(free_data_modes(&sp, &chain, &[0.1]), Err(Error::Parameter(_))));
    let e = free_data_modes(&sp, &chain, &[0.1, 0.0]).unwrap();
    assert_eq!(e.terms().len(), 1);
}

#[test]
fn single_mode_correction_above_twice_the_first_exponent() {
    let sp = hemisphere(3, 300, 8);
    let chain = build_index_chain(sp.gammas(), 12.0, 1e-6).unwrap();
    let free = free_data_modes(&sp, &chain, &pad(&[0.1], chain.k1)).unwrap();
    let before = nonlinear_residual_expansion(&free, 6.5).unwrap();
    assert_eq!(before.below.len(), 1);
    assert!((before.below[0].gamma - 2.0 * sp.gammas()[0]).abs() < 1e-9);

    let exp = correct_to_order(&free, &chain, 6.5).unwrap();
    assert_eq!(exp.stages().len(), 1);
    assert!(!exp.stages()[0].resonant);
    assert!((exp.stages()[0].rate - 6.0).abs() < 1e-3);
    assert!(exp.terms().iter().all(|t| t.j == 0));
    let res = nonlinear_residual_expansion(&exp, 6.5).unwrap();
    assert!(res.below.is_empty());
    assert!(exp.order_achieved().unwrap() >= 6.5);
    let rate = residual_rate(&exp, 1.0, 4.0);
    assert!(rate >= 6.45, "fitted residual rate {rate}");
    let uncorrected = residual_rate(&free, 1.0, 4.0);
    assert!(uncorrected < 6.2, "uncorrected rate {uncorrected}");
}

#[test]
fn resonant_correction_produces_a_log_term() {
    let sp = hemisphere(3, 300, 8);
    let g1 = sp.gammas()[0];
    let snapped = sp.with_snapped_gammas(&[(1, 2.0 * g1)]);
    let chain = build_index_chain(snapped.gammas(), 12.0, 1e-6).unwrap();
    let entry = chain.find(2.0 * g1).unwrap();
    assert!(entry.resonant);
    let free = free_data_modes(&snapped, &chain, &pad(&[0.1], chain.k1)).unwrap();
    let exp = correct_to_order(&free, &chain, 2.0 * g1 + 0.5).unwrap();
    assert!(exp.stages()[0].resonant);
    let log = exp.terms().iter().find(|t| t.j == 1).expect("t e^{-2 gamma_1 t} term");
    assert!((log.gamma - 2.0 * g1).abs() < 1e-12);
    assert!(nonlinear_residual_expansion(&exp, 2.0 * g1 + 0.5).unwrap().below.is_empty());
    let rate = residual_rate(&exp, 1.0, 4.0);
    assert!(rate >= 2.0 * g1 + 0.45, "fitted residual rate {rate}");
}

#[test]
fn unsnapped_resonance_is_rejected_and_snapping_repairs_it() {
    let sp = hemisphere(4, 300, 8);
    let g = sp.gammas();
    let chain = build_index_chain(g, 14.0, 1e-3).unwrap();
    let two = chain.find(2.0 * g[0]).expect("combination 2 gamma_1");
    assert!(two.resonant, "{:?}", &g[..4]);
    let free = free_data_modes(&sp, &chain, &pad(&[0.05], chain.k1)).unwrap();
    let mu = 2.0 * g[0] + 0.5;
    assert!(matches!(correct_to_order(&free, &chain, mu), Err(Error::Precondition(_))));
    let (sp2, chain2) = snap_resonances(&sp, &chain).unwrap();
    let single = two.singles[0] - 1;
    assert_eq!(sp2.gammas()[single], 2.0 * sp2.gammas()[0]);
    let free2 = free_data_modes(&sp2, &chain2, &pad(&[0.05], chain2.k1)).unwrap();
    let exp = correct_to_order(&free2, &chain2, mu).unwrap();
    assert!(exp.terms().iter().any(|t| t.j == 1));
}

#[test]
fn symbol_agrees_with_pointwise_nonlinearity() {
    for n in [3usize, 5] {
        let sp = hemisphere(n, 200, 8);
        let chain = build_index_chain(sp.gammas(), 12.0, 1e-6).unwrap();
        let free = free_data_modes(&sp, &chain, &pad(&[0.2], chain.k1)).unwrap();
        let exp = correct_to_order(&free, &chain, 2.0 * sp.gammas()[0] + 0.3).unwrap();
        let rho = sp.operator().rho();
        for t in [1.0, 2.0] {
            let sym = exp.nonlinear_symbol_at(t).unwrap();
            let c = sp.operator().constants();
            let stable = nonlinear_part(&exp.xi(), exp.evaluate(t, false).values(), c).unwrap();
            let mut pointwise = vec![stable];
            if t == 1.0 {
                pointwise.push(exp.nonlinear_direct_at(t).into_values());
            }
            for dir in pointwise {
                let scale = dir.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                for k in (0..rho.len()).filter(|&k| rho[k] > 0.05) {
                    let d = (sym.values()[k] - dir[k]).abs();
                    assert!(d <= 1e-6 * scale, "n={n} t={t} k={k}: {d:e} vs {scale:e}");
                }
            }
        }
    }
}

#[test]
fn quadratic_correction_scales_with_the_square() {
    let sp = hemisphere(3, 200, 8);
    let chain = build_index_chain(sp.gammas(), 12.0, 1e-6).unwrap();
    let at_rate_six = |c: f64| {
        let free = free_data_modes(&sp, &chain, &pad(&[c], chain.k1)).unwrap();
        let exp = correct_to_order(&free, &chain, 6.5).unwrap();
        exp.terms().iter().find(|t| (t.gamma - 6.0).abs() < 1e-3).unwrap().w.values().to_vec()
    };
    let a = at_rate_six(0.1);
    let b = at_rate_six(0.05);
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - 4.0 * y).abs() < 1e-10 * scale);
    }
}

#[test]
fn zero_free_data_gives_trivial_expansion() {
    let sp = hemisphere(3, 150, 6);
    let chain = build_index_chain(sp.gammas(), 12.0, 1e-6).unwrap();
    let free = free_data_modes(&sp, &chain, &[0.0, 0.0]).unwrap();
    let exp = correct_to_order(&free, &chain, 6.5).unwrap();
    assert!(exp.is_empty());
    let rep = assumption_check(&exp, 6.5, (1.0, 5.0)).unwrap();
    assert!(rep.epsilon.iter().all(|&e| e == 0.0));
    assert!(rep.k_constant < 1e-12);
    assert!(rep.passes);
}

#[test]
fn assumptions_hold_for_small_data() {
    let sp = hemisphere(3, 200, 8);
    let chain = build_index_chain(sp.gammas(), 12.0, 1e-6).unwrap();
    let free = free_data_modes(&sp, &chain, &pad(&[0.1], chain.k1)).unwrap();
    let exp = correct_to_order(&free, &chain, 6.5).unwrap();
    let rep = assumption_check(&exp, 6.5, (1.0, 4.0)).unwrap();
    assert!(rep.epsilon_decreasing);
    assert!((rep.epsilon_rate.unwrap() - 3.0).abs() < 0.1, "{:?}", rep.epsilon_rate);
    assert!(rep.passes, "{rep:?}");
}

#[test]
fn large_data_with_fractional_exponent_is_a_domain_error() {
    let sp = hemisphere(5, 150, 6);
    let chain = build_index_chain(sp.gammas(), 12.0, 1e-6).unwrap();
    let free = free_data_modes(&sp, &chain, &pad(&[500.0], chain.k1)).unwrap();
    let mu = 2.0 * sp.gammas()[0] + 0.3;
    assert!(matches!(nonlinear_residual_expansion(&free, mu), Err(Error::Domain(_))));
}

#[test]
fn exact_time_derivative_matches_sampled() {
    let sp = hemisphere(3, 150, 6);
    let chain = build_index_chain(sp.gammas(), 12.0, 1e-6).unwrap();
    let free = free_data_modes(&sp, &chain, &pad(&[0.1], chain.k1)).unwrap();
    let exp = correct_to_order(&free, &chain, 6.5).unwrap();
    let cg = CylinderGrid::build(sp.grid().clone(), 1.0, 5.0, 0.01).unwrap();
    let num = sampled_dt(&exp, &cg);
    let j = cg.nt() / 4;
    let (_, d) = omega_and_dt(&exp, cg.t(j));
    let scale = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (a, b) in num.row(j).iter().zip(&d) {
        assert!((a - b).abs() < 1e-7 * scale);
    }
}
