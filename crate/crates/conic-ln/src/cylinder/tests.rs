use super::*;
use crate::grid::AngularGrid;
use crate::index_set::{build_index_chain, IndexChain};
use crate::profile::{solve_profile, ProfileOptions};
use crate::spectrum::compute_spectrum;
use std::f64::consts::FRAC_PI_2;

fn hemisphere(nodes: usize, count: usize) -> Spectrum {
    let g = AngularGrid::build(3, FRAC_PI_2, nodes, 2.0).unwrap();
    let p = solve_profile(&g, &ProfileOptions::default()).unwrap();
    compute_spectrum(&p, count).unwrap()
}

fn chain(sp: &Spectrum) -> IndexChain {
    build_index_chain(sp.gammas(), 12.0, 1e-6).unwrap()
}

fn grid(sp: &Spectrum, t0: f64, len: f64) -> Arc<CylinderGrid> {
    CylinderGrid::build(sp.grid().clone(), t0, t0 + len, 0.02).unwrap()
}

fn interior_max(v: &CylinderField) -> f64 {
    let nt = v.grid().nt();
    (2..nt - 2).flat_map(|j| v.row(j).iter()).fold(0.0f64, |m, x| m.max(x.abs()))
}

fn rel_diff_window(a: &CylinderField, b: &CylinderField, spec: &WeightedNormSpec, rho: &[f64]) -> f64 {
    let end = trusted_rows(a.grid());
    let d = a.add_scaled(-1.0, b).unwrap();
    weighted_norm_window(&d, spec, rho, 0, end) / weighted_norm_window(b, spec, rho, 0, end)
}

/// Generic angular profile with the boundary behaviour of the eigenmodes.
fn profile_field(sp: &Spectrum) -> Vec<f64> {
    let s = sp.operator().constants().s;
    sp.operator()
        .rho()
        .iter()
        .zip(sp.grid().nodes())
        .map(|(r, p)| r.powf(s) * (1.0 + 0.5 * (3.0 * p).sin()))
        .collect()
}

fn complement_part(sp: &Spectrum, g: &[f64], low: usize) -> Vec<f64> {
    let mut out = g.to_vec();
    for i in 0..low {
        let c = sp.operator().dot(sp.mode(i), g);
        out.iter_mut().zip(sp.mode(i)).for_each(|(a, b)| *a -= c * b);
    }
    out
}

#[test]
fn mode_is_annihilated_and_zero_maps_to_zero() {
    let sp = hemisphere(200, 4);
    let cg = grid(&sp, 1.0, 6.0);
    let g1 = sp.gammas()[0];
    let v = CylinderField::separable(cg.clone(), |t| (-g1 * t).exp(), sp.mode(0));
    let lv = apply_cyl_operator(sp.operator(), &v).unwrap();
    let r = interior_max(&lv) / (g1 * g1 * v.max_abs());
    assert!(r < 1e-6, "{r}");
    let z = apply_cyl_operator(sp.operator(), &CylinderField::zeros(cg)).unwrap();
    assert_eq!(z.max_abs(), 0.0);
}

#[test]
fn exponential_off_mode_rate_gives_symbol() {
    let sp = hemisphere(200, 4);
    let cg = grid(&sp, 1.0, 6.0);
    let (g1, mu) = (sp.gammas()[0], 4.2);
    let v = CylinderField::separable(cg.clone(), |t| (-mu * t).exp(), sp.mode(0));
    let lv = apply_cyl_operator(sp.operator(), &v).unwrap();
    let want = v.scaled(mu * mu - g1 * g1);
    let err = interior_max(&lv.add_scaled(-1.0, &want).unwrap());
    assert!(err < 1e-6 * want.max_abs(), "{err}");
}

#[test]
fn weighted_norm_examples() {
    let sp = hemisphere(200, 4);
    let cg = grid(&sp, 0.0, 5.0);
    let s = sp.operator().constants().s;
    let rho = sp.operator().rho();
    let rs: Vec<f64> = rho.iter().map(|r| r.powf(s)).collect();
    let v = CylinderField::separable(cg.clone(), |t| (-2.0 * t).exp(), &rs);
    let n2 = weighted_norm(&v, &WeightedNormSpec::new(2.0, s, 0).unwrap(), rho);
    assert!((n2 - 1.0).abs() < 1e-12, "{n2}");
    let n3 = weighted_norm(&v, &WeightedNormSpec::new(3.0, s, 0).unwrap(), rho);
    assert!((n3 / cg.t_max().exp() - 1.0).abs() < 1e-12);
    assert_eq!(weighted_norm(&CylinderField::zeros(cg), &WeightedNormSpec::new(2.0, s, 2).unwrap(), rho), 0.0);
    assert!(WeightedNormSpec::new(0.0, s, 0).is_err());
    assert!(WeightedNormSpec::new(1.0, s, 3).is_err());
}

#[test]
fn shifted_solve_examples() {
    let sp = hemisphere(200, 5);
    let beta = sp.beta();
    let gamma = 4.0;
    let c = gamma * gamma - beta * beta;
    let h = sp.eigenfield(0);
    let h = AngularField::new(h.grid().clone(), h.values().iter().map(|x| (sp.lambdas()[0] - c) * x).collect()).unwrap();
    let w = shifted_angular_solve(&sp, &h, gamma, 1e-8).unwrap();
    let err = w.values().iter().zip(sp.mode(0)).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err < 1e-9, "{err}");
    let zero = AngularField::zeros(sp.grid().clone());
    assert!(shifted_angular_solve(&sp, &zero, gamma, 1e-8).unwrap().values().iter().all(|&x| x == 0.0));
    let g2 = sp.gammas()[1];
    assert!(matches!(
        shifted_angular_solve(&sp, &sp.eigenfield(1), g2, 1e-8),
        Err(Error::FredholmObstruction { mode: 2, .. })
    ));
    // Orthogonal data at the resonance is solvable and stays orthogonal.
    let w = shifted_angular_solve(&sp, &sp.eigenfield(2), g2, 1e-8).unwrap();
    assert!(sp.operator().dot(w.values(), sp.mode(1)).abs() < 1e-9);
}

#[test]
fn complement_recovers_manufactured_field() {
    let sp = hemisphere(200, 6);
    let solver = CylinderSolver::new(&sp).unwrap();
    let (t0, mu) = (1.0, 3.5);
    let len = truncation_length(mu, sp.gammas()).unwrap();
    let cg = grid(&sp, t0, len);
    let low = solver.low_count(mu);
    assert_eq!(low, 1);
    let g = complement_part(&sp, &profile_field(&sp), low);
    let vstar = CylinderField::separable(cg, |t| (-mu * t).exp() * (1.0 - (-2.0 * (t - t0)).exp()).powi(2), &g);
    let f = apply_cyl_operator(sp.operator(), &vstar).unwrap();
    let (v, report) = solver.solve_complement(&f, mu).unwrap();
    let s = sp.operator().constants().s;
    let err = rel_diff_window(&v, &vstar, &WeightedNormSpec::new(mu, s, 0).unwrap(), sp.operator().rho());
    assert!(err < 1e-4, "weighted recovery error {err}");
    assert!(report.orthogonality_defect < 1e-9, "{}", report.orthogonality_defect);
    let nt = v.grid().nt();
    assert!(v.row(0).iter().chain(v.row(nt - 1)).all(|&x| x == 0.0));
    let zero = solver.solve_complement(&CylinderField::zeros(v.grid().clone()), mu).unwrap().0;
    assert_eq!(zero.max_abs(), 0.0);
    // Data with a low-mode component violates the precondition.
    let bad = CylinderField::separable(v.grid().clone(), |t| (-mu * t).exp(), sp.mode(0));
    assert!(matches!(solver.solve_complement(&bad, mu), Err(Error::Precondition(_))));
}

#[test]
fn complement_is_mode_diagonal() {
    let sp = hemisphere(200, 6);
    let solver = CylinderSolver::new(&sp).unwrap();
    let (t0, mu) = (1.0, 3.5);
    let cg = grid(&sp, t0, 12.0);
    let gi = sp.gammas()[1];
    let f = CylinderField::separable(cg.clone(), |t| (-mu * t).exp(), sp.mode(1));
    let (v, _) = solver.solve_complement(&f, mu).unwrap();
    let fi: Vec<f64> = cg.t_nodes().iter().map(|t| (-mu * t).exp()).collect();
    let vi = solve_mode_ode_dirichlet(gi, &fi, t0, cg.h()).unwrap();
    let scale = vi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for j in 0..cg.nt() {
        let coef = sp.operator().dot(sp.mode(1), v.row(j));
        assert!((coef - vi[j]).abs() < 1e-5 * scale, "t={}: {coef} vs {}", cg.t(j), vi[j]);
    }
}

#[test]
fn energy_minimizer_agrees_and_is_start_independent() {
    let sp = hemisphere(120, 6);
    let solver = CylinderSolver::new(&sp).unwrap();
    let (t0, mu) = (1.0, 3.5);
    let cg = grid(&sp, t0, 6.0);
    let g = complement_part(&sp, &profile_field(&sp), 1);
    let f = CylinderField::separable(cg, |t| (-mu * t).exp() * (1.0 + t.sin()), &g);
    let (a, ra) = complement_energy_minimizer(&sp, &f, mu, None).unwrap();
    let (b, rb) = complement_energy_minimizer(&sp, &f, mu, Some(11)).unwrap();
    let (m, _) = solver.solve_complement(&f, mu).unwrap();
    let scale = m.max_abs();
    assert!(a.add_scaled(-1.0, &b).unwrap().max_abs() < 1e-10 * scale);
    assert!(a.add_scaled(-1.0, &m).unwrap().max_abs() < 1e-9 * scale);
    assert!((ra.energy - rb.energy).abs() <= 1e-10 * ra.energy.abs());
    assert!(ra.energy < 0.0);
}

#[test]
fn inverse_superposition_and_low_mode_kernel() {
    let sp = hemisphere(200, 6);
    let ch = chain(&sp);
    let solver = CylinderSolver::new(&sp).unwrap();
    let (t0, mu) = (1.0, 3.5);
    let len = truncation_length(mu, sp.gammas()).unwrap();
    let cg = grid(&sp, t0, len);
    let e = |t: f64| (-mu * t).exp();
    let f1 = CylinderField::separable(cg.clone(), e, sp.mode(0));
    let f2 = CylinderField::separable(cg.clone(), e, sp.mode(1));
    let (a, b) = (0.7, -1.3);
    let f = f1.scaled(a).add_scaled(b, &f2).unwrap();
    let (v, report) = solver.invert(&ch, &f, mu).unwrap();
    let (v1, _) = solver.invert(&ch, &f1, mu).unwrap();
    let (v2, _) = solver.invert(&ch, &f2, mu).unwrap();
    let sum = v1.scaled(a).add_scaled(b, &v2).unwrap();
    assert!(v.add_scaled(-1.0, &sum).unwrap().max_abs() <= 1e-9 * v.max_abs());
    assert_eq!(report.low_modes, 1);
    assert!(report.residual_norms.relative < 1e-10, "{:?}", report.residual_norms);
    assert!(report.residual_norms.stencil_relative < 1e-4, "{:?}", report.residual_norms);
    let g1 = sp.gammas()[0];
    let k = 1.0 / (mu * mu - g1 * g1);
    for j in 0..trusted_rows(&cg) {
        let coef = sp.operator().dot(sp.mode(0), v1.row(j));
        let want = k * e(cg.t(j));
        assert!((coef - want).abs() < 1e-6 * want, "t={}", cg.t(j));
    }
    let zero = solver.invert(&ch, &CylinderField::zeros(cg), mu).unwrap().0;
    assert_eq!(zero.max_abs(), 0.0);
}

#[test]
fn inverse_recovers_manufactured_field() {
    let sp = hemisphere(200, 6);
    let ch = chain(&sp);
    let solver = CylinderSolver::new(&sp).unwrap();
    let s = sp.operator().constants().s;
    let t0 = 1.0;
    for mu in [3.5, 5.5] {
        let len = truncation_length(mu, sp.gammas()).unwrap();
        let cg = grid(&sp, t0, len);
        let g = profile_field(&sp);
        let vstar = CylinderField::separable(cg, |t| (-mu * t).exp() * (1.0 - (-2.0 * (t - t0)).exp()).powi(2), &g);
        let f = apply_cyl_operator(sp.operator(), &vstar).unwrap();
        let (v, report) = solver.invert(&ch, &f, mu).unwrap();
        let err = rel_diff_window(&v, &vstar, &WeightedNormSpec::new(mu, s, 0).unwrap(), sp.operator().rho());
        assert!(err < 1e-4, "mu={mu}: weighted recovery error {err}");
        assert!(report.norm_bound.is_finite() && report.norm_bound > 0.0);
    }
}

#[test]
fn truncation_is_stable_under_doubling() {
    let sp = hemisphere(160, 6);
    let ch = chain(&sp);
    let solver = CylinderSolver::new(&sp).unwrap();
    let (t0, mu) = (1.0, 3.5);
    let g = profile_field(&sp);
    let f_on = |cg: Arc<CylinderGrid>| CylinderField::separable(cg, |t| (-mu * t).exp() * (1.0 + 0.3 * t.cos()), &g);
    let len = truncation_length(mu, sp.gammas()).unwrap();
    let (short, _) = solver.invert(&ch, &f_on(grid(&sp, t0, len)), mu).unwrap();
    let (long, _) = solver.invert(&ch, &f_on(grid(&sp, t0, 2.0 * len)), mu).unwrap();
    let s = sp.operator().constants().s;
    let spec = WeightedNormSpec::new(mu, s, 0).unwrap();
    let rho = sp.operator().rho();
    let end = trusted_rows(short.grid());
    let cut = CylinderField::new(short.grid().clone(), long.values()[..short.values().len()].to_vec()).unwrap();
    let diff = weighted_norm_window(&cut.add_scaled(-1.0, &short).unwrap(), &spec, rho, 0, end);
    let size = weighted_norm_window(&short, &spec, rho, 0, end);
    // Data beyond T reaches the low modes through e^{-(mu - gamma_1)(T - t)}.
    let gap = mu - sp.gammas()[0];
    assert!(diff / size < 10.0 * (-gap * len / 2.0).exp(), "{}", diff / size);
}

#[test]
fn inverse_rejects_bad_inputs() {
    let sp = hemisphere(120, 6);
    let ch = chain(&sp);
    let solver = CylinderSolver::new(&sp).unwrap();
    let cg = grid(&sp, 1.0, 8.0);
    let slow = CylinderField::separable(cg.clone(), |t| (-3.2 * t).exp(), sp.mode(1));
    assert!(matches!(solver.invert(&ch, &slow, 3.5), Err(Error::Rate { .. })));
    let f = CylinderField::separable(cg.clone(), |t| (-6.0 * t).exp(), sp.mode(1));
    let six = ch.values().into_iter().find(|v| (v - 6.0).abs() < 1e-2).unwrap();
    assert!(matches!(solver.invert(&ch, &f, six), Err(Error::Precondition(_))));
    assert!(matches!(solver.invert(&ch, &f, 2.0), Err(Error::Precondition(_))));
}
