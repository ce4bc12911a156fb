//! The twelve acceptance criteria. Criteria 9 to 12 use the run configuration;
//! the others use fixed problems and the configured seed.

use super::{oracle_difference, Artifacts, Command, Pipeline, RunConfig};
use crate::consts::Constants;
use crate::cylinder::{
    apply_cyl_operator, solve_mode_ode, trusted_rows, truncation_length, weighted_norm_window, CylinderField, CylinderGrid,
    CylinderSolver, WeightedNormSpec,
};
use crate::error::{Error, Result};
use crate::expansion::{assumption_check, correct_to_order, free_data_modes, nonlinear_part};
use crate::grid::AngularGrid;
use crate::index_set::{build_index_chain, exhaustive_signature};
use crate::profile::{solve_profile, BoundaryProfile, ProfileOptions};
use crate::spectrum::{compute_spectrum, Spectrum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CriterionResult {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    pub note: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub rows: Vec<CriterionResult>,
    pub seed: u64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&format!(
                "{} {:>2} {:<34} {}\n",
                if r.passed { "PASS" } else { "FAIL" },
                r.id,
                r.name,
                r.note
            ));
        }
        s
    }
}

pub const CRITERIA: [&str; 12] = [
    "closed-form constants",
    "hemisphere profile exactness",
    "boundary slope",
    "hemisphere indicial root",
    "index set brute force",
    "mode ODE kernel",
    "linear manufactured solutions",
    "expansion cancellation",
    "contraction",
    "oracle cross-check",
    "free-data steering",
    "determinism",
];

struct Outcome {
    passed: bool,
    metrics: BTreeMap<String, f64>,
    note: String,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            passed: true,
            metrics: BTreeMap::new(),
            note: String::new(),
        }
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.to_string(), v);
    }

    /// Record `v` and require `ok`.
    fn require(&mut self, name: &str, v: f64, ok: bool) {
        self.metric(name, v);
        if !ok {
            self.passed = false;
            if !self.note.is_empty() {
                self.note.push_str("; ");
            }
            self.note.push_str(&format!("{name} = {v:.6e} out of bounds"));
        }
    }
}

fn profile(n: usize, phi_max: f64, nodes: usize) -> Result<BoundaryProfile> {
    let g = AngularGrid::build(n, phi_max, nodes, 2.0)?;
    solve_profile(&g, &ProfileOptions::default())
}

fn c1_constants() -> Result<Outcome> {
    let mut o = Outcome::new();
    let mut worst = 0.0f64;
    for n in 3..=6 {
        let c = Constants::new(n)?;
        let nf = n as f64;
        worst = worst
            .max((c.s * (c.s - 1.0) - c.kappa).abs())
            .max((c.s - (nf + 2.0) / 2.0).abs())
            .max((c.beta - (nf - 2.0) / 2.0).abs())
            .max((c.s_const - (nf - 2.0) / 2.0).abs());
    }
    o.require("max_defect", worst, worst == 0.0);
    Ok(o)
}

fn c2_profile() -> Result<Outcome> {
    let mut o = Outcome::new();
    for n in [3usize, 4] {
        let mut errs = Vec::new();
        for nodes in [500, 1000, 2000] {
            let p = profile(n, FRAC_PI_2, nodes)?;
            let e = p.grid().nodes().iter().zip(p.rho()).fold(0.0f64, |m, (x, r)| m.max((r - x.cos()).abs()));
            errs.push(e);
        }
        let order = (errs[0] / errs[1]).log2().min((errs[1] / errs[2]).log2());
        o.require(&format!("n{n}_sup_error"), errs[2], errs[2] <= 1e-6);
        o.require(&format!("n{n}_order"), order, order >= 1.8);
    }
    Ok(o)
}

fn c3_slope() -> Result<Outcome> {
    let mut o = Outcome::new();
    for (label, cap) in [("pi_3", PI / 3.0), ("pi_2", FRAC_PI_2), ("2pi_3", 2.0 * PI / 3.0)] {
        let p = profile(3, cap, 2000)?;
        let d = (p.boundary_slope().abs() - 1.0).abs();
        o.require(&format!("slope_defect_{label}"), d, d <= 1e-3);
    }
    Ok(o)
}

fn c4_indicial() -> Result<Outcome> {
    let mut o = Outcome::new();
    for n in [3usize, 4] {
        let mut g = Vec::new();
        let mut slope = 0.0;
        for nodes in [500, 1000, 2000] {
            let sp = compute_spectrum(&profile(n, FRAC_PI_2, nodes)?, 2)?;
            g.push(sp.gammas()[0]);
            slope = sp.eigen_decay_slope(1)?;
        }
        let extrapolated = (4.0 * g[2] - g[1]) / 3.0;
        let s = Constants::new(n)?.s;
        let e = (extrapolated - n as f64).abs();
        o.metric(&format!("n{n}_gamma1"), extrapolated);
        o.require(&format!("n{n}_gamma1_error"), e, e <= 1e-3);
        o.require(&format!("n{n}_decay_slope_error"), (slope - s).abs(), (slope - s).abs() <= 0.05);
    }
    Ok(o)
}

fn c5_index_set(seed: u64) -> Result<Outcome> {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let len = rng.gen_range(1..=4);
        let mut g: Vec<f64> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    rng.gen_range(2u32..=12) as f64 * 0.25
                } else {
                    rng.gen_range(0.5..3.0)
                }
            })
            .collect();
        g.sort_by(f64::total_cmp);
        let cutoff = 2.0 * g[0] + rng.gen_range(0.0..3.0);
        let chain = build_index_chain(&g, cutoff, 1e-9)?;
        if chain.signature() != exhaustive_signature(&g, cutoff, 1e-9) {
            mismatches += 1;
        }
    }
    o.require("mismatches", mismatches as f64, mismatches == 0);
    Ok(o)
}

fn c6_mode_ode() -> Result<Outcome> {
    let mut o = Outcome::new();
    let (t0, h) = (1.0, 0.01);
    let ts: Vec<f64> = (0..=1000).map(|j| t0 + j as f64 * h).collect();
    let f: Vec<f64> = ts.iter().map(|t| (-2.0 * t).exp()).collect();
    let v = solve_mode_ode(1.0, &f, t0, h)?;
    let e = ts
        .iter()
        .zip(&v)
        .fold(0.0f64, |m, (t, x)| {
            let want = (-2.0 * t).exp() / 3.0;
            m.max(((x - want) / want).abs())
        });
    o.require("relative_error", e, e <= 1e-8);
    Ok(o)
}

fn hemisphere_spectrum(nodes: usize, count: usize) -> Result<Spectrum> {
    compute_spectrum(&profile(3, FRAC_PI_2, nodes)?, count)
}

fn c7_linear(seed: u64) -> Result<Outcome> {
    let mut o = Outcome::new();
    let sp = hemisphere_spectrum(200, 6)?;
    let chain = build_index_chain(sp.gammas(), 12.0, 1e-6)?;
    let solver = CylinderSolver::new(&sp)?;
    let s = sp.operator().constants().s;
    let rho = sp.operator().rho().to_vec();
    let nodes = sp.grid().nodes().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7);
    let t0 = 1.0;
    let (mut worst, mut worst_lin) = (0.0f64, 0.0f64);
    let mut drawn = 0;
    while drawn < 10 {
        let mu: f64 = rng.gen_range(sp.gammas()[0] + 0.3..10.0);
        let far_chain = chain.values().iter().all(|v| (v - mu).abs() >= 0.1);
        let far_gamma = sp.gammas().iter().all(|g| (g - mu).abs() >= 0.3);
        if !(far_chain && far_gamma) {
            continue;
        }
        drawn += 1;
        let len = truncation_length(mu, sp.gammas())?;
        let cg = CylinderGrid::build(sp.grid().clone(), t0, t0 + len, 0.02)?;
        let field = |a: f64, b: f64| -> Vec<f64> {
            rho.iter().zip(&nodes).map(|(r, p)| r.powf(s) * (1.0 + a * (b * p).sin())).collect()
        };
        let env = |t: f64| (-mu * t).exp() * (1.0 - (-2.0 * (t - t0)).exp()).powi(2);
        let g1 = field(rng.gen_range(-0.5..0.5), rng.gen_range(1.0..4.0));
        let g2 = field(rng.gen_range(-0.5..0.5), rng.gen_range(1.0..4.0));
        let vstar = CylinderField::separable(cg.clone(), env, &g1);
        let f = apply_cyl_operator(sp.operator(), &vstar)?;
        let (v, _) = solver.invert(&chain, &f, mu)?;
        let spec = WeightedNormSpec::new(mu, s, 0)?;
        let end = trusted_rows(&cg);
        let err = weighted_norm_window(&v.add_scaled(-1.0, &vstar)?, &spec, &rho, 0, end)
            / weighted_norm_window(&vstar, &spec, &rho, 0, end);
        worst = worst.max(err);

        let f2 = CylinderField::separable(cg.clone(), |t| (-mu * t).exp(), &g2);
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let (v2, _) = solver.invert(&chain, &f2, mu)?;
        let (vc, _) = solver.invert(&chain, &f.scaled(a).add_scaled(b, &f2)?, mu)?;
        let sum = v.scaled(a).add_scaled(b, &v2)?;
        worst_lin = worst_lin.max(vc.add_scaled(-1.0, &sum)?.max_abs() / vc.max_abs());
    }
    o.require("recovery_error", worst, worst <= 1e-4);
    o.require("superposition_defect", worst_lin, worst_lin <= 1e-9);
    Ok(o)
}

fn c8_cancellation() -> Result<Outcome> {
    let mut o = Outcome::new();
    let sp = compute_spectrum(&profile(3, 2.0 * PI / 5.0, 300)?, 8)?;
    let chain = build_index_chain(sp.gammas(), 14.0, 1e-6)?;
    let g1 = sp.gammas()[0];
    let mu = 2.0 * g1 + 0.25;
    let resonant = chain.entries_between(0.0, mu).filter(|e| e.resonant).count();
    o.require("resonances_below_mu", resonant as f64, resonant == 0);
    let mut c = vec![0.0; chain.k1];
    c[0] = 0.1;
    let exp = correct_to_order(&free_data_modes(&sp, &chain, &c)?, &chain, mu)?;
    let rep = assumption_check(&exp, mu, (1.0, 4.0))?;
    let rate = rep.residual_rate.unwrap_or(f64::NAN);
    o.require("residual_rate_minus_mu", rate - mu, rate >= mu - 0.05);
    let rho = sp.operator().rho();
    let mut worst = 0.0f64;
    for t in [1.0, 2.0] {
        let sym = exp.nonlinear_symbol_at(t)?;
        let direct = nonlinear_part(&exp.xi(), exp.evaluate(t, false).values(), sp.operator().constants())?;
        let scale = direct.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for k in (0..rho.len()).filter(|&k| rho[k] > 0.05) {
            worst = worst.max((sym.values()[k] - direct[k]).abs() / scale);
        }
    }
    o.require("symbol_relative_difference", worst, worst <= 1e-6);
    Ok(o)
}

fn c9_contraction(pipe: &mut Pipeline) -> Result<Outcome> {
    let mut o = Outcome::new();
    let mu = pipe.config().mu;
    let slack = pipe.config().tolerance("rate_slack");
    let bound = pipe.config().tolerance("residual");
    let s = pipe.profile()?.constants().s;
    let rep = &pipe.solution()?.report;
    o.require("converged", rep.converged as u8 as f64, rep.converged);
    o.require("lambda", rep.lambda, rep.lambda <= 0.9);
    o.require("final_residual", rep.final_residual, rep.final_residual <= bound);
    let rate = rep.decay_fit.rate.unwrap_or(f64::NAN);
    o.require("decay_rate", rate, rate >= mu - slack);
    let slope = rep.rho_slope.unwrap_or(f64::NAN);
    o.require("rho_slope", slope, (slope - s).abs() <= 0.1);
    o.metric("t0_used", rep.t0_used);
    o.note = format!("lambda = {:.3e}", rep.lambda);
    Ok(o)
}

fn c10_oracle(pipe: &mut Pipeline) -> Result<Outcome> {
    let mut o = Outcome::new();
    let length = pipe.config().oracle_length;
    let bound = pipe.config().tolerance("oracle");
    let v = pipe.solution()?.v();
    let p = pipe.profile()?.clone();
    let sp = pipe.spectrum()?.clone();
    let (d, newton) = oracle_difference(&p, &sp, &v, length)?;
    o.require("relative_difference", d, d <= bound);
    o.metric("newton_iterations", newton.iterations as f64);
    Ok(o)
}

fn c11_steering(pipe: &mut Pipeline) -> Result<Outcome> {
    let mut o = Outcome::new();
    let cfg = pipe.config().clone();
    let Some(&c1) = cfg.c.first().filter(|c| **c != 0.0) else {
        return Err(Error::Precondition("steering needs a nonzero c_1".into()));
    };
    let mut half = cfg.clone();
    half.c[0] = c1 / 2.0;
    let mut other = Pipeline::new(&half, None);
    let a = pipe.solution()?.clone();
    let b = other.solution()?;
    let sp = pipe.spectrum()?;
    let g1 = sp.gammas()[0];
    let (ga, gb) = (a.w.grid(), b.w.grid());
    let t0 = ga.t0().max(gb.t0());
    let mut worst = 0.0f64;
    let window = (t0 + 1.0, t0 + 3.0);
    for j in 0..ga.nt() {
        let t = ga.t(j);
        if t < window.0 - 1e-12 || t > window.1 + 1e-12 {
            continue;
        }
        let jb = ((t - gb.t0()) / gb.h()).round() as usize;
        if (gb.t(jb) - t).abs() > 1e-9 {
            return Err(Error::Shape("steering runs use different t grids".into()));
        }
        let va: Vec<f64> = a.vhat.row(j).iter().zip(a.w.row(j)).map(|(x, y)| x + y).collect();
        let vb: Vec<f64> = b.vhat.row(jb).iter().zip(b.w.row(jb)).map(|(x, y)| x + y).collect();
        let d: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| x - y).collect();
        let proj = sp.operator().dot(sp.mode(0), &d);
        let want = (c1 - c1 / 2.0) * (-g1 * t).exp();
        worst = worst.max((proj / want - 1.0).abs());
    }
    let tol = cfg.tolerance("steering");
    o.require("leading_mode_relative_error", worst, worst <= tol);
    Ok(o)
}

fn c12_determinism(pipe: &mut Pipeline) -> Result<Outcome> {
    let mut o = Outcome::new();
    let cfg = pipe.config().clone();
    let mut first = Artifacts::default();
    for &stage in Command::Verify.upstream() {
        first.extend(pipe.stage(stage)?.0);
    }
    let mut fresh = Pipeline::new(&cfg, None);
    let mut second = Artifacts::default();
    for &stage in Command::Verify.upstream() {
        second.extend(fresh.stage(stage)?.0);
    }
    let differing: Vec<&String> = first
        .files
        .iter()
        .filter(|(k, v)| second.files.get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    o.metric("artifacts_compared", first.files.len() as f64);
    o.require("artifacts_differing", differing.len() as f64, differing.is_empty() && first.files.len() == second.files.len());
    Ok(o)
}

/// Run every criterion. Errors inside a criterion fail that row only.
pub fn run_suite(pipe: &mut Pipeline) -> (SuiteReport, Vec<String>) {
    let seed = pipe.config().seed;
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for (i, name) in CRITERIA.iter().enumerate() {
        let start = Instant::now();
        let out = match i + 1 {
            1 => c1_constants(),
            2 => c2_profile(),
            3 => c3_slope(),
            4 => c4_indicial(),
            5 => c5_index_set(seed),
            6 => c6_mode_ode(),
            7 => c7_linear(seed),
            8 => c8_cancellation(),
            9 => c9_contraction(pipe),
            10 => c10_oracle(pipe),
            11 => c11_steering(pipe),
            _ => c12_determinism(pipe),
        };
        let row = match out {
            Ok(o) => CriterionResult {
                id: i + 1,
                name: name.to_string(),
                passed: o.passed,
                metrics: o.metrics,
                note: o.note,
            },
            Err(e) => CriterionResult {
                id: i + 1,
                name: name.to_string(),
                passed: false,
                metrics: BTreeMap::new(),
                note: e.to_string(),
            },
        };
        timings.push(format!("criterion {:>2}: {:.2} s", i + 1, start.elapsed().as_secs_f64()));
        rows.push(row);
    }
    (SuiteReport { rows, seed }, timings)
}

pub(super) fn suite_artifacts(pipe: &mut Pipeline) -> Result<(Artifacts, Option<Error>)> {
    let (report, timings) = run_suite(pipe);
    let hash = pipe.config_hash().to_string();
    let mut a = Artifacts::default();
    a.json(
        &hash,
        "suite.json",
        json!({"seed": report.seed, "passed": report.passed(), "rows": report.rows}),
    );
    let mut csv = String::from("id,name,passed\n");
    for r in &report.rows {
        csv.push_str(&format!("{},{},{}\n", r.id, r.name, r.passed));
    }
    a.csv(&hash, "suite.csv", &csv);
    pipe.summary = report.table().lines().map(String::from).collect();
    pipe.notes.extend(timings);
    let failed: Vec<String> = report.rows.iter().filter(|r| !r.passed).map(|r| r.id.to_string()).collect();
    let failure = (!failed.is_empty()).then(|| Error::Oracle(format!("failed criteria: {}", failed.join(", "))));
    Ok((a, failure))
}

/// Convenience for callers that only need the table.
pub fn suite(cfg: &RunConfig) -> SuiteReport {
    run_suite(&mut Pipeline::new(cfg, None)).0
}
