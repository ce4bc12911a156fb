//! Run configuration, the staged pipeline behind the command line, artifact
//! persistence with a content-addressed cache, and the acceptance suite.

mod cache;
mod config;
pub mod suite;

pub use cache::{write_atomic, Cache, Lookup};
pub use config::{hash_value, parse_config, RunConfig, TOLERANCE_DEFAULTS};

use crate::contraction::{
    direct_solve_oracle, reconstruct_cone_solution, PicardOptions, PicardSolution,
};
use crate::cylinder::{trusted_rows, CylinderField, CylinderGrid};
use crate::error::{Error, Result};
use crate::expansion::{
    assumption_check, correct_to_order, free_data_modes, nonlinear_residual_expansion, snap_resonances, Expansion,
};
use crate::grid::AngularGrid;
use crate::index_set::{build_index_chain, IndexChain};
use crate::profile::{blowup_rate_check, solve_profile, BoundaryProfile, ProfileOptions};
use crate::spectrum::{compute_spectrum, Spectrum};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Command {
    Profile,
    Spectrum,
    Indexset,
    Expand,
    Solve,
    Verify,
    Suite,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Profile,
        Command::Spectrum,
        Command::Indexset,
        Command::Expand,
        Command::Solve,
        Command::Verify,
        Command::Suite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Profile => "profile",
            Command::Spectrum => "spectrum",
            Command::Indexset => "indexset",
            Command::Expand => "expand",
            Command::Solve => "solve",
            Command::Verify => "verify",
            Command::Suite => "suite",
        }
    }

    pub fn parse(name: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Configuration fields the stage output depends on.
    fn fields(self) -> &'static [&'static str] {
        const PROFILE: &[&str] = &["n", "phi_max", "node_count", "grading_exponent", "tolerances"];
        const SPECTRUM: &[&str] = &["n", "phi_max", "node_count", "grading_exponent", "tolerances", "eigen_count"];
        const INDEXSET: &[&str] = &[
            "n", "phi_max", "node_count", "grading_exponent", "tolerances", "eigen_count", "cutoff", "epsilon_res",
            "gammas",
        ];
        const EXPAND: &[&str] = &[
            "n", "phi_max", "node_count", "grading_exponent", "tolerances", "eigen_count", "cutoff", "epsilon_res",
            "gammas", "mu", "c", "snap_resonances", "t0",
        ];
        const SOLVE: &[&str] = &[
            "n", "phi_max", "node_count", "grading_exponent", "tolerances", "eigen_count", "cutoff", "epsilon_res",
            "gammas", "mu", "c", "snap_resonances", "t0", "t_max", "dt",
        ];
        const VERIFY: &[&str] = &[
            "n", "phi_max", "node_count", "grading_exponent", "tolerances", "eigen_count", "cutoff", "epsilon_res",
            "gammas", "mu", "c", "snap_resonances", "t0", "t_max", "dt", "oracle_length",
        ];
        const SUITE: &[&str] = &[
            "n", "phi_max", "node_count", "grading_exponent", "tolerances", "eigen_count", "cutoff", "epsilon_res",
            "gammas", "mu", "c", "snap_resonances", "t0", "t_max", "dt", "oracle_length", "seed",
        ];
        match self {
            Command::Profile => PROFILE,
            Command::Spectrum => SPECTRUM,
            Command::Indexset => INDEXSET,
            Command::Expand => EXPAND,
            Command::Solve => SOLVE,
            Command::Verify => VERIFY,
            Command::Suite => SUITE,
        }
    }

    fn upstream(self) -> &'static [Command] {
        use Command::*;
        match self {
            Profile => &[Profile],
            Spectrum => &[Profile, Spectrum],
            Indexset => &[Profile, Spectrum, Indexset],
            Expand => &[Profile, Spectrum, Indexset, Expand],
            Solve => &[Profile, Spectrum, Indexset, Expand, Solve],
            Verify => &[Profile, Spectrum, Indexset, Expand, Solve, Verify],
            Suite => &[Suite],
        }
    }
}

/// Named text artifacts of one run, each stamped with the config hash.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Artifacts {
    pub files: BTreeMap<String, String>,
}

impl Artifacts {
    fn json(&mut self, hash: &str, name: &str, mut value: Value) {
        if let Some(m) = value.as_object_mut() {
            m.insert("config_hash".into(), hash.into());
        }
        let text = serde_json::to_string_pretty(&value).expect("json serializes") + "\n";
        self.files.insert(name.to_string(), text);
    }

    fn csv(&mut self, hash: &str, name: &str, body: &str) {
        self.files.insert(name.to_string(), format!("# config_hash={hash}\n{body}"));
    }

    fn extend(&mut self, other: Artifacts) {
        self.files.extend(other.files);
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for (name, text) in &self.files {
            write_atomic(&dir.join(name), text.as_bytes())?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct CommandOutput {
    pub artifacts: Artifacts,
    pub warnings: Vec<String>,
    /// Timing and progress notes for stderr; never part of the artifacts.
    pub notes: Vec<String>,
    /// Human-readable summary for stdout.
    pub summary: Vec<String>,
    /// None on success; otherwise the error that ended the run.
    pub error: Option<Error>,
}

impl CommandOutput {
    pub fn exit_code(&self) -> i32 {
        self.error.as_ref().map_or(0, Error::exit_code)
    }
}


/// Lazily computed pipeline objects for one configuration.
pub struct Pipeline<'a> {
    cfg: &'a RunConfig,
    hash: String,
    cache: Option<Cache>,
    warnings: Vec<String>,
    notes: Vec<String>,
    summary: Vec<String>,
    profile: Option<BoundaryProfile>,
    spectral: Option<(Spectrum, IndexChain)>,
    expansion: Option<Expansion>,
    solution: Option<PicardSolution>,
}

fn f64s(v: &Value) -> Option<Vec<f64>> {
    v.as_array()?.iter().map(Value::as_f64).collect()
}

/// Largest relative difference between two fields on the nodes with rho > 0.1.
pub fn interior_relative_difference(a: &CylinderField, b: &CylinderField, rho: &[f64]) -> Result<f64> {
    a.check(b)?;
    let mut worst = 0.0f64;
    for j in 0..a.grid().nt() {
        for k in (0..rho.len()).filter(|&k| rho[k] > 0.1) {
            worst = worst.max(((a.row(j)[k] - b.row(j)[k]) / b.row(j)[k]).abs());
        }
    }
    Ok(worst)
}

/// Newton solve on [t0, t0 + length] with end data taken from `v`; returns the
/// relative interior difference and the Newton report.
pub fn oracle_difference(
    profile: &BoundaryProfile,
    spectrum: &Spectrum,
    v: &CylinderField,
    length: f64,
) -> Result<(f64, crate::contraction::NewtonReport)> {
    let g = v.grid();
    let t0 = g.t0();
    let og = CylinderGrid::build(g.angular().clone(), t0, (t0 + length).min(g.t_max()), g.h())?;
    let rows = og.nt();
    let ends = CylinderField::new(og, v.values()[..rows * g.nphi()].to_vec())?;
    let (u, report) = direct_solve_oracle(profile, spectrum.operator(), &ends)?;
    Ok((interior_relative_difference(&u, &ends, profile.rho())?, report))
}

impl<'a> Pipeline<'a> {
    pub fn new(cfg: &'a RunConfig, cache: Option<Cache>) -> Self {
        Pipeline {
            cfg,
            hash: cfg.hash(),
            cache,
            warnings: Vec::new(),
            notes: Vec::new(),
            summary: Vec::new(),
            profile: None,
            spectral: None,
            expansion: None,
            solution: None,
        }
    }

    pub fn config(&self) -> &RunConfig {
        self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn lookup(&mut self, stage: &str, key: &str) -> Option<BTreeMap<String, String>> {
        match self.cache.as_ref()?.get(stage, key) {
            Lookup::Hit(p) => Some(p),
            Lookup::Miss => None,
            Lookup::Corrupt(why) => {
                self.warnings.push(format!("corrupt cache entry, recomputing: {why}"));
                None
            }
        }
    }

    fn store(&mut self, stage: &str, key: &str, payload: &BTreeMap<String, String>) {
        if let Some(c) = &self.cache {
            if let Err(e) = c.put(stage, key, payload) {
                self.warnings.push(format!("could not write cache entry for {stage}: {e}"));
            }
        }
    }

    pub fn profile(&mut self) -> Result<&BoundaryProfile> {
        if self.profile.is_none() {
            let p = self.compute_profile().map_err(|e| e.in_stage("profile"))?;
            self.profile = Some(p);
        }
        Ok(self.profile.as_ref().unwrap())
    }

    fn compute_profile(&mut self) -> Result<BoundaryProfile> {
        let cfg = self.cfg;
        let grid = AngularGrid::build(cfg.n, cfg.phi_max, cfg.node_count, cfg.grading_exponent)?;
        let key = cfg.stage_key("profile-data", Command::Profile.fields());
        let cached = self.lookup("profile-data", &key).and_then(|p| {
            let v: Value = serde_json::from_str(p.get("profile")?).ok()?;
            let rho = f64s(&v["rho"])?;
            let res = v["residual_norm"].as_f64()?;
            let it = v["iterations"].as_u64()? as usize;
            BoundaryProfile::from_rho_with(grid.clone(), rho, res, it).ok()
        });
        if let Some(p) = cached {
            return Ok(p);
        }
        let opts = ProfileOptions {
            tolerance: cfg.tolerance("profile"),
            ..ProfileOptions::default()
        };
        let p = solve_profile(&grid, &opts)?;
        let data = json!({"rho": p.rho(), "residual_norm": p.residual_norm(), "iterations": p.iterations()});
        let payload = BTreeMap::from([("profile".to_string(), data.to_string())]);
        self.store("profile-data", &key, &payload);
        Ok(p)
    }

    fn spectral(&mut self) -> Result<&(Spectrum, IndexChain)> {
        if self.spectral.is_none() {
            let count = self.cfg.eigen_count;
            let sp = compute_spectrum(self.profile()?, count).map_err(|e| e.in_stage("spectrum"))?;
            let cfg = self.cfg;
            let gammas = cfg.gammas.clone().unwrap_or_else(|| sp.gammas().to_vec());
            let build = || -> Result<(Spectrum, IndexChain)> {
                let chain = build_index_chain(&gammas, cfg.cutoff, cfg.epsilon_res)?;
                if cfg.snap_resonances && cfg.gammas.is_none() {
                    snap_resonances(&sp, &chain)
                } else {
                    Ok((sp.clone(), chain))
                }
            };
            let pair = build().map_err(|e| e.in_stage("indexset"))?;
            self.spectral = Some(pair);
        }
        Ok(self.spectral.as_ref().unwrap())
    }

    pub fn spectrum(&mut self) -> Result<&Spectrum> {
        Ok(&self.spectral()?.0)
    }

    pub fn chain(&mut self) -> Result<&IndexChain> {
        Ok(&self.spectral()?.1)
    }

    /// Free data padded with zeros to k1 entries.
    pub fn free_data(&mut self) -> Result<Vec<f64>> {
        let k1 = self.chain()?.k1;
        let c = &self.cfg.c;
        if c.len() > k1 {
            return Err(Error::Precondition(format!(
                "{} free-data coefficients given but only k1 = {k1} modes are free",
                c.len()
            )));
        }
        let mut v = c.clone();
        v.resize(k1, 0.0);
        Ok(v)
    }

    pub fn expansion(&mut self) -> Result<&Expansion> {
        if self.expansion.is_none() {
            let e = self.compute_expansion().map_err(|e| e.in_stage("expand"))?;
            self.expansion = Some(e);
        }
        Ok(self.expansion.as_ref().unwrap())
    }

    fn compute_expansion(&mut self) -> Result<Expansion> {
        if self.cfg.gammas.is_some() {
            return Err(Error::Precondition(
                "a gammas override only applies to the indexset command".into(),
            ));
        }
        let c = self.free_data()?;
        let mu = self.cfg.mu;
        let (sp, chain) = self.spectral()?;
        let m = chain.membership(mu)?;
        if m.in_set {
            return Err(Error::Precondition(format!(
                "mu = {mu} lies in the index set (nearest value {}); choose a different mu",
                m.nearest
            )));
        }
        let free = free_data_modes(sp, chain, &c)?;
        Ok(correct_to_order(&free, chain, mu)?.with_reference_time(self.cfg.t0))
    }

    pub fn solution(&mut self) -> Result<&PicardSolution> {
        if self.solution.is_none() {
            let exp = self.expansion()?.clone();
            let chain = self.chain()?.clone();
            let cfg = self.cfg;
            let opts = PicardOptions {
                dt: cfg.dt,
                length: cfg.t_max.map(|t| t - cfg.t0),
                tolerance: cfg.tolerance("picard"),
                ..PicardOptions::default()
            };
            let sol = crate::contraction::picard_solve(&exp, &chain, cfg.mu, cfg.t0, &opts)
                .map_err(|e| e.in_stage("solve"))?;
            self.solution = Some(sol);
        }
        Ok(self.solution.as_ref().unwrap())
    }

    /// Artifacts of one stage, from the cache when possible. A failed check
    /// is returned next to the artifacts so that they can still be written.
    pub fn stage(&mut self, cmd: Command) -> Result<(Artifacts, Option<Error>)> {
        let key = self.cfg.stage_key(cmd.name(), cmd.fields());
        let cacheable = !matches!(cmd, Command::Suite | Command::Verify);
        if cacheable {
            if let Some(files) = self.lookup(cmd.name(), &key) {
                self.summary.push(format!("{}: cached", cmd.name()));
                return Ok((Artifacts { files }, None));
            }
        }
        let (art, failure) = match cmd {
            Command::Profile => (self.profile_artifacts(), None),
            Command::Spectrum => (self.spectrum_artifacts(), None),
            Command::Indexset => (self.indexset_artifacts(), None),
            Command::Expand => (self.expand_artifacts(), None),
            Command::Solve => (self.solve_artifacts(), None),
            Command::Verify => match self.verify_artifacts() {
                Ok((a, f)) => (Ok(a), f),
                Err(e) => (Err(e), None),
            },
            Command::Suite => match suite::suite_artifacts(self) {
                Ok((a, f)) => (Ok(a), f),
                Err(e) => (Err(e), None),
            },
        };
        let art = art.map_err(|e| e.in_stage(cmd.name()))?;
        if cacheable {
            self.store(cmd.name(), &key, &art.files);
        }
        Ok((art, failure.map(|e| e.in_stage(cmd.name()))))
    }

    fn profile_artifacts(&mut self) -> Result<Artifacts> {
        let hash = self.hash.clone();
        let p = self.profile()?;
        let blowup = blowup_rate_check(p)?;
        let (lo, hi) = p.comparability();
        let mut a = Artifacts::default();
        a.csv(&hash, "profile.csv", &p.to_csv());
        a.json(
            &hash,
            "profile.json",
            json!({
                "summary": p.summary(),
                "constants": p.constants(),
                "iterations": p.iterations(),
                "blowup": blowup,
                "comparability": {"min": lo, "max": hi},
            }),
        );
        let line = format!(
            "profile: boundary slope {:.9}, residual {:.3e}",
            p.boundary_slope(),
            p.residual_norm()
        );
        self.summary.push(line);
        Ok(a)
    }

    fn spectrum_artifacts(&mut self) -> Result<Artifacts> {
        let hash = self.hash.clone();
        let sp = self.spectrum()?;
        let slopes: Vec<Option<f64>> = (1..=sp.count()).map(|i| sp.eigen_decay_slope(i).ok()).collect();
        let multiple: Vec<bool> = (0..sp.count()).map(|i| sp.is_multiple(i)).collect();
        let mut a = Artifacts::default();
        a.json(
            &hash,
            "spectrum.json",
            json!({"summary": sp.summary(), "decay_slopes": slopes, "multiple": multiple}),
        );
        a.csv(&hash, "modes.csv", &sp.modes_csv());
        let line = format!("spectrum: gamma_1 = {:.9}", sp.gammas()[0]);
        self.summary.push(line);
        Ok(a)
    }

    fn indexset_artifacts(&mut self) -> Result<Artifacts> {
        let hash = self.hash.clone();
        let mu = self.cfg.mu;
        let overridden = self.cfg.gammas.is_some();
        let chain = self.chain()?;
        let membership = chain.membership(mu).ok();
        let resonant = chain.entries.iter().any(|e| e.resonant);
        let mut a = Artifacts::default();
        a.json(
            &hash,
            "chain.json",
            json!({
                "chain": chain,
                "resonant": resonant,
                "gammas_overridden": overridden,
                "mu_membership": membership,
            }),
        );
        let line = format!(
            "indexset: {} values up to {}, k1 = {}, resonant = {resonant}",
            chain.entries.len(),
            chain.cutoff,
            chain.k1
        );
        self.summary.push(line);
        Ok(a)
    }

    fn expand_artifacts(&mut self) -> Result<Artifacts> {
        let hash = self.hash.clone();
        let (mu, t0) = (self.cfg.mu, self.cfg.t0);
        let exp = self.expansion()?;
        let cert = nonlinear_residual_expansion(exp, mu)?.certificate;
        let assumptions = assumption_check(exp, mu, (t0, t0 + 3.0))?;
        let mut warnings: Vec<String> = exp.warnings().to_vec();
        if !assumptions.passes {
            warnings.push(format!("smallness assumptions fail at t0 = {t0}; solve will move t0"));
        }
        let mut a = Artifacts::default();
        a.json(
            &hash,
            "expansion.json",
            json!({
                "expansion": exp.to_json(),
                "certificate": cert,
                "assumptions": assumptions,
            }),
        );
        a.csv(&hash, "expansion_coefficients.csv", &exp.coefficients_csv());
        let line = format!(
            "expand: {} terms, order achieved {}",
            exp.terms().len(),
            exp.order_achieved().map_or("none".into(), |o| format!("{o:.6}"))
        );
        self.warnings.extend(warnings);
        self.summary.push(line);
        Ok(a)
    }

    fn solve_artifacts(&mut self) -> Result<Artifacts> {
        let hash = self.hash.clone();
        let c = self.free_data()?;
        let chain = serde_json::to_value(self.chain()?).expect("chain serializes");
        let cfg = self.cfg;
        self.solution()?;
        let sol = self.solution.as_ref().unwrap();
        let p = self.profile.as_ref().unwrap();
        let rep = &sol.report;
        let v = sol.v();
        let mut a = Artifacts::default();
        a.json(
            &hash,
            "manifest.json",
            json!({
                "config": cfg.canonical(),
                "version": env!("CARGO_PKG_VERSION"),
                "seed": cfg.seed,
                "chain": chain,
                "mu": cfg.mu,
                "c": c,
                "t0_used": rep.t0_used,
                "lambda": rep.lambda,
                "final_residual": rep.final_residual,
                "decay_fit": rep.decay_fit,
                "rho_slope": rep.rho_slope,
                "converged": rep.converged,
            }),
        );
        a.json(&hash, "contraction.json", serde_json::to_value(rep).expect("report serializes"));
        a.csv(&hash, "solution.csv", &solution_csv(sol));
        let cone = reconstruct_cone_solution(&v, p)?;
        let phis: Vec<f64> = (0..4).map(|i| cfg.phi_max * i as f64 / 4.0).collect();
        a.csv(&hash, "cone_samples.csv", &cone.samples_csv(9, &phis)?);
        let line = format!(
            "solve: t0 = {}, lambda = {:.3e}, residual = {:.3e}, rate = {}",
            rep.t0_used,
            rep.lambda,
            rep.final_residual,
            rep.decay_fit.rate.map_or("none".into(), |r| format!("{r:.6}"))
        );
        self.summary.push(line);
        if !rep.assumptions.passes {
            self.warnings.push("smallness assumptions did not pass at the final t0".into());
        }
        Ok(a)
    }

    /// Independent checks of the fixed point; failures are returned as an
    /// oracle error next to the report.
    pub fn verify_checks(&mut self) -> Result<Vec<Check>> {
        let cfg = self.cfg;
        self.solution()?;
        let sol = self.solution.as_ref().unwrap();
        let p = self.profile.as_ref().unwrap();
        let sp = &self.spectral.as_ref().unwrap().0;
        let rep = &sol.report;
        let s = p.constants().s;
        let (oracle, newton) = oracle_difference(p, sp, &sol.v(), cfg.oracle_length)?;
        let mut checks = vec![
            Check::at_most("lambda", rep.lambda, 0.9),
            Check::at_most("final_residual", rep.final_residual, cfg.tolerance("residual")),
            Check::at_least(
                "decay_rate",
                rep.decay_fit.rate.unwrap_or(f64::INFINITY),
                cfg.mu - cfg.tolerance("rate_slack"),
            ),
            Check::at_most("oracle_difference", oracle, cfg.tolerance("oracle")),
        ];
        checks[0].passed &= rep.converged;
        if let Some(slope) = rep.rho_slope {
            checks.push(Check::at_most("rho_slope_error", (slope - s).abs(), 0.1));
        }
        checks.push(Check {
            name: "newton_iterations".into(),
            value: newton.iterations as f64,
            bound: f64::NAN,
            passed: true,
        });
        Ok(checks)
    }

    fn verify_artifacts(&mut self) -> Result<(Artifacts, Option<Error>)> {
        let hash = self.hash.clone();
        let checks = self.verify_checks()?;
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        let mut a = Artifacts::default();
        a.json(&hash, "verify.json", json!({"checks": checks, "passed": failed.is_empty()}));
        for c in &checks {
            let bound = if c.bound.is_nan() { String::new() } else { format!(" (bound {:e})", c.bound) };
            self.summary.push(format!(
                "verify: {} {} = {:.6e}{bound}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
            ));
        }
        let failure = (!failed.is_empty()).then(|| Error::Oracle(format!("failed checks: {}", failed.join(", "))));
        Ok((a, failure))
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, bound: f64) -> Check {
        Check {
            name: name.into(),
            value,
            bound,
            passed: value <= bound,
        }
    }

    fn at_least(name: &str, value: f64, bound: f64) -> Check {
        Check {
            name: name.into(),
            value,
            bound,
            passed: value >= bound,
        }
    }
}

/// Long-format samples of v, vhat and w over the trusted window.
fn solution_csv(sol: &PicardSolution) -> String {
    let g = sol.w.grid();
    let rows = trusted_rows(g);
    let row_step = (rows / 120).max(1);
    let col_step = (g.nphi() / 40).max(1);
    let nodes = g.angular().nodes();
    let mut s = String::from("t,phi,v,vhat,w\n");
    for j in (0..rows).step_by(row_step) {
        for k in (0..g.nphi()).step_by(col_step) {
            let (vh, w) = (sol.vhat.row(j)[k], sol.w.row(j)[k]);
            let _ = writeln!(s, "{:e},{:e},{:e},{:e},{:e}", g.t(j), nodes[k], vh + w, vh, w);
        }
    }
    s
}

/// Run one command with every prerequisite stage and collect the artifacts.
/// Errors end the run; the artifacts produced so far are kept and the run is
/// marked incomplete in `status.json`.
pub fn run_command(cmd: Command, cfg: &RunConfig, cache: Option<Cache>) -> CommandOutput {
    let mut pipe = Pipeline::new(cfg, cache);
    let mut artifacts = Artifacts::default();
    let mut error = None;
    let mut last = None;
    for &stage in cmd.upstream() {
        last = Some(stage);
        match pipe.stage(stage) {
            Ok((a, failure)) => {
                artifacts.extend(a);
                if failure.is_some() {
                    error = failure;
                    break;
                }
            }
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    let status = match &error {
        None => json!({"command": cmd.name(), "complete": true}),
        Some(e) => json!({
            "command": cmd.name(),
            "complete": matches!(e.root(), Error::Oracle(_)),
            "failed_stage": last.map(Command::name),
            "error": e.to_string(),
            "exit_code": e.exit_code(),
        }),
    };
    let hash = pipe.hash.clone();
    artifacts.json(&hash, "status.json", status);
    CommandOutput {
        artifacts,
        warnings: pipe.warnings,
        notes: pipe.notes,
        summary: pipe.summary,
        error,
    }
}
