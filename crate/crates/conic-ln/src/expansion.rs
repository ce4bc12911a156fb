//! Poly-exponential expansions omega = sum t^j e^{-gamma t} w(phi) around the
//! boundary profile xi, and their order-by-order correction so that
//! N(xi + omega) decays faster than a prescribed rate.

use crate::cylinder::{shifted_angular_solve, t_derivative, CylinderField, CylinderGrid};
use crate::error::{Error, Result};
use crate::grid::{gradient, AngularField};
use crate::index_set::{build_index_chain, IndexChain};
use crate::linalg::linear_fit;
use crate::spectrum::Spectrum;
use serde::Serialize;
use std::cmp::Ordering;
use std::collections::BTreeMap;

/// Upper bound on the number of (rate, t-power) families kept in a residual.
pub const MAX_FAMILIES: usize = 20_000;
/// Largest Taylor degree used for non-integer exponents p.
pub const MAX_DEGREE: usize = 64;
/// Relative size of the dropped Taylor tail.
pub const SERIES_TOLERANCE: f64 = 1e-16;
/// A family is treated as cancelled when it is this small relative to the
/// sum of the magnitudes that were merged into it.
pub const CANCELLATION_TOLERANCE: f64 = 1e-8;
/// Start of the t range on which the expansion is intended to be used, unless
/// set explicitly.
pub const DEFAULT_REFERENCE_TIME: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct ExpTerm {
    pub gamma: f64,
    pub j: u32,
    pub w: AngularField,
}

impl ExpTerm {
    fn time_factor(&self, t: f64) -> f64 {
        t.powi(self.j as i32) * (-self.gamma * t).exp()
    }

    fn time_factor_dt(&self, t: f64) -> f64 {
        let j = self.j as i32;
        let lead = if j > 0 { j as f64 * t.powi(j - 1) } else { 0.0 };
        (lead - self.gamma * t.powi(j)) * (-self.gamma * t).exp()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StageRecord {
    pub rate: f64,
    pub resonant: bool,
    pub families: usize,
    pub max_power: u32,
    pub forcing_size: f64,
    pub correction_size: f64,
}

#[derive(Clone, Debug)]
pub struct Expansion {
    spectrum: Spectrum,
    terms: Vec<ExpTerm>,
    free_data: Vec<f64>,
    merge_tol: f64,
    t_ref: f64,
    order_achieved: Option<f64>,
    stages: Vec<StageRecord>,
    warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug)]
struct Rate(f64);

impl PartialEq for Rate {
    fn eq(&self, o: &Self) -> bool {
        self.0.total_cmp(&o.0) == Ordering::Equal
    }
}
impl Eq for Rate {}
impl PartialOrd for Rate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Rate {
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.total_cmp(&o.0)
    }
}

#[derive(Clone, Debug)]
struct Family {
    w: Vec<f64>,
    scale: f64,
}

/// Angular coefficients keyed by (rate, t-power), merging rates closer than
/// the tolerance.
#[derive(Clone, Debug)]
struct Families {
    tol: f64,
    map: BTreeMap<Rate, BTreeMap<u32, Family>>,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

impl Families {
    fn new(tol: f64) -> Self {
        Families { tol, map: BTreeMap::new() }
    }

    fn canonical(&self, g: f64) -> f64 {
        self.map
            .range(Rate(g - self.tol)..=Rate(g + self.tol))
            .map(|(r, _)| r.0)
            .min_by(|a, b| (a - g).abs().total_cmp(&(b - g).abs()))
            .unwrap_or(g)
    }

    fn add(&mut self, g: f64, j: u32, coef: f64, w: &[f64]) {
        if coef == 0.0 {
            return;
        }
        let key = Rate(self.canonical(g));
        let fam = self.map.entry(key).or_default().entry(j).or_insert_with(|| Family {
            w: vec![0.0; w.len()],
            scale: 0.0,
        });
        for (a, b) in fam.w.iter_mut().zip(w) {
            *a += coef * b;
        }
        fam.scale += coef.abs() * sup(w);
    }

    fn count(&self) -> usize {
        self.map.values().map(|m| m.len()).sum()
    }

    fn iter(&self) -> impl Iterator<Item = (f64, u32, &Family)> {
        self.map.iter().flat_map(|(r, m)| m.iter().map(move |(j, f)| (r.0, *j, f)))
    }

    /// Families that did not cancel.
    fn significant(&self) -> impl Iterator<Item = (f64, u32, &Family)> {
        self.iter().filter(|(_, _, f)| sup(&f.w) > CANCELLATION_TOLERANCE * f.scale)
    }

    fn product(&self, other: &Families, limit: f64) -> Families {
        let mut out = Families::new(self.tol);
        for (g1, j1, f1) in self.iter() {
            for (g2, j2, f2) in other.iter() {
                let g = g1 + g2;
                if g >= limit {
                    continue;
                }
                let w: Vec<f64> = f1.w.iter().zip(&f2.w).map(|(a, b)| a * b).collect();
                out.add(g, j1 + j2, 1.0, &w);
            }
        }
        out
    }
}

/// Generalized binomial coefficients a_2..a_K of (1 + x)^p, p = (n+2)/(n-2).
pub fn taylor_coeffs(n: usize, k_max: usize) -> Result<Vec<f64>> {
    if n < 3 {
        return Err(Error::Parameter(format!("dimension {n} must be at least 3")));
    }
    if k_max < 2 {
        return Err(Error::Parameter(format!("degree {k_max} must be at least 2")));
    }
    let p = (n as f64 + 2.0) / (n as f64 - 2.0);
    let mut a = p;
    let mut out = Vec::with_capacity(k_max - 1);
    for k in 2..=k_max {
        a *= (p - k as f64 + 1.0) / k as f64;
        out.push(a);
    }
    Ok(out)
}

fn integer_exponent(p: f64) -> Option<usize> {
    let r = p.round();
    ((p - r).abs() < 1e-12 && r >= 1.0).then_some(r as usize)
}

/// Free solutions c_i e^{-gamma_i t} phi_i for the modes below the first
/// combination 2 gamma_1.
pub fn free_data_modes(spectrum: &Spectrum, chain: &IndexChain, c: &[f64]) -> Result<Expansion> {
    if c.len() != chain.k1 {
        return Err(Error::Parameter(format!(
            "{} free-data coefficients given, the index set has k1 = {}",
            c.len(),
            chain.k1
        )));
    }
    if chain.k1 > spectrum.count() {
        return Err(Error::Resolution(format!(
            "k1 = {} exceeds the {} computed eigenpairs",
            chain.k1,
            spectrum.count()
        )));
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parameter("free data must be finite".into()));
    }
    let terms = c
        .iter()
        .enumerate()
        .filter(|(_, &ci)| ci != 0.0)
        .map(|(i, &ci)| ExpTerm {
            gamma: spectrum.gammas()[i],
            j: 0,
            w: AngularField::new(spectrum.grid().clone(), spectrum.mode(i).iter().map(|x| ci * x).collect())
                .expect("shape"),
        })
        .collect();
    let warnings = chain
        .near_resonances
        .iter()
        .map(|r| {
            format!(
                "exponent gamma_{} = {} is within {:.3e} of the combination {}",
                r.single, r.gamma, r.distance, r.combo_value
            )
        })
        .collect();
    Ok(Expansion {
        spectrum: spectrum.clone(),
        terms,
        free_data: c.to_vec(),
        merge_tol: chain.epsilon_res.max(1e-9),
        t_ref: DEFAULT_REFERENCE_TIME,
        order_achieved: None,
        stages: Vec::new(),
        warnings,
    })
}

/// Move every single exponent that the chain marks resonant onto the value of
/// its combination, and rebuild the chain from the moved exponents.
pub fn snap_resonances(spectrum: &Spectrum, chain: &IndexChain) -> Result<(Spectrum, IndexChain)> {
    let m = chain.gammas_in.len();
    if m > spectrum.count()
        || chain
            .gammas_in
            .iter()
            .zip(spectrum.gammas())
            .any(|(a, b)| (a - b).abs() > 1e-12 * b)
    {
        return Err(Error::Parameter("index chain was not built from this spectrum".into()));
    }
    let mut gam = chain.gammas_in.clone();
    let mut targets = Vec::new();
    for e in chain.entries.iter().filter(|e| e.resonant) {
        let Some(cert) = e.certificates.iter().find(|c| c.iter().sum::<u32>() >= 2) else {
            continue;
        };
        let combo: f64 = cert.iter().zip(&gam).map(|(&k, g)| k as f64 * g).sum();
        for &i in &e.singles {
            if gam[i - 1] != combo {
                targets.push((i - 1, combo));
                gam[i - 1] = combo;
            }
        }
    }
    if targets.is_empty() {
        return Ok((spectrum.clone(), chain.clone()));
    }
    let snapped = spectrum.with_snapped_gammas(&targets);
    let rebuilt = build_index_chain(&gam, chain.cutoff, chain.epsilon_res)?;
    Ok((snapped, rebuilt))
}

/// Symbolic residual N(xi + omega) split at the target rate.
#[derive(Clone, Debug)]
pub struct ResidualExpansion {
    /// Families with rate below mu that did not cancel.
    pub below: Vec<ExpTerm>,
    /// Families with rate at least mu.
    pub above: Vec<ExpTerm>,
    pub certificate: RemainderCertificate,
}

#[derive(Clone, Debug, Serialize)]
pub struct RemainderCertificate {
    pub mu: f64,
    pub reference_time: f64,
    pub degree_cap: usize,
    /// sup |omega| / xi for t at least the reference time.
    pub x0: f64,
    /// Bound on the dropped Taylor tail relative to beta(beta+1) xi^p.
    pub series_tail: f64,
    pub above_families: usize,
    /// Bound on the (mu, s-2, 0) weighted norm of the families above mu for
    /// t at least the reference time.
    pub above_bound: f64,
    pub cancelled_families: usize,
}

impl Expansion {
    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }
    pub fn terms(&self) -> &[ExpTerm] {
        &self.terms
    }
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
    pub fn free_data(&self) -> &[f64] {
        &self.free_data
    }
    pub fn order_achieved(&self) -> Option<f64> {
        self.order_achieved
    }
    pub fn stages(&self) -> &[StageRecord] {
        &self.stages
    }
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
    pub fn reference_time(&self) -> f64 {
        self.t_ref
    }

    /// Same expansion with a different start of the intended t range, which
    /// fixes the Taylor degree for non-integer p.
    pub fn with_reference_time(&self, t: f64) -> Expansion {
        let mut e = self.clone();
        e.t_ref = t;
        e
    }

    pub fn xi(&self) -> Vec<f64> {
        let b = self.spectrum.beta();
        self.spectrum.operator().rho().iter().map(|r| r.powf(-b)).collect()
    }

    fn omega_values(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.spectrum.grid().len()];
        for term in &self.terms {
            let f = term.time_factor(t);
            out.iter_mut().zip(term.w.values()).for_each(|(o, w)| *o += f * w);
        }
        out
    }

    /// sup over t in [t, t + 20] and all nodes of |omega| / xi.
    pub fn x0(&self, t: f64) -> f64 {
        let xi = self.xi();
        (0..=200)
            .map(|i| {
                let om = self.omega_values(t + 0.1 * i as f64);
                om.iter().zip(&xi).fold(0.0f64, |m, (o, x)| m.max(o.abs() / x))
            })
            .fold(0.0, f64::max)
    }

    /// Omega sampled on a cylinder grid.
    pub fn omega_on(&self, grid: &std::sync::Arc<CylinderGrid>) -> CylinderField {
        terms_on_grid(&self.terms, grid)
    }

    fn base_families(&self) -> Families {
        let mut f = Families::new(self.merge_tol);
        for t in &self.terms {
            f.add(t.gamma, t.j, 1.0, t.w.values());
        }
        f
    }

    /// L applied to each term with exact t-derivatives.
    fn linear_families(&self, limit: f64) -> Families {
        let op = self.spectrum.operator();
        let beta2 = self.spectrum.beta().powi(2);
        let mut out = Families::new(self.merge_tol);
        let mut lw = vec![0.0; op.len()];
        for t in self.terms.iter().filter(|t| t.gamma < limit) {
            let w = t.w.values();
            op.apply(w, &mut lw);
            let c = t.gamma * t.gamma - beta2;
            let aw: Vec<f64> = lw.iter().zip(w).map(|(l, w)| l + c * w).collect();
            // Scale by the separate magnitudes so that an exact eigenmode
            // registers as cancelled.
            let scale = sup(&lw) + c.abs() * sup(w);
            out.add(t.gamma, t.j, 1.0, &aw);
            let key = Rate(out.canonical(t.gamma));
            if let Some(fam) = out.map.get_mut(&key).and_then(|m| m.get_mut(&t.j)) {
                fam.scale += scale - sup(&aw);
            }
            if t.j >= 1 {
                out.add(t.gamma, t.j - 1, -2.0 * t.gamma * t.j as f64, w);
            }
            if t.j >= 2 {
                out.add(t.gamma, t.j - 2, (t.j * (t.j - 1)) as f64, w);
            }
        }
        out
    }

    fn degree_cap(&self) -> Result<(usize, f64, f64)> {
        let c = self.spectrum.operator().constants();
        let x0 = self.x0(self.t_ref);
        if let Some(p) = integer_exponent(c.p) {
            return Ok((p.max(2), x0, 0.0));
        }
        if !(x0 < 1.0) {
            return Err(Error::Domain(format!(
                "|omega| / xi reaches {x0:.3} at t = {}; the Taylor series of the nonlinearity diverges",
                self.t_ref
            )));
        }
        let a = taylor_coeffs(c.n, MAX_DEGREE + 1)?;
        for k in 2..=MAX_DEGREE {
            let tail = a[k - 1].abs() * x0.powi(k as i32 + 1) / (1.0 - x0);
            if tail <= SERIES_TOLERANCE {
                return Ok((k, x0, tail));
            }
        }
        Err(Error::Range(format!(
            "Taylor degree above {MAX_DEGREE} needed at |omega|/xi = {x0:.3}; increase the reference time"
        )))
    }

    /// Symbolic N(xi + omega) = L omega - beta(beta+1) sum_k a_k xi^{p-k} omega^k
    /// restricted to rates below `limit`.
    fn residual_families(&self, limit: f64, degree: usize) -> Result<Families> {
        let c = self.spectrum.operator().constants();
        let mut out = self.linear_families(limit);
        let base = self.base_families();
        let a = taylor_coeffs(c.n, degree)?;
        let rho = self.spectrum.operator().rho();
        let b = c.beta;
        let mut power = base.clone();
        for k in 2..=degree {
            power = power.product(&base, limit);
            if power.count() > MAX_FAMILIES {
                return Err(Error::Range(format!(
                    "more than {MAX_FAMILIES} residual families at degree {k}; choose a smaller mu"
                )));
            }
            if power.map.is_empty() {
                break;
            }
            let coef = -c.nonlinear_coeff() * a[k - 2];
            if coef == 0.0 {
                continue;
            }
            let ang: Vec<f64> = rho.iter().map(|r| r.powf(-2.0 - b + k as f64 * b)).collect();
            for (g, j, f) in power.iter() {
                let w: Vec<f64> = f.w.iter().zip(&ang).map(|(x, y)| x * y).collect();
                out.add(g, j, coef, &w);
            }
        }
        if out.count() > MAX_FAMILIES {
            return Err(Error::Range(format!("more than {MAX_FAMILIES} residual families; choose a smaller mu")));
        }
        Ok(out)
    }

    fn weighted_sup(&self, w: &[f64], shift: f64) -> f64 {
        let rho = self.spectrum.operator().rho();
        let s = self.spectrum.operator().constants().s;
        let kmax = w.len() - 1;
        (0..kmax).fold(0.0f64, |m, k| m.max(w[k].abs() * rho[k].powf(shift - s)))
    }

    /// Angular samples of omega (optionally plus xi) at time t.
    pub fn evaluate(&self, t: f64, include_xi: bool) -> AngularField {
        let mut v = self.omega_values(t);
        if include_xi {
            v.iter_mut().zip(self.xi()).for_each(|(a, x)| *a += x);
        }
        AngularField::new(self.spectrum.grid().clone(), v).expect("shape")
    }

    /// N(xi + omega) at time t: the angular operator applied to each term with
    /// exact t-derivatives plus the nonlinearity evaluated at each node.
    pub fn residual_at(&self, t: f64) -> Result<AngularField> {
        let lin = self.linear_families(f64::INFINITY);
        let mut out = vec![0.0; self.spectrum.grid().len()];
        for (g, j, f) in lin.iter() {
            let tf = t.powi(j as i32) * (-g * t).exp();
            out.iter_mut().zip(&f.w).for_each(|(o, w)| *o += tf * w);
        }
        let nl = nonlinear_part(&self.xi(), &self.omega_values(t), self.spectrum.operator().constants())?;
        out.iter_mut().zip(nl).for_each(|(o, n)| *o += n);
        AngularField::new(self.spectrum.grid().clone(), out)
    }

    /// Nonlinear part N(xi + omega) - L omega at time t from the powers.
    pub fn nonlinear_direct_at(&self, t: f64) -> AngularField {
        let c = self.spectrum.operator().constants();
        let xi = self.xi();
        let om = self.omega_values(t);
        let v = xi
            .iter()
            .zip(&om)
            .map(|(x, o)| -c.nonlinear_coeff() * ((x + o).powf(c.p) - x.powf(c.p) - c.p * x.powf(c.p - 1.0) * o))
            .collect();
        AngularField::new(self.spectrum.grid().clone(), v).expect("shape")
    }

    /// The symbolic nonlinear families summed at time t.
    pub fn nonlinear_symbol_at(&self, t: f64) -> Result<AngularField> {
        let (degree, _, _) = self.degree_cap()?;
        let all = self.residual_families(f64::INFINITY, degree)?;
        let lin = self.linear_families(f64::INFINITY);
        let mut out = vec![0.0; self.spectrum.grid().len()];
        for (g, j, f) in all.iter() {
            let tf = t.powi(j as i32) * (-g * t).exp();
            out.iter_mut().zip(&f.w).for_each(|(o, w)| *o += tf * w);
        }
        for (g, j, f) in lin.iter() {
            let tf = t.powi(j as i32) * (-g * t).exp();
            out.iter_mut().zip(&f.w).for_each(|(o, w)| *o -= tf * w);
        }
        AngularField::new(self.spectrum.grid().clone(), out)
    }

    /// JSON list of {gamma, j, norm} plus the construction record.
    pub fn to_json(&self) -> serde_json::Value {
        let op = self.spectrum.operator();
        let terms: Vec<_> = self
            .terms
            .iter()
            .map(|t| {
                serde_json::json!({
                    "gamma": t.gamma,
                    "j": t.j,
                    "norm": op.dot(t.w.values(), t.w.values()).sqrt(),
                })
            })
            .collect();
        serde_json::json!({
            "terms": terms,
            "free_data": self.free_data,
            "order_achieved": self.order_achieved,
            "stages": self.stages,
            "warnings": self.warnings,
        })
    }

    /// Angular coefficients as CSV, one column per term.
    pub fn coefficients_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("phi");
        for t in &self.terms {
            let _ = write!(s, ",g{:e}_j{}", t.gamma, t.j);
        }
        s.push('\n');
        for (k, p) in self.spectrum.grid().nodes().iter().enumerate() {
            let _ = write!(s, "{p:e}");
            for t in &self.terms {
                let _ = write!(s, ",{:e}", t.w.values()[k]);
            }
            s.push('\n');
        }
        s
    }

    fn add_terms(&mut self, new: Vec<ExpTerm>) {
        let mut fam = self.base_families();
        for t in &new {
            fam.add(t.gamma, t.j, 1.0, t.w.values());
        }
        let grid = self.spectrum.grid().clone();
        self.terms = fam
            .iter()
            .map(|(g, j, f)| ExpTerm {
                gamma: g,
                j,
                w: AngularField::new(grid.clone(), f.w.clone()).expect("shape"),
            })
            .collect();
    }
}

/// -beta(beta+1) xi^p [(1 + x)^p - 1 - p x] with x = omega / xi, evaluated
/// without cancellation for small x.
pub fn nonlinear_part(xi: &[f64], omega: &[f64], c: &crate::consts::Constants) -> Result<Vec<f64>> {
    xi.iter()
        .zip(omega)
        .enumerate()
        .map(|(k, (x, o))| {
            let r = o / x;
            if !(r > -1.0) {
                return Err(Error::Domain(format!("xi + omega is not positive at node {k}")));
            }
            Ok(-c.nonlinear_coeff() * x.powf(c.p) * ((c.p * r.ln_1p()).exp_m1() - c.p * r))
        })
        .collect()
}

/// Sum of terms sampled on a cylinder grid.
pub fn terms_on_grid(terms: &[ExpTerm], grid: &std::sync::Arc<CylinderGrid>) -> CylinderField {
    let mut v = CylinderField::zeros(grid.clone());
    for j in 0..grid.nt() {
        let t = grid.t(j);
        let row = v.row_mut(j);
        for term in terms {
            let f = term.time_factor(t);
            row.iter_mut().zip(term.w.values()).for_each(|(o, w)| *o += f * w);
        }
    }
    v
}

/// Symbolic residual of the expansion, split at mu.
pub fn nonlinear_residual_expansion(expansion: &Expansion, mu: f64) -> Result<ResidualExpansion> {
    let (degree, x0, series_tail) = expansion.degree_cap()?;
    let fam = expansion.residual_families(f64::INFINITY, degree)?;
    let grid = expansion.spectrum.grid().clone();
    let mut below = Vec::new();
    let mut above = Vec::new();
    let mut above_bound = 0.0;
    let t_ref = expansion.t_ref;
    for (g, j, f) in fam.significant() {
        let term = ExpTerm {
            gamma: g,
            j,
            w: AngularField::new(grid.clone(), f.w.clone()).expect("shape"),
        };
        if g < mu {
            below.push(term);
        } else {
            // sup over t >= t_ref of t^j e^{-(g - mu) t}.
            let d = g - mu;
            let t_star = if d > 0.0 { (j as f64 / d).max(t_ref) } else { t_ref };
            let tf = if d == 0.0 && j > 0 {
                f64::INFINITY
            } else {
                t_star.powi(j as i32) * (-d * t_star).exp()
            };
            above_bound += tf * expansion.weighted_sup(&f.w, 2.0);
            above.push(term);
        }
    }
    let cancelled = fam.count() - below.len() - above.len();
    Ok(ResidualExpansion {
        below,
        certificate: RemainderCertificate {
            mu,
            reference_time: t_ref,
            degree_cap: degree,
            x0,
            series_tail,
            above_families: above.len(),
            above_bound,
            cancelled_families: cancelled,
        },
        above,
    })
}

fn correction_at_rate(
    spectrum: &Spectrum,
    gamma: f64,
    forcing: &BTreeMap<u32, Vec<f64>>,
    eps: f64,
) -> Result<(Vec<(u32, Vec<f64>)>, bool)> {
    let op = spectrum.operator();
    let grid = spectrum.grid().clone();
    let nn = op.len();
    let top = *forcing.keys().max().unwrap_or(&0) as usize;
    let h = |k: usize| -> Vec<f64> { forcing.get(&(k as u32)).cloned().unwrap_or_else(|| vec![0.0; nn]) };
    let resonant: Vec<usize> = (0..spectrum.count())
        .filter(|&i| (spectrum.gammas()[i] - gamma).abs() <= eps)
        .collect();
    for &i in &resonant {
        let gi = spectrum.gammas()[i];
        if (gi - gamma).abs() > 1e-12 * gamma {
            return Err(Error::Precondition(format!(
                "gamma_{} = {gi} is resonant with the rate {gamma} but not equal to it; snap the spectrum first",
                i + 1
            )));
        }
    }
    // Coefficients along the resonant modes: one order higher in t.
    let len = if resonant.is_empty() { top + 1 } else { top + 2 };
    let mut alpha = vec![vec![0.0; resonant.len()]; len + 2];
    let mut perp: Vec<Vec<f64>> = (0..=top).map(h).collect();
    for (r, &i) in resonant.iter().enumerate() {
        let phi = spectrum.mode(i);
        for (k, hk) in perp.iter_mut().enumerate() {
            let eta = op.dot(phi, hk);
            hk.iter_mut().zip(phi).for_each(|(a, b)| *a -= eta * b);
            alpha[k + 1][r] = eta;
        }
        for k in (0..=top).rev() {
            let eta = alpha[k + 1][r];
            alpha[k + 1][r] = (eta + ((k + 2) * (k + 1)) as f64 * alpha[k + 2][r]) / (2.0 * gamma * (k + 1) as f64);
        }
        alpha[0][r] = 0.0;
    }
    let mut w: Vec<Vec<f64>> = vec![vec![0.0; nn]; len + 2];
    for k in (0..=top).rev() {
        let mut hp = perp[k].clone();
        for i in 0..nn {
            hp[i] += -2.0 * gamma * (k + 1) as f64 * w[k + 1][i] + ((k + 2) * (k + 1)) as f64 * w[k + 2][i];
        }
        let field = AngularField::new(grid.clone(), hp)?;
        w[k] = shifted_angular_solve(spectrum, &field, gamma, eps)?.into_values();
    }
    let mut out = Vec::new();
    for k in 0..len {
        let mut wk = w[k].clone();
        for (r, &i) in resonant.iter().enumerate() {
            let a = alpha[k][r];
            wk.iter_mut().zip(spectrum.mode(i)).for_each(|(x, p)| *x += a * p);
        }
        if wk.iter().any(|&x| x != 0.0) {
            out.push((k as u32, wk));
        }
    }
    Ok((out, !resonant.is_empty()))
}

/// Add correction terms rate by rate until every residual family below mu
/// has cancelled.
pub fn correct_to_order(expansion: &Expansion, chain: &IndexChain, mu: f64) -> Result<Expansion> {
    let m = chain.membership(mu)?;
    if m.in_set {
        return Err(Error::Precondition(format!(
            "mu = {mu} lies in the index set (nearest value {})",
            m.nearest
        )));
    }
    let mut exp = expansion.clone();
    let eps = chain.epsilon_res;
    let mut processed: Vec<f64> = exp.terms.iter().map(|t| t.gamma).collect();
    let tol = exp.merge_tol;
    let is_processed = |p: &[f64], g: f64| p.iter().any(|&x| (x - g).abs() <= tol);
    loop {
        let (degree, _, _) = exp.degree_cap()?;
        let fam = exp.residual_families(mu, degree)?;
        let mut next: Option<(f64, BTreeMap<u32, Vec<f64>>, f64)> = None;
        for (g, j, f) in fam.significant() {
            if is_processed(&processed, g) {
                return Err(Error::Numeric(format!(
                    "residual at the corrected rate {g} did not cancel (size {:.3e} against {:.3e})",
                    sup(&f.w),
                    f.scale
                )));
            }
            match &mut next {
                None => next = Some((g, BTreeMap::from([(j, f.w.clone())]), sup(&f.w))),
                Some((g0, map, size)) if *g0 == g => {
                    map.insert(j, f.w.clone());
                    *size = size.max(sup(&f.w));
                }
                Some(_) => {}
            }
        }
        let Some((rate, forcing, size)) = next else { break };
        let (corr, resonant) = correction_at_rate(&exp.spectrum, rate, &forcing, eps)?;
        processed.push(rate);
        exp.stages.push(StageRecord {
            rate,
            resonant,
            families: forcing.len(),
            max_power: corr.iter().map(|(k, _)| *k).max().unwrap_or(0),
            forcing_size: size,
            correction_size: corr.iter().map(|(_, w)| sup(w)).fold(0.0, f64::max),
        });
        let grid = exp.spectrum.grid().clone();
        let new = corr
            .into_iter()
            .map(|(j, w)| ExpTerm {
                gamma: rate,
                j,
                w: AngularField::new(grid.clone(), w).expect("shape"),
            })
            .collect();
        exp.add_terms(new);
    }
    let res = nonlinear_residual_expansion(&exp, mu)?;
    exp.order_achieved = Some(res.above.iter().map(|t| t.gamma).fold(f64::INFINITY, f64::min)).filter(|x| x.is_finite());
    if !res.below.is_empty() {
        return Err(Error::Numeric(format!(
            "{} residual families below mu remain after correction",
            res.below.len()
        )));
    }
    Ok(exp)
}

/// Sample of omega o(t) and d/dt o(t) (exact in t).
fn omega_and_dt(exp: &Expansion, t: f64) -> (Vec<f64>, Vec<f64>) {
    let nn = exp.spectrum.grid().len();
    let mut v = vec![0.0; nn];
    let mut d = vec![0.0; nn];
    for term in &exp.terms {
        let (f, fd) = (term.time_factor(t), term.time_factor_dt(t));
        for (k, w) in term.w.values().iter().enumerate() {
            v[k] += f * w;
            d[k] += fd * w;
        }
    }
    (v, d)
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub mu: f64,
    pub window: (f64, f64),
    pub t: Vec<f64>,
    /// sup rho^{-s}(|omega| + rho |grad omega|) at each t.
    pub epsilon: Vec<f64>,
    pub epsilon_decreasing: bool,
    pub epsilon_rate: Option<f64>,
    /// sup e^{mu t} rho^{2-s} |N(v)| over the window, from the symbolic residual.
    pub k_constant: f64,
    /// Decay rate of sup rho^{2-s} |N(v)| evaluated at the nodes.
    pub residual_rate: Option<f64>,
    pub x0: f64,
    pub passes: bool,
}

/// Check the smallness and decay hypotheses of the fixed-point argument on a
/// t window.
pub fn assumption_check(expansion: &Expansion, mu: f64, window: (f64, f64)) -> Result<AssumptionReport> {
    let (ta, tb) = window;
    if !(tb > ta) {
        return Err(Error::Parameter(format!("empty window [{ta}, {tb}]")));
    }
    let sp = &expansion.spectrum;
    let rho = sp.operator().rho();
    let s = sp.operator().constants().s;
    let grid = sp.grid();
    let kmax = grid.len() - 1;
    let steps = 40;
    let ts: Vec<f64> = (0..=steps).map(|i| ta + (tb - ta) * i as f64 / steps as f64).collect();
    let mut epsilon = Vec::with_capacity(ts.len());
    for &t in &ts {
        let (v, d) = omega_and_dt(expansion, t);
        let g = gradient(grid, &v, 0.0);
        let e = (0..kmax).fold(0.0f64, |m, k| {
            let grad = (d[k] * d[k] + g[k] * g[k]).sqrt();
            m.max(rho[k].powf(-s) * (v[k].abs() + rho[k] * grad))
        });
        epsilon.push(e);
    }
    let epsilon_decreasing = epsilon.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    let fit = |ys: &[f64]| -> Option<f64> {
        let pts: Vec<(f64, f64)> = ts.iter().zip(ys).filter(|(_, y)| **y > 0.0).map(|(t, y)| (*t, y.ln())).collect();
        (pts.len() >= 3).then(|| {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            -linear_fit(&x, &y).0
        })
    };
    let epsilon_rate = fit(&epsilon);
    let res = nonlinear_residual_expansion(&expansion.with_reference_time(ta), mu)?;
    let mut k_constant = 0.0f64;
    let mut pointwise = Vec::with_capacity(ts.len());
    for &t in &ts {
        let mut r = vec![0.0; grid.len()];
        for term in res.above.iter().chain(&res.below) {
            let f = term.time_factor(t);
            r.iter_mut().zip(term.w.values()).for_each(|(a, w)| *a += f * w);
        }
        k_constant = k_constant.max((mu * t).exp() * expansion.weighted_sup(&r, 2.0));
        pointwise.push(expansion.weighted_sup(expansion.residual_at(t)?.values(), 2.0));
    }
    let residual_rate = if expansion.is_empty() { None } else { fit(&pointwise) };
    let x0 = expansion.x0(ta);
    let passes = epsilon_decreasing
        && x0 < 0.5
        && k_constant.is_finite()
        && residual_rate.map_or(true, |r| r >= mu - 0.05);
    Ok(AssumptionReport {
        mu,
        window,
        t: ts,
        epsilon,
        epsilon_decreasing,
        epsilon_rate,
        k_constant,
        residual_rate,
        x0,
        passes,
    })
}

/// Fourth-order t-derivative of a sampled expansion, used to cross-check the
/// exact derivatives in tests.
#[doc(hidden)]
pub fn sampled_dt(exp: &Expansion, grid: &std::sync::Arc<CylinderGrid>) -> CylinderField {
    t_derivative(&exp.omega_on(grid), false)
}

#[cfg(test)]
mod tests;
