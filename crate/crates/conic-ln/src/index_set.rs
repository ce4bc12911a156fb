//! The index set of nonnegative integer combinations of the exponents
//! gamma_i, merged into one ordered chain with resonance flags.

use crate::error::{Error, Result};
use serde::Serialize;

/// Distance under which a single exponent and a combination are reported as a
/// near-resonance even though they are not merged.
pub const NEAR_RESONANCE: f64 = 1e-4;

/// Upper bound on enumerated multi-indices.
pub const MAX_COMBINATIONS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Single,
    Combo,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainEntry {
    pub value: f64,
    pub kind: EntryKind,
    /// Multi-indices (m_1..m_K) realizing the value, sorted lexicographically.
    pub certificates: Vec<Vec<u32>>,
    /// One-based indices of the single exponents in this entry.
    pub singles: Vec<usize>,
    pub resonant: bool,
}

impl ChainEntry {
    pub fn is_combo(&self) -> bool {
        self.kind != EntryKind::Single
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NearResonance {
    pub single: usize,
    pub gamma: f64,
    pub combo_value: f64,
    pub distance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct IndexChain {
    pub gammas_in: Vec<f64>,
    pub cutoff: f64,
    pub epsilon_res: f64,
    pub entries: Vec<ChainEntry>,
    pub k1: usize,
    pub near_resonances: Vec<NearResonance>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Membership {
    pub in_set: bool,
    pub nearest: f64,
    pub distance: f64,
}

fn combo_value(m: &[u32], gammas: &[f64]) -> f64 {
    m.iter().zip(gammas).fold(0.0, |acc, (&k, &g)| acc + k as f64 * g)
}

fn validate(gammas: &[f64], cutoff: f64, eps: f64) -> Result<()> {
    if gammas.is_empty() {
        return Err(Error::Parameter("exponent list is empty".into()));
    }
    if gammas.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(Error::Parameter("exponents must be positive and finite".into()));
    }
    if gammas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Parameter("exponent list is not increasing".into()));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!("epsilon_res = {eps} must be nonnegative")));
    }
    if !(cutoff >= 2.0 * gammas[0]) || !cutoff.is_finite() {
        return Err(Error::Parameter(format!(
            "cutoff {cutoff} is below twice the leading exponent {}",
            gammas[0]
        )));
    }
    Ok(())
}

fn enumerate(gammas: &[f64], limit: f64) -> Result<Vec<(f64, Vec<u32>)>> {
    fn rec(
        i: usize,
        acc: f64,
        m: &mut Vec<u32>,
        gammas: &[f64],
        limit: f64,
        out: &mut Vec<(f64, Vec<u32>)>,
    ) -> Result<()> {
        if i == gammas.len() {
            if m.iter().any(|&k| k > 0) {
                if out.len() >= MAX_COMBINATIONS {
                    return Err(Error::Range(format!(
                        "more than {MAX_COMBINATIONS} combinations below the cutoff"
                    )));
                }
                out.push((acc, m.clone()));
            }
            return Ok(());
        }
        let mut k = 0u32;
        loop {
            let v = acc + k as f64 * gammas[i];
            if v > limit {
                break;
            }
            m[i] = k;
            rec(i + 1, v, m, gammas, limit, out)?;
            k += 1;
        }
        m[i] = 0;
        Ok(())
    }
    let mut out = Vec::new();
    let mut m = vec![0u32; gammas.len()];
    rec(0, 0.0, &mut m, gammas, limit, &mut out)?;
    for (v, m) in out.iter_mut() {
        *v = combo_value(m, gammas);
    }
    Ok(out)
}

fn entry_from_cluster(members: &[(f64, Vec<u32>)]) -> ChainEntry {
    let mut singles = Vec::new();
    let mut certificates: Vec<Vec<u32>> = Vec::new();
    let mut single_value = None;
    let mut min_value = f64::INFINITY;
    let mut combo = false;
    for (v, m) in members {
        let order: u32 = m.iter().sum();
        if order == 1 {
            let idx = m.iter().position(|&k| k == 1).unwrap() + 1;
            singles.push(idx);
            single_value.get_or_insert(*v);
        } else {
            combo = true;
        }
        min_value = min_value.min(*v);
        certificates.push(m.clone());
    }
    singles.sort_unstable();
    certificates.sort();
    let kind = match (singles.is_empty(), combo) {
        (false, false) => EntryKind::Single,
        (true, true) => EntryKind::Combo,
        _ => EntryKind::Both,
    };
    ChainEntry {
        value: single_value.unwrap_or(min_value),
        kind,
        certificates,
        singles,
        resonant: kind == EntryKind::Both,
    }
}

/// Enumerate every combination sum m_i gamma_i up to `cutoff`, merging values
/// closer than `epsilon_res` (single linkage).
pub fn build_index_chain(gammas: &[f64], cutoff: f64, epsilon_res: f64) -> Result<IndexChain> {
    validate(gammas, cutoff, epsilon_res)?;
    let mut all = enumerate(gammas, cutoff + epsilon_res)?;
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let mut entries = Vec::new();
    let mut start = 0;
    for i in 1..=all.len() {
        if i == all.len() || all[i].0 - all[i - 1].0 > epsilon_res {
            let e = entry_from_cluster(&all[start..i]);
            if e.value <= cutoff {
                entries.push(e);
            }
            start = i;
        }
    }
    let near_resonances = near_resonances(gammas, &all, epsilon_res);
    let first_combo = 2.0 * gammas[0];
    let k1 = gammas.iter().take_while(|&&g| g < first_combo - epsilon_res).count();
    Ok(IndexChain {
        gammas_in: gammas.to_vec(),
        cutoff,
        epsilon_res,
        entries,
        k1,
        near_resonances,
    })
}

fn near_resonances(gammas: &[f64], all: &[(f64, Vec<u32>)], eps: f64) -> Vec<NearResonance> {
    let mut out = Vec::new();
    for (j, &g) in gammas.iter().enumerate() {
        let closest = all
            .iter()
            .filter(|(_, m)| m.iter().sum::<u32>() >= 2)
            .map(|(v, _)| *v)
            .min_by(|a, b| (a - g).abs().total_cmp(&(b - g).abs()));
        if let Some(v) = closest {
            let d = (v - g).abs();
            if d > eps && d < NEAR_RESONANCE {
                out.push(NearResonance {
                    single: j + 1,
                    gamma: g,
                    combo_value: v,
                    distance: d,
                });
            }
        }
    }
    out
}

impl IndexChain {
    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    /// Entries whose value lies in (lo, hi).
    pub fn entries_between(&self, lo: f64, hi: f64) -> impl Iterator<Item = &ChainEntry> {
        self.entries.iter().filter(move |e| e.value > lo && e.value < hi)
    }

    /// Entry matching `value` within the resonance tolerance.
    pub fn find(&self, value: f64) -> Option<&ChainEntry> {
        self.entries
            .iter()
            .find(|e| (e.value - value).abs() <= self.epsilon_res)
    }

    /// Whether `mu` lies in the index set up to the tolerance. Ties between
    /// two equally near values resolve to the larger one.
    pub fn membership(&self, mu: f64) -> Result<Membership> {
        membership(self, mu)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chain serializes")
    }
}

pub fn membership(chain: &IndexChain, mu: f64) -> Result<Membership> {
    if !mu.is_finite() {
        return Err(Error::Parameter(format!("mu = {mu} is not finite")));
    }
    if mu > chain.cutoff {
        return Err(Error::NeedsLargerCutoff {
            cutoff: chain.cutoff,
            requested: mu,
        });
    }
    let tie = chain.epsilon_res.max(4.0 * f64::EPSILON * mu.abs());
    let mut best: Option<(f64, f64)> = None;
    for e in &chain.entries {
        let d = (e.value - mu).abs();
        match best {
            Some((_, bd)) if d > bd + tie => {}
            _ => best = Some((e.value, d)),
        }
    }
    let (nearest, distance) = best.expect("chain has at least one entry");
    Ok(Membership {
        in_set: distance <= chain.epsilon_res,
        nearest,
        distance,
    })
}

/// Flattened description of a chain used for comparisons against an
/// independent enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSignature {
    pub values: Vec<f64>,
    pub kinds: Vec<EntryKind>,
    pub resonant: Vec<bool>,
    pub k1: usize,
}

impl IndexChain {
    pub fn signature(&self) -> ChainSignature {
        ChainSignature {
            values: self.values(),
            kinds: self.entries.iter().map(|e| e.kind).collect(),
            resonant: self.entries.iter().map(|e| e.resonant).collect(),
            k1: self.k1,
        }
    }
}

/// Exhaustive enumeration by an odometer over the box of admissible
/// multi-indices, classified without the pruned search.
pub fn exhaustive_signature(gammas: &[f64], cutoff: f64, eps: f64) -> ChainSignature {
    let bounds: Vec<u32> = gammas.iter().map(|g| ((cutoff + eps) / g).floor() as u32).collect();
    let mut m = vec![0u32; gammas.len()];
    let mut vals: Vec<(f64, u32)> = Vec::new();
    'outer: loop {
        let order: u32 = m.iter().sum();
        let v = combo_value(&m, gammas);
        if order > 0 && v <= cutoff + eps {
            vals.push((v, order));
        }
        for i in 0..m.len() {
            if m[i] < bounds[i] {
                m[i] += 1;
                continue 'outer;
            }
            m[i] = 0;
        }
        break;
    }
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut sig = ChainSignature {
        values: Vec::new(),
        kinds: Vec::new(),
        resonant: Vec::new(),
        k1: gammas.iter().filter(|&&g| g < 2.0 * gammas[0] - eps).count(),
    };
    let mut i = 0;
    while i < vals.len() {
        let mut j = i + 1;
        while j < vals.len() && vals[j].0 - vals[j - 1].0 <= eps {
            j += 1;
        }
        let group = &vals[i..j];
        let single = group.iter().find(|x| x.1 == 1).map(|x| x.0);
        let has_combo = group.iter().any(|x| x.1 >= 2);
        let value = single.unwrap_or(group[0].0);
        if value <= cutoff {
            let kind = match (single.is_some(), has_combo) {
                (true, true) => EntryKind::Both,
                (true, false) => EntryKind::Single,
                _ => EntryKind::Combo,
            };
            sig.values.push(value);
            sig.kinds.push(kind);
            sig.resonant.push(kind == EntryKind::Both);
        }
        i = j;
    }
    sig
}
