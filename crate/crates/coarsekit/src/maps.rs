//! Maps between finite spaces: expansion profiles, closeness constants,
//! coarse-equivalence certificates, and family-uniform audits.
//!
//! On finite data every quantity is computed exactly by exhaustive scans;
//! whether the resulting constants are meaningful (bounded across a family
//! of truncations) or trivial (they drift with size) is decided at family
//! level by the stabilization verdicts here.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{same_space, FiniteMetricSpace, SpaceStore};

/// A total function between two finite spaces, as a table of codomain
/// indices.
#[derive(Debug, Clone)]
pub struct PointMap {
    domain: Arc<FiniteMetricSpace>,
    codomain: Arc<FiniteMetricSpace>,
    table: Vec<usize>,
}

impl PointMap {
    pub fn new(
        domain: Arc<FiniteMetricSpace>,
        codomain: Arc<FiniteMetricSpace>,
        table: Vec<usize>,
    ) -> Result<Self> {
        if table.len() != domain.n() {
            return Err(Error::Schema(format!(
                "table has {} entries for a domain of {} points",
                table.len(),
                domain.n()
            )));
        }
        if let Some(&bad) = table.iter().find(|&&y| y >= codomain.n()) {
            return Err(Error::Schema(format!(
                "table entry {bad} is outside the codomain (n = {})",
                codomain.n()
            )));
        }
        Ok(Self { domain, codomain, table })
    }

    pub fn identity(space: Arc<FiniteMetricSpace>) -> Self {
        let table = (0..space.n()).collect();
        Self { domain: space.clone(), codomain: space, table }
    }

    pub fn constant(
        domain: Arc<FiniteMetricSpace>,
        codomain: Arc<FiniteMetricSpace>,
        target: usize,
    ) -> Result<Self> {
        let table = vec![target; domain.n()];
        Self::new(domain, codomain, table)
    }

    #[inline]
    pub fn apply(&self, x: usize) -> usize {
        self.table[x]
    }

    pub fn domain(&self) -> &Arc<FiniteMetricSpace> {
        &self.domain
    }

    pub fn codomain(&self) -> &Arc<FiniteMetricSpace> {
        &self.codomain
    }

    pub fn table(&self) -> &[usize] {
        &self.table
    }

    pub fn is_bijection(&self) -> bool {
        if self.domain.n() != self.codomain.n() {
            return false;
        }
        let mut seen = vec![false; self.codomain.n()];
        for &y in &self.table {
            if seen[y] {
                return false;
            }
            seen[y] = true;
        }
        true
    }

    /// `self` after `inner`: x -> self(inner(x)).
    pub fn compose(&self, inner: &PointMap) -> Result<PointMap> {
        if !same_space(&inner.codomain, &self.domain) {
            return Err(Error::DomainMismatch(format!(
                "cannot compose: inner codomain '{}' vs outer domain '{}'",
                inner.codomain.label(),
                self.domain.label()
            )));
        }
        let table = inner.table.iter().map(|&x| self.table[x]).collect();
        Ok(PointMap { domain: inner.domain.clone(), codomain: self.codomain.clone(), table })
    }

    pub fn to_document(&self) -> MapDocument {
        MapDocument {
            domain: self.domain.label().to_string(),
            codomain: self.codomain.label().to_string(),
            table: self.table.clone(),
        }
    }

    pub fn from_document(doc: &MapDocument, store: &SpaceStore) -> Result<Self> {
        let domain = store.get(&doc.domain)?;
        let codomain = store.get(&doc.codomain)?;
        Self::new(domain, codomain, doc.table.clone())
    }
}

/// On-disk shape of a map: `{"domain": label, "codomain": label, "table": [..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapDocument {
    pub domain: String,
    pub codomain: String,
    pub table: Vec<usize>,
}

/// Monotone expansion control `R -> S(R)`, defined for every `R` up to the
/// domain diameter. Evaluation past the stored range clamps to the last
/// value, which is exact because S is the running maximum over all pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlFunction {
    values: Vec<u32>, // index R in 0..=domain diameter
}

impl ControlFunction {
    pub fn eval(&self, r: u32) -> u32 {
        let idx = (r as usize).min(self.values.len() - 1);
        self.values[idx]
    }

    pub fn r_max(&self) -> u32 {
        (self.values.len() - 1) as u32
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }
}

/// `S(R) = max { d(f(x1), f(x2)) : d(x1, x2) <= R }`, by full pair scan.
pub fn expansion_profile(f: &PointMap) -> ControlFunction {
    let domain = f.domain();
    let codomain = f.codomain();
    let diam = domain.diameter();
    let mut values = vec![0u32; diam as usize + 1];
    for x1 in 0..domain.n() {
        for x2 in (x1 + 1)..domain.n() {
            let r = domain.dist(x1, x2) as usize;
            let s = codomain.dist(f.apply(x1), f.apply(x2));
            if s > values[r] {
                values[r] = s;
            }
        }
    }
    // running maximum turns "at distance exactly R" into "at distance <= R"
    for r in 1..values.len() {
        values[r] = values[r].max(values[r - 1]);
    }
    ControlFunction { values }
}

/// `max_x d(f(x), g(x))` for maps sharing domain and codomain.
pub fn closeness_constant(f: &PointMap, g: &PointMap) -> Result<u32> {
    if !same_space(f.domain(), g.domain()) || !same_space(f.codomain(), g.codomain()) {
        return Err(Error::DomainMismatch(format!(
            "closeness needs shared spaces: ({} -> {}) vs ({} -> {})",
            f.domain().label(),
            f.codomain().label(),
            g.domain().label(),
            g.codomain().label()
        )));
    }
    let codomain = f.codomain();
    Ok((0..f.domain().n())
        .map(|x| codomain.dist(f.apply(x), g.apply(x)))
        .max()
        .unwrap_or(0))
}

/// Full certificate for a pair of maps in opposite directions: both
/// expansion profiles and both composition-displacement constants,
/// each computed by exhaustive scan.
#[derive(Debug, Clone)]
pub struct CoarseEquivalenceCertificate {
    pub f: PointMap,
    pub g: PointMap,
    pub rho_f: ControlFunction,
    pub rho_g: ControlFunction,
    /// max over y of d(f(g(y)), y)
    pub c_fg: u32,
    /// max over x of d(g(f(x)), x)
    pub c_gf: u32,
}

impl CoarseEquivalenceCertificate {
    pub fn to_document(&self) -> CertificateDocument {
        CertificateDocument {
            f: self.f.to_document(),
            g: self.g.to_document(),
            rho_f: self.rho_f.values().to_vec(),
            rho_g: self.rho_g.values().to_vec(),
            c_fg: self.c_fg,
            c_gf: self.c_gf,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateDocument {
    pub f: MapDocument,
    pub g: MapDocument,
    pub rho_f: Vec<u32>,
    pub rho_g: Vec<u32>,
    pub c_fg: u32,
    pub c_gf: u32,
}

/// Certifies a pair `f: X -> Y`, `g: Y -> X`. On finite data this never
/// fails: every constant exists and is bounded by a diameter. Whether the
/// certificate means anything is a family-level question.
pub fn verify_coarse_equivalence(
    f: &PointMap,
    g: &PointMap,
) -> Result<CoarseEquivalenceCertificate> {
    if !same_space(f.domain(), g.codomain()) || !same_space(f.codomain(), g.domain()) {
        return Err(Error::DomainMismatch(format!(
            "expected opposite directions: f: {} -> {}, g: {} -> {}",
            f.domain().label(),
            f.codomain().label(),
            g.domain().label(),
            g.codomain().label()
        )));
    }
    let fg = f.compose(g)?; // Y -> Y
    let gf = g.compose(f)?; // X -> X
    let id_y = PointMap::identity(g.domain().clone());
    let id_x = PointMap::identity(f.domain().clone());
    Ok(CoarseEquivalenceCertificate {
        f: f.clone(),
        g: g.clone(),
        rho_f: expansion_profile(f),
        rho_g: expansion_profile(g),
        c_fg: closeness_constant(&fg, &id_y)?,
        c_gf: closeness_constant(&gf, &id_x)?,
    })
}

/// Family-level verdict for a sequence of constants indexed by ascending
/// truncation size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// The sequence is constant over the top half of the indices.
    Bounded,
    /// The sequence strictly increases across all indices.
    Divergent,
    /// Neither pattern; more truncations are needed to tell.
    Inconclusive,
}

impl Verdict {
    /// Worst of two verdicts, ordering Divergent > Inconclusive > Bounded.
    pub fn combine(self, other: Verdict) -> Verdict {
        use Verdict::*;
        match (self, other) {
            (Divergent, _) | (_, Divergent) => Divergent,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Bounded,
        }
    }
}

/// Stabilization heuristic: BOUNDED when the last half of the values are
/// all equal, DIVERGENT when the whole sequence strictly increases.
pub fn stabilization_verdict(values: &[u32]) -> Verdict {
    if values.len() <= 1 {
        return Verdict::Bounded;
    }
    let tail_start = values.len() / 2;
    let tail = &values[tail_start..];
    if tail.iter().all(|&v| v == tail[0]) {
        return Verdict::Bounded;
    }
    if values.windows(2).all(|w| w[0] < w[1]) {
        return Verdict::Divergent;
    }
    Verdict::Inconclusive
}

/// Per-radius and per-index uniformity data for a family of
/// coarse-equivalence certificates.
#[derive(Debug, Clone, Serialize)]
pub struct UniformityReport {
    pub indices: Vec<usize>,
    /// Largest radius at which every member's profile is defined.
    pub common_radius: u32,
    /// `R -> sup over indices of rho_f(R)`.
    pub expansion_sup_f: Vec<u32>,
    pub expansion_sup_g: Vec<u32>,
    pub expansion_verdict_f: Verdict,
    pub expansion_verdict_g: Verdict,
    /// Per-index composition-displacement constants.
    pub closeness_fg: Vec<u32>,
    pub closeness_gf: Vec<u32>,
    pub closeness_verdict_fg: Verdict,
    pub closeness_verdict_gf: Verdict,
}

impl UniformityReport {
    pub fn overall(&self) -> Verdict {
        self.expansion_verdict_f
            .combine(self.expansion_verdict_g)
            .combine(self.closeness_verdict_fg)
            .combine(self.closeness_verdict_gf)
    }
}

/// Audits a family of certificates for uniformity across truncations.
///
/// Preconditions: indices ascend, and the maps must commute with the
/// nested embeddings up to `embedding_tolerance` (checked on consecutive
/// indices; a failure is a rejection, since silently extending maps can
/// manufacture uniformity).
pub fn family_uniformity(
    certs: &BTreeMap<usize, CoarseEquivalenceCertificate>,
    embedding_tolerance: u32,
) -> Result<UniformityReport> {
    if certs.is_empty() {
        return Err(Error::IncompatibleFamily("empty certificate family".to_string()));
    }
    let indices: Vec<usize> = certs.keys().copied().collect();
    let entries: Vec<&CoarseEquivalenceCertificate> = certs.values().collect();

    for w in entries.windows(2) {
        check_embedding_compat(&w[0].f, &w[1].f, embedding_tolerance)?;
        check_embedding_compat(&w[0].g, &w[1].g, embedding_tolerance)?;
    }

    let common_radius = entries.iter().map(|c| c.rho_f.r_max()).min().unwrap_or(0);
    let common_radius_g = entries.iter().map(|c| c.rho_g.r_max()).min().unwrap_or(0);

    let mut expansion_sup_f = Vec::with_capacity(common_radius as usize + 1);
    let mut verdict_f = Verdict::Bounded;
    for r in 0..=common_radius {
        let per_index: Vec<u32> = entries.iter().map(|c| c.rho_f.eval(r)).collect();
        expansion_sup_f.push(per_index.iter().copied().max().unwrap());
        verdict_f = verdict_f.combine(stabilization_verdict(&per_index));
    }
    let mut expansion_sup_g = Vec::with_capacity(common_radius_g as usize + 1);
    let mut verdict_g = Verdict::Bounded;
    for r in 0..=common_radius_g {
        let per_index: Vec<u32> = entries.iter().map(|c| c.rho_g.eval(r)).collect();
        expansion_sup_g.push(per_index.iter().copied().max().unwrap());
        verdict_g = verdict_g.combine(stabilization_verdict(&per_index));
    }

    let closeness_fg: Vec<u32> = entries.iter().map(|c| c.c_fg).collect();
    let closeness_gf: Vec<u32> = entries.iter().map(|c| c.c_gf).collect();
    let closeness_verdict_fg = stabilization_verdict(&closeness_fg);
    let closeness_verdict_gf = stabilization_verdict(&closeness_gf);

    Ok(UniformityReport {
        indices,
        common_radius: common_radius.min(common_radius_g),
        expansion_sup_f,
        expansion_sup_g,
        expansion_verdict_f: verdict_f,
        expansion_verdict_g: verdict_g,
        closeness_fg,
        closeness_gf,
        closeness_verdict_fg,
        closeness_verdict_gf,
    })
}

/// The smaller map must agree with the larger one on the common prefix of
/// the domain, up to `tolerance` in the larger codomain.
pub fn check_embedding_compat(small: &PointMap, large: &PointMap, tolerance: u32) -> Result<()> {
    if small.domain().n() > large.domain().n() || small.codomain().n() > large.codomain().n() {
        return Err(Error::IncompatibleFamily(
            "family maps must be indexed by ascending truncations".to_string(),
        ));
    }
    for x in 0..small.domain().n() {
        let a = small.apply(x);
        let b = large.apply(x);
        let d = large.codomain().dist(a, b);
        if d > tolerance {
            return Err(Error::IncompatibleFamily(format!(
                "maps disagree at point {x}: images {a} and {b} are {d} apart (tolerance {tolerance})"
            )));
        }
    }
    Ok(())
}

/// Per-index closeness constants of two map families over the same spaces,
/// with a stabilization verdict. This is the family-level form of map
/// closeness: a drifting sequence is evidence that the families are not
/// identified.
#[derive(Debug, Clone, Serialize)]
pub struct FamilyClosenessReport {
    pub indices: Vec<usize>,
    pub per_index: Vec<u32>,
    pub verdict: Verdict,
}

pub fn family_closeness(
    f_family: &BTreeMap<usize, PointMap>,
    g_family: &BTreeMap<usize, PointMap>,
) -> Result<FamilyClosenessReport> {
    if f_family.len() != g_family.len()
        || f_family.keys().zip(g_family.keys()).any(|(a, b)| a != b)
    {
        return Err(Error::IncompatibleFamily(
            "families must share the same index set".to_string(),
        ));
    }
    let indices: Vec<usize> = f_family.keys().copied().collect();
    let mut per_index = Vec::with_capacity(indices.len());
    for idx in &indices {
        per_index.push(closeness_constant(&f_family[idx], &g_family[idx])?);
    }
    let verdict = stabilization_verdict(&per_index);
    Ok(FamilyClosenessReport { indices, per_index, verdict })
}
