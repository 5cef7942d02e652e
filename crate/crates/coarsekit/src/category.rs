//! Morphism classes over truncation families and the two functors between
//! them: map classes go to covering-unitary classes and back to extracted
//! map classes, with every identification radius declared explicitly and
//! every round-trip bound checked per index.
//!
//! Classes are represented by explicit per-index representatives plus a
//! declared identification radius (maps) or propagation bound (unitaries);
//! quotient objects are not finitely enumerable, so all category laws are
//! asserted up to the declared radius.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::band::{BandOperator, SUPPORT_FLOOR};
use crate::error::{Error, Result};
use crate::maps::{
    check_embedding_compat, closeness_constant, stabilization_verdict, PointMap, Verdict,
};
use crate::rigidity::{
    covering_unitary, extract_map_support, extract_map_threshold, locality_audit, splitmix,
    CoveringCertificate, ExtractionParams, ExtractionVerdict, FiniteUnitary, FIBER_CAP,
};
use crate::space::same_space;

/// A closeness class of maps across a truncation family: explicit
/// representatives plus the radius within which two representatives are
/// identified.
#[derive(Debug, Clone)]
pub struct CoarseMorphismClass {
    representatives: BTreeMap<usize, PointMap>,
    closeness_radius: u32,
}

impl CoarseMorphismClass {
    /// Representatives must commute with the family embeddings up to the
    /// declared radius.
    pub fn new(representatives: BTreeMap<usize, PointMap>, closeness_radius: u32) -> Result<Self> {
        if representatives.is_empty() {
            return Err(Error::IncompatibleFamily("empty morphism class".to_string()));
        }
        let reps: Vec<&PointMap> = representatives.values().collect();
        for w in reps.windows(2) {
            check_embedding_compat(w[0], w[1], closeness_radius)?;
        }
        Ok(Self { representatives, closeness_radius })
    }

    /// Builds the class with the smallest radius absorbing the observed
    /// embedding defect of the representatives.
    pub fn with_measured_radius(representatives: BTreeMap<usize, PointMap>) -> Result<Self> {
        let reps: Vec<&PointMap> = representatives.values().collect();
        let mut radius = 0u32;
        for w in reps.windows(2) {
            let (small, large) = (w[0], w[1]);
            if small.domain().n() > large.domain().n() {
                return Err(Error::IncompatibleFamily(
                    "family maps must be indexed by ascending truncations".to_string(),
                ));
            }
            for x in 0..small.domain().n() {
                radius = radius.max(large.codomain().dist(small.apply(x), large.apply(x)));
            }
        }
        Self::new(representatives, radius)
    }

    pub fn representatives(&self) -> &BTreeMap<usize, PointMap> {
        &self.representatives
    }

    pub fn representative(&self, index: usize) -> Option<&PointMap> {
        self.representatives.get(&index)
    }

    pub fn closeness_radius(&self) -> u32 {
        self.closeness_radius
    }

    pub fn indices(&self) -> Vec<usize> {
        self.representatives.keys().copied().collect()
    }
}

/// A closeness class of unitaries across a truncation family: two members
/// at an index are identified when `U* V` has propagation at most the
/// declared bound.
#[derive(Debug, Clone)]
pub struct UnitaryMorphismClass {
    representatives: BTreeMap<usize, FiniteUnitary>,
    closeness_prop_bound: u32,
}

impl UnitaryMorphismClass {
    pub fn new(
        representatives: BTreeMap<usize, FiniteUnitary>,
        closeness_prop_bound: u32,
    ) -> Result<Self> {
        if representatives.is_empty() {
            return Err(Error::IncompatibleFamily("empty unitary class".to_string()));
        }
        Ok(Self { representatives, closeness_prop_bound })
    }

    pub fn representatives(&self) -> &BTreeMap<usize, FiniteUnitary> {
        &self.representatives
    }

    pub fn representative(&self, index: usize) -> Option<&FiniteUnitary> {
        self.representatives.get(&index)
    }

    pub fn closeness_prop_bound(&self) -> u32 {
        self.closeness_prop_bound
    }

    pub fn indices(&self) -> Vec<usize> {
        self.representatives.keys().copied().collect()
    }
}

/// Outcome of a unitary closeness check: the propagation of `U* V` after
/// pruning, compared against a declared bound.
#[derive(Debug, Clone, Serialize)]
pub struct ClosenessCheck {
    pub propagation: u32,
    pub within_bound: bool,
}

/// `U` and `V` are close when `U* V` has finite small propagation; here
/// the propagation is computed exactly after pruning at the support floor
/// and compared against `bound`.
pub fn unitaries_close(
    u: &FiniteUnitary,
    v: &FiniteUnitary,
    bound: u32,
) -> Result<ClosenessCheck> {
    if !same_space(u.domain(), v.domain())
        || !same_space(u.codomain(), v.codomain())
        || u.k_dom() != v.k_dom()
        || u.k_cod() != v.k_cod()
    {
        return Err(Error::ShapeMismatch(format!(
            "closeness needs equal shapes: ('{}' -> '{}', {}x{}) vs ('{}' -> '{}', {}x{})",
            u.domain().label(),
            u.codomain().label(),
            u.k_dom(),
            u.k_cod(),
            v.domain().label(),
            v.codomain().label(),
            v.k_dom(),
            v.k_cod()
        )));
    }
    let product = u.inverse().compose(v)?;
    let op = BandOperator::from_dense(
        u.domain().clone(),
        u.domain().clone(),
        u.k_dom(),
        u.k_dom(),
        product.matrix(),
        SUPPORT_FLOOR,
    )?;
    let propagation = op.propagation()?;
    Ok(ClosenessCheck { propagation, within_bound: propagation <= bound })
}

/// How maps are read off unitaries inside the functors.
#[derive(Debug, Clone, Copy)]
pub enum ExtractionMode {
    Threshold(ExtractionParams),
    Support { eta: f64, v0_index: usize },
}

impl Default for ExtractionMode {
    fn default() -> Self {
        ExtractionMode::Threshold(ExtractionParams::default())
    }
}

/// Which comparison a functor report is about: `F` compares extracted maps
/// to the original maps, `U` compares rebuilt unitaries to the original
/// unitaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FunctorDirection {
    F,
    U,
}

/// Per-index bounds of one functor comparison with a family verdict.
#[derive(Debug, Clone, Serialize)]
pub struct FunctorReport {
    pub direction: FunctorDirection,
    pub indices: Vec<usize>,
    pub per_index_bounds: Vec<u32>,
    pub verdict: Verdict,
}

impl FunctorReport {
    fn new(direction: FunctorDirection, indices: Vec<usize>, bounds: Vec<u32>) -> Self {
        let verdict = stabilization_verdict(&bounds);
        Self { direction, indices, per_index_bounds: bounds, verdict }
    }
}

/// Result of sending a map class to covering unitaries: the unitary class,
/// the per-index covering certificates, and the propagation observed
/// between two independently seeded covers of the same maps (the measured
/// identification bound of the class).
#[derive(Debug, Clone)]
pub struct FunctorUResult {
    pub class: UnitaryMorphismClass,
    pub certificates: BTreeMap<usize, CoveringCertificate>,
    pub diameters_used: BTreeMap<usize, u32>,
    pub pair_propagation: BTreeMap<usize, u32>,
}

/// Builds a per-index covering unitary for every representative. The
/// declared closeness bound of the class is measured: a second cover with
/// an independent seed is built per index and `prop(U1* U2)` recorded; two
/// covers of one map are always close, and the maximum observed
/// propagation is the declared bound.
pub fn functor_u(
    class: &CoarseMorphismClass,
    block_diameter: u32,
    seed: u64,
) -> Result<FunctorUResult> {
    let mut representatives = BTreeMap::new();
    let mut certificates = BTreeMap::new();
    let mut diameters_used = BTreeMap::new();
    let mut pair_propagation = BTreeMap::new();
    for (&index, f) in class.representatives() {
        let primary = covering_unitary(f, block_diameter, splitmix(seed, index as u64), FIBER_CAP)?;
        let shadow = covering_unitary(
            f,
            block_diameter,
            splitmix(seed ^ 0x5a5a_a5a5_5a5a_a5a5, index as u64),
            FIBER_CAP,
        )?;
        let pair = unitaries_close(&primary.unitary, &shadow.unitary, u32::MAX)?;
        pair_propagation.insert(index, pair.propagation);
        certificates.insert(index, primary.certificate.clone());
        diameters_used.insert(index, primary.diameter_used);
        representatives.insert(index, primary.unitary);
    }
    let bound = pair_propagation.values().copied().max().unwrap_or(0);
    Ok(FunctorUResult {
        class: UnitaryMorphismClass::new(representatives, bound)?,
        certificates,
        diameters_used,
        pair_propagation,
    })
}

/// Result of extracting a map class from a unitary class, with the
/// measured certification levels.
#[derive(Debug, Clone)]
pub struct FunctorFResult {
    pub class: CoarseMorphismClass,
    /// Per-index minimum achieved column mass (threshold mode).
    pub min_masses: BTreeMap<usize, f64>,
}

/// Extracts a per-index map from every representative. An uncertified
/// threshold extraction is a rejection naming the index. The output
/// class's identification radius is measured: the largest single-point
/// locality radius `S(0)` observed at the certification level, joined
/// with the embedding-compatibility defect of the extracted maps.
pub fn functor_f(class: &UnitaryMorphismClass, mode: ExtractionMode) -> Result<FunctorFResult> {
    let mut maps: BTreeMap<usize, PointMap> = BTreeMap::new();
    let mut min_masses = BTreeMap::new();
    let mut radius = 0u32;
    for (&index, u) in class.representatives() {
        let (map, level) = match mode {
            ExtractionMode::Threshold(params) => {
                let extraction = extract_map_threshold(u, &params)?;
                match extraction.verdict {
                    ExtractionVerdict::Certified => {}
                    ExtractionVerdict::Uncertified { worst_x, mass } => {
                        return Err(Error::Uncertified { index, worst_x, mass });
                    }
                }
                min_masses.insert(index, extraction.min_achieved);
                (extraction.map, params.c)
            }
            ExtractionMode::Support { eta, v0_index } => {
                let map = extract_map_support(u, eta, v0_index)?;
                (map, eta.max(SUPPORT_FLOOR))
            }
        };
        let audit = locality_audit(u, level, None)?;
        radius = radius.max(audit.s_at(0));
        maps.insert(index, map);
    }
    // the declared radius must also absorb the embedding defect of the
    // extracted representatives
    let reps: Vec<&PointMap> = maps.values().collect();
    for w in reps.windows(2) {
        let small = w[0];
        let large = w[1];
        for x in 0..small.domain().n() {
            radius = radius.max(large.codomain().dist(small.apply(x), large.apply(x)));
        }
    }
    Ok(FunctorFResult { class: CoarseMorphismClass::new(maps, radius)?, min_masses })
}

/// Both round trips from a map class: `F(U(f))` against `f` by closeness
/// per index, and `U(F(U(f)))` against `U(f)` by unitary closeness per
/// index, with family verdicts and the per-index covering constants.
#[derive(Debug, Clone, Serialize)]
pub struct RoundtripReport {
    pub indices: Vec<usize>,
    pub covering_c: Vec<u32>,
    /// Closeness of the re-extracted maps to the originals.
    pub map_half: FunctorReport,
    /// Whether every map bound is within twice the covering constant.
    pub within_two_c: bool,
    /// Propagation of `U* U'` between the original covers and the covers
    /// of the re-extracted maps.
    pub unitary_half: FunctorReport,
    /// Propagation between two independently seeded covers of the same
    /// map, per index.
    pub pair_propagation: Vec<u32>,
}

/// Runs the full round trip on a map class.
pub fn roundtrip_report(
    class: &CoarseMorphismClass,
    block_diameter: u32,
    seed: u64,
    mode: ExtractionMode,
) -> Result<RoundtripReport> {
    let indices = class.indices();
    let covered = functor_u(class, block_diameter, seed)?;
    let extracted = functor_f(&covered.class, mode)?;

    let mut map_bounds = Vec::with_capacity(indices.len());
    let mut within_two_c = true;
    for &index in &indices {
        let original = class.representative(index).expect("shared index set");
        let roundtripped = extracted.class.representative(index).expect("functor preserves indices");
        let bound = closeness_constant(roundtripped, original)?;
        let c = covered.certificates[&index].c;
        if bound > 2 * c {
            within_two_c = false;
        }
        map_bounds.push(bound);
    }

    let recovered = functor_u(&extracted.class, block_diameter, splitmix(seed, 0x0ff5_e7))?;
    let mut unitary_bounds = Vec::with_capacity(indices.len());
    for &index in &indices {
        let original = covered.class.representative(index).expect("shared index set");
        let rebuilt = recovered.class.representative(index).expect("shared index set");
        let check = unitaries_close(original, rebuilt, u32::MAX)?;
        unitary_bounds.push(check.propagation);
    }

    Ok(RoundtripReport {
        covering_c: indices.iter().map(|i| covered.certificates[i].c).collect(),
        pair_propagation: indices.iter().map(|i| covered.pair_propagation[i]).collect(),
        map_half: FunctorReport::new(FunctorDirection::F, indices.clone(), map_bounds),
        unitary_half: FunctorReport::new(FunctorDirection::U, indices.clone(), unitary_bounds),
        within_two_c,
        indices,
    })
}
