//! Mass-concentration decompositions: given a probability mass on a finite
//! space, find disjoint pieces of small diameter, pairwise separated by
//! more than `S`, that together capture at least a `kappa` fraction of the
//! mass.
//!
//! The exact solver iterates the diameter budget `D` upward and decides
//! feasibility per `D` by branch and bound over point inclusion; the
//! greedy solver grows separated balls around heavy points. Both always
//! return decompositions that re-validate.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::FiniteMetricSpace;

/// Default hard cap on the exact solver's instance size.
pub const EXACT_SOLVER_CAP: usize = 14;

/// Normalization tolerance for user-supplied masses.
pub const MASS_TOL: f64 = 1e-12;

/// Vectors must be unit to this tolerance before deriving a mass from them.
pub const UNIT_TOL: f64 = 1e-10;

/// Slack used when comparing achieved mass against a requested kappa, so
/// instances like "half of a uniform mass" do not flap on the last bit.
pub const KAPPA_SLACK: f64 = 1e-9;

/// A probability mass on the points of a space.
#[derive(Debug, Clone)]
pub struct MassDistribution {
    space: Arc<FiniteMetricSpace>,
    mass: Vec<f64>,
}

impl MassDistribution {
    pub fn new(space: Arc<FiniteMetricSpace>, mass: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(space, mass, MASS_TOL)
    }

    pub fn with_tolerance(
        space: Arc<FiniteMetricSpace>,
        mass: Vec<f64>,
        tol: f64,
    ) -> Result<Self> {
        if mass.len() != space.n() {
            return Err(Error::Schema(format!(
                "mass has {} entries for a space of {} points",
                mass.len(),
                space.n()
            )));
        }
        if let Some((index, &value)) = mass.iter().enumerate().find(|(_, &m)| m < 0.0) {
            return Err(Error::NegativeMass { index, value });
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::NotNormalized { total, tol });
        }
        Ok(Self { space, mass })
    }

    pub fn uniform(space: Arc<FiniteMetricSpace>) -> Self {
        let n = space.n();
        Self { space, mass: vec![1.0 / n as f64; n] }
    }

    pub fn space(&self) -> &Arc<FiniteMetricSpace> {
        &self.space
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn of(&self, point: usize) -> f64 {
        self.mass[point]
    }

    pub fn of_set(&self, points: &[usize]) -> f64 {
        points.iter().map(|&p| self.mass[p]).sum()
    }
}

/// Derives the mass `x -> |xi(x)|^2` from a unit vector over the space
/// with fiber dimension `k`. The unit gate is 1e-10, so the resulting
/// totals can sit a bit off 1; the construction tolerance is widened
/// accordingly (honest unitary columns land well within 1e-12 anyway).
pub fn vector_mass(
    space: &Arc<FiniteMetricSpace>,
    k: usize,
    xi: &DVector<Complex64>,
) -> Result<MassDistribution> {
    if xi.len() != space.n() * k {
        return Err(Error::Schema(format!(
            "vector has {} coordinates, expected {} * {}",
            xi.len(),
            space.n(),
            k
        )));
    }
    let norm = xi.norm();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotUnitVector { norm, tol: UNIT_TOL });
    }
    let mass: Vec<f64> = (0..space.n())
        .map(|x| xi.rows(x * k, k).iter().map(|z| z.norm_sqr()).sum())
        .collect();
    MassDistribution::with_tolerance(space.clone(), mass, 8.0 * UNIT_TOL)
}

/// Disjoint, non-empty point subsets in canonical form: each piece sorted,
/// pieces ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pieces: Vec<Vec<usize>>,
}

impl Decomposition {
    pub fn new(space: &FiniteMetricSpace, pieces: Vec<Vec<usize>>) -> Result<Self> {
        let mut canonical: Vec<Vec<usize>> = Vec::with_capacity(pieces.len());
        for mut piece in pieces {
            if piece.is_empty() {
                return Err(Error::Schema("empty piece in decomposition".to_string()));
            }
            piece.sort_unstable();
            piece.dedup();
            canonical.push(piece);
        }
        canonical.sort();
        let mut seen = vec![false; space.n()];
        for piece in &canonical {
            for &p in piece {
                if p >= space.n() {
                    return Err(Error::Schema(format!(
                        "piece point {p} outside space '{}'",
                        space.label()
                    )));
                }
                if seen[p] {
                    return Err(Error::OverlappingPieces { point: p });
                }
                seen[p] = true;
            }
        }
        Ok(Self { pieces: canonical })
    }

    pub fn empty() -> Self {
        Self { pieces: Vec::new() }
    }

    pub fn pieces(&self) -> &[Vec<usize>] {
        &self.pieces
    }

    /// Sorted union of all pieces.
    pub fn omega(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.pieces.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SparsifyVerdict {
    Feasible,
    Infeasible,
}

/// Achieved quantities of a decomposition against an instance, plus the
/// feasibility verdict.
#[derive(Debug, Clone, Serialize)]
pub struct SparsificationResult {
    pub decomposition: Decomposition,
    /// Mass captured by the union of the pieces.
    pub kappa_achieved: f64,
    /// Minimum distance between distinct pieces; `None` when there are
    /// fewer than two (vacuous separation).
    pub separation_achieved: Option<u32>,
    /// Largest piece diameter; 0 for an empty decomposition.
    pub d_achieved: u32,
    pub verdict: SparsifyVerdict,
}

/// Measures a decomposition against `(kappa, s)`: mass captured, minimal
/// separation, maximal piece diameter, and whether the requirements hold.
pub fn validate_decomposition(
    mu: &MassDistribution,
    dec: &Decomposition,
    kappa: f64,
    s: u32,
) -> SparsificationResult {
    let space = mu.space();
    let kappa_achieved = mu.of_set(&dec.omega());
    let mut separation_achieved: Option<u32> = None;
    for (i, a) in dec.pieces().iter().enumerate() {
        for b in &dec.pieces()[i + 1..] {
            let d = space.set_distance(a, b).expect("pieces are non-empty");
            separation_achieved = Some(separation_achieved.map_or(d, |m| m.min(d)));
        }
    }
    let d_achieved = dec
        .pieces()
        .iter()
        .map(|piece| space.subset_diameter(piece))
        .max()
        .unwrap_or(0);
    let mass_ok = kappa_achieved + KAPPA_SLACK >= kappa;
    let sep_ok = separation_achieved.map_or(true, |d| d > s);
    let verdict = if mass_ok && sep_ok {
        SparsifyVerdict::Feasible
    } else {
        SparsifyVerdict::Infeasible
    };
    SparsificationResult {
        decomposition: dec.clone(),
        kappa_achieved,
        separation_achieved,
        d_achieved,
        verdict,
    }
}

/// Connected components of the "within distance <= s" graph restricted to
/// `omega`, each sorted; the component list is sorted. These are exactly
/// the finest admissible pieces: points at distance <= s are forced into
/// the same piece, and distinct components are automatically more than
/// `s` apart.
fn separation_components(space: &FiniteMetricSpace, omega: &[usize], s: u32) -> Vec<Vec<usize>> {
    let m = omega.len();
    let mut comp = vec![usize::MAX; m];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for start in 0..m {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut stack = vec![start];
        comp[start] = id;
        let mut members = Vec::new();
        while let Some(i) = stack.pop() {
            members.push(omega[i]);
            for j in 0..m {
                if comp[j] == usize::MAX && space.dist(omega[i], omega[j]) <= s {
                    comp[j] = id;
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }
    components.sort();
    components
}

/// Branch-and-bound feasibility check at a fixed diameter budget `d`:
/// does some subset of mass >= kappa exist whose separation components all
/// have diameter <= d? Points are decided in index order; a branch dies
/// when a partial component already exceeds `d` (components only grow) or
/// when even taking every undecided point cannot reach `kappa`.
fn feasible_at(
    space: &FiniteMetricSpace,
    mass: &[f64],
    kappa: f64,
    s: u32,
    d: u32,
) -> bool {
    let n = space.n();
    let suffix_mass: Vec<f64> = {
        let mut acc = vec![0.0; n + 1];
        for i in (0..n).rev() {
            acc[i] = acc[i + 1] + mass[i];
        }
        acc
    };

    fn recurse(
        space: &FiniteMetricSpace,
        mass: &[f64],
        suffix_mass: &[f64],
        kappa: f64,
        s: u32,
        d: u32,
        next: usize,
        included: &mut Vec<usize>,
        included_mass: f64,
    ) -> bool {
        if included_mass + KAPPA_SLACK >= kappa {
            return true;
        }
        if included_mass + suffix_mass[next] + KAPPA_SLACK < kappa {
            return false;
        }
        // include `next`, unless that bursts a component
        included.push(next);
        let ok = {
            let comps = separation_components(space, included, s);
            comps.iter().all(|c| space.subset_diameter(c) <= d)
        };
        if ok
            && recurse(
                space,
                mass,
                suffix_mass,
                kappa,
                s,
                d,
                next + 1,
                included,
                included_mass + mass[next],
            )
        {
            included.pop();
            return true;
        }
        included.pop();
        // exclude `next`
        recurse(space, mass, suffix_mass, kappa, s, d, next + 1, included, included_mass)
    }

    recurse(space, mass, &suffix_mass, kappa, s, d, 0, &mut Vec::new(), 0.0)
}

/// Among all feasible subsets at diameter budget `d`, returns the
/// decomposition into separation components with the lexicographically
/// smallest sorted piece list. Deterministic tie-breaking for golden
/// outputs.
fn best_canonical_at(
    space: &FiniteMetricSpace,
    mass: &[f64],
    kappa: f64,
    s: u32,
    d: u32,
) -> Option<Vec<Vec<usize>>> {
    let n = space.n();
    let mut best: Option<Vec<Vec<usize>>> = None;
    for bits in 0u32..(1u32 << n) {
        let omega: Vec<usize> = (0..n).filter(|&p| bits >> p & 1 == 1).collect();
        let total: f64 = omega.iter().map(|&p| mass[p]).sum();
        if total + KAPPA_SLACK < kappa {
            continue;
        }
        let comps = separation_components(space, &omega, s);
        if comps.iter().any(|c| space.subset_diameter(c) > d) {
            continue;
        }
        if best.as_ref().map_or(true, |b| comps < *b) {
            best = Some(comps);
        }
    }
    best
}

/// Exact minimum-diameter solve. Iterates `D` upward from 0 and decides
/// feasibility at each stage by branch and bound; the returned
/// decomposition is the true optimum with deterministic tie-breaking.
pub fn sparsify_exact(mu: &MassDistribution, kappa: f64, s: u32) -> Result<SparsificationResult> {
    sparsify_exact_with_cap(mu, kappa, s, EXACT_SOLVER_CAP)
}

pub fn sparsify_exact_with_cap(
    mu: &MassDistribution,
    kappa: f64,
    s: u32,
    cap: usize,
) -> Result<SparsificationResult> {
    let space = mu.space();
    let n = space.n();
    if n > cap {
        return Err(Error::SolverCapExceeded { n, cap });
    }
    let diameter = space.diameter();
    for d in 0..=diameter {
        if !feasible_at(space, mu.mass(), kappa, s, d) {
            continue;
        }
        let pieces = best_canonical_at(space, mu.mass(), kappa, s, d)
            .expect("branch and bound found a witness");
        let dec = Decomposition::new(space, pieces)?;
        let mut result = validate_decomposition(mu, &dec, kappa, s);
        debug_assert_eq!(result.verdict, SparsifyVerdict::Feasible);
        result.verdict = SparsifyVerdict::Feasible;
        return Ok(result);
    }
    Ok(SparsificationResult {
        decomposition: Decomposition::empty(),
        kappa_achieved: 0.0,
        separation_achieved: None,
        d_achieved: 0,
        verdict: SparsifyVerdict::Infeasible,
    })
}

/// Greedy heuristic for large instances: grow pieces as balls around
/// points in decreasing-mass order, skipping anything within `s` of an
/// accepted piece, and raise the ball radius until the target mass is
/// reached or the radius exceeds the diameter. The output always
/// re-validates; feasibility is not guaranteed to be optimal.
pub fn sparsify_greedy(mu: &MassDistribution, kappa: f64, s: u32) -> SparsificationResult {
    let space = mu.space();
    let n = space.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        mu.of(b).partial_cmp(&mu.of(a)).expect("masses are finite").then(a.cmp(&b))
    });

    let diameter = space.diameter();
    let mut last = None;
    for radius in 0..=diameter {
        let mut assigned = vec![false; n];
        let mut blocked = vec![false; n];
        let mut pieces: Vec<Vec<usize>> = Vec::new();
        for &p in &order {
            if assigned[p] || blocked[p] {
                continue;
            }
            let piece: Vec<usize> = (0..n)
                .filter(|&q| !assigned[q] && !blocked[q] && space.dist(p, q) <= radius)
                .collect();
            for &q in &piece {
                assigned[q] = true;
            }
            for t in 0..n {
                if !assigned[t]
                    && !blocked[t]
                    && piece.iter().any(|&q| space.dist(t, q) <= s)
                {
                    blocked[t] = true;
                }
            }
            pieces.push(piece);
        }
        let dec = Decomposition::new(space, pieces).expect("greedy pieces are disjoint");
        let result = validate_decomposition(mu, &dec, kappa, s);
        if result.verdict == SparsifyVerdict::Feasible {
            return result;
        }
        last = Some(result);
    }
    let mut result = last.unwrap_or_else(|| SparsificationResult {
        decomposition: Decomposition::empty(),
        kappa_achieved: 0.0,
        separation_achieved: None,
        d_achieved: 0,
        verdict: SparsifyVerdict::Infeasible,
    });
    result.verdict = SparsifyVerdict::Infeasible;
    result
}

/// Exact rational check of the constant bookkeeping behind threshold
/// extraction: with `t = kappa/5` and `eps = kappa/4`, the sum `t + eps`
/// stays strictly below `kappa/2`. Takes `kappa = p/q` and compares
/// `9p/20q < p/2q` in integer arithmetic.
pub fn threshold_margin_holds(p: u64, q: u64) -> bool {
    if p == 0 || q == 0 {
        return false;
    }
    let lhs = 9u128 * p as u128 * 2 * q as u128;
    let rhs = 20u128 * q as u128 * p as u128;
    lhs < rhs
}

/// On-disk shape of an instance:
/// `{"space": label, "mass": [..], "kappa": .., "S": ..}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceDocument {
    pub space: String,
    pub mass: Vec<f64>,
    pub kappa: f64,
    #[serde(rename = "S")]
    pub s: u32,
}

/// On-disk shape of a result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultDocument {
    pub pieces: Vec<Vec<usize>>,
    pub kappa_achieved: f64,
    pub separation_achieved: Option<u32>,
    pub d_achieved: u32,
    pub verdict: SparsifyVerdict,
}

impl SparsificationResult {
    pub fn to_document(&self) -> ResultDocument {
        ResultDocument {
            pieces: self.decomposition.pieces().to_vec(),
            kappa_achieved: self.kappa_achieved,
            separation_achieved: self.separation_achieved,
            d_achieved: self.d_achieved,
            verdict: self.verdict,
        }
    }
}

/// Feasibility of a `(kappa, S)` grid for one mass, used to audit
/// monotonicity: loosening either parameter never loses feasibility.
pub fn feasibility_grid(
    mu: &MassDistribution,
    kappas: &[f64],
    seps: &[u32],
) -> Result<BTreeMap<(usize, usize), bool>> {
    let mut grid = BTreeMap::new();
    for (i, &kappa) in kappas.iter().enumerate() {
        for (j, &s) in seps.iter().enumerate() {
            let feasible =
                sparsify_exact(mu, kappa, s)?.verdict == SparsifyVerdict::Feasible;
            grid.insert((i, j), feasible);
        }
    }
    Ok(grid)
}
