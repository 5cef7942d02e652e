//! Finite metric spaces with integer distances, bounded-geometry profiles,
//! and nested truncation families produced by named generator recipes.
//!
//! Distances are integers (graph/word metrics) and the minimum distance
//! between distinct points is normalized to 1, so every separation and
//! propagation test elsewhere in the crate is exact integer arithmetic.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite metric space: `n` points indexed `0..n` with a symmetric
/// integer distance matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteMetricSpace {
    label: String,
    n: usize,
    dist: Vec<u32>, // row-major n*n
}

impl FiniteMetricSpace {
    /// Builds a space from a full distance matrix, rejecting any metric
    /// axiom violation.
    pub fn new(label: impl Into<String>, rows: &[Vec<u32>]) -> Result<Self> {
        let label = label.into();
        let report = validate_matrix(rows);
        if !report.is_valid() {
            return Err(Error::MetricViolation(report.to_string()));
        }
        let n = rows.len();
        let mut dist = Vec::with_capacity(n * n);
        for row in rows {
            dist.extend_from_slice(row);
        }
        Ok(Self { label, n, dist })
    }

    /// Internal constructor for generator recipes whose output is valid by
    /// construction. Small outputs are still cross-checked in debug builds;
    /// the triangle scan is cubic, so large ones are not.
    pub(crate) fn from_parts(label: String, n: usize, dist: Vec<u32>) -> Self {
        debug_assert_eq!(dist.len(), n * n);
        debug_assert!(
            n > 128
                || Self { label: label.clone(), n, dist: dist.clone() }
                    .validate()
                    .is_valid()
        );
        Self { label, n, dist }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dist(&self, x: usize, y: usize) -> u32 {
        self.dist[x * self.n + y]
    }

    pub fn diameter(&self) -> u32 {
        self.dist.iter().copied().max().unwrap_or(0)
    }

    /// Closed ball membership list, in index order.
    pub fn ball(&self, center: usize, radius: u32) -> Vec<usize> {
        (0..self.n).filter(|&y| self.dist(center, y) <= radius).collect()
    }

    /// Minimum distance between two point sets; `None` when either is empty.
    pub fn set_distance(&self, a: &[usize], b: &[usize]) -> Option<u32> {
        let mut best: Option<u32> = None;
        for &x in a {
            for &y in b {
                let d = self.dist(x, y);
                best = Some(best.map_or(d, |m| m.min(d)));
            }
        }
        best
    }

    /// Largest pairwise distance within a point set; 0 for empty or singleton sets.
    pub fn subset_diameter(&self, pts: &[usize]) -> u32 {
        let mut best = 0;
        for (i, &x) in pts.iter().enumerate() {
            for &y in &pts[i + 1..] {
                best = best.max(self.dist(x, y));
            }
        }
        best
    }

    /// Re-checks the metric axioms on this space's own matrix.
    pub fn validate(&self) -> ValidityReport {
        let rows: Vec<Vec<u32>> = (0..self.n)
            .map(|x| self.dist[x * self.n..(x + 1) * self.n].to_vec())
            .collect();
        validate_matrix(&rows)
    }

    pub fn to_document(&self) -> SpaceDocument {
        SpaceDocument {
            label: self.label.clone(),
            n: self.n,
            dist: (0..self.n)
                .map(|x| self.dist[x * self.n..(x + 1) * self.n].to_vec())
                .collect(),
        }
    }

    pub fn from_document(doc: &SpaceDocument) -> Result<Self> {
        if doc.dist.len() != doc.n {
            return Err(Error::Schema(format!(
                "space '{}' declares n={} but dist has {} rows",
                doc.label,
                doc.n,
                doc.dist.len()
            )));
        }
        Self::new(doc.label.clone(), &doc.dist)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("space serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SpaceDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }
}

/// Two space handles refer to the same space when they are literally the
/// same allocation or agree on label and point count.
pub fn same_space(a: &Arc<FiniteMetricSpace>, b: &Arc<FiniteMetricSpace>) -> bool {
    Arc::ptr_eq(a, b) || (a.label == b.label && a.n == b.n)
}

/// On-disk shape of a space: `{"label": .., "n": .., "dist": [[..]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceDocument {
    pub label: String,
    pub n: usize,
    pub dist: Vec<Vec<u32>>,
}

/// A single metric-axiom violation with its witness points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum MetricViolation {
    /// Row length differs from the declared point count.
    Shape { row: usize, expected: usize, found: usize },
    /// dist(x,x) must be 0.
    NonZeroDiagonal { x: usize, value: u32 },
    /// Distinct points must be at distance >= 1.
    ZeroOffDiagonal { x: usize, y: usize },
    Asymmetric { x: usize, y: usize, forward: u32, backward: u32 },
    /// dist(x,z) > dist(x,y) + dist(y,z).
    Triangle { x: usize, y: usize, z: usize, direct: u32, via: u32 },
}

impl fmt::Display for MetricViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricViolation::Shape { row, expected, found } => {
                write!(f, "row {row} has {found} entries, expected {expected}")
            }
            MetricViolation::NonZeroDiagonal { x, value } => {
                write!(f, "dist({x},{x}) = {value} != 0")
            }
            MetricViolation::ZeroOffDiagonal { x, y } => {
                write!(f, "dist({x},{y}) = 0 for distinct points")
            }
            MetricViolation::Asymmetric { x, y, forward, backward } => {
                write!(f, "dist({x},{y}) = {forward} but dist({y},{x}) = {backward}")
            }
            MetricViolation::Triangle { x, y, z, direct, via } => {
                write!(f, "dist({x},{z}) = {direct} > {via} = dist({x},{y}) + dist({y},{z})")
            }
        }
    }
}

/// Outcome of a metric validation pass. Violations are data, not faults.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidityReport {
    pub violations: Vec<MetricViolation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let shown: Vec<String> = self.violations.iter().take(4).map(|v| v.to_string()).collect();
        write!(f, "{}", shown.join("; "))?;
        if self.violations.len() > 4 {
            write!(f, "; and {} more", self.violations.len() - 4)?;
        }
        Ok(())
    }
}

/// Checks every metric axiom on a raw candidate matrix, reporting each
/// violation with a witness. An empty report means the matrix is a metric.
pub fn validate_matrix(rows: &[Vec<u32>]) -> ValidityReport {
    let n = rows.len();
    let mut violations = Vec::new();
    for (x, row) in rows.iter().enumerate() {
        if row.len() != n {
            violations.push(MetricViolation::Shape { row: x, expected: n, found: row.len() });
        }
    }
    if !violations.is_empty() {
        return ValidityReport { violations };
    }
    for x in 0..n {
        if rows[x][x] != 0 {
            violations.push(MetricViolation::NonZeroDiagonal { x, value: rows[x][x] });
        }
        for y in (x + 1)..n {
            if rows[x][y] != rows[y][x] {
                violations.push(MetricViolation::Asymmetric {
                    x,
                    y,
                    forward: rows[x][y],
                    backward: rows[y][x],
                });
            }
            if rows[x][y] == 0 {
                violations.push(MetricViolation::ZeroOffDiagonal { x, y });
            }
        }
    }
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                let via = rows[x][y] as u64 + rows[y][z] as u64;
                if (rows[x][z] as u64) > via {
                    violations.push(MetricViolation::Triangle {
                        x,
                        y,
                        z,
                        direct: rows[x][z],
                        via: via as u32,
                    });
                }
            }
        }
    }
    ValidityReport { violations }
}

/// Ball-growth profile `R -> N_R`: the largest number of points in any
/// closed ball of radius `R`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryProfile {
    values: Vec<u32>, // index R in 0..=r_max
}

impl GeometryProfile {
    pub fn r_max(&self) -> u32 {
        (self.values.len() - 1) as u32
    }

    /// N_R, clamped to the last recorded radius.
    pub fn value(&self, r: u32) -> u32 {
        let idx = (r as usize).min(self.values.len() - 1);
        self.values[idx]
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    /// Pointwise maximum of two profiles over their common range.
    pub fn pointwise_max(&self, other: &GeometryProfile) -> GeometryProfile {
        let len = self.values.len().max(other.values.len());
        let values = (0..len as u32).map(|r| self.value(r).max(other.value(r))).collect();
        GeometryProfile { values }
    }

    /// True when every entry of `self` is bounded by `bound` at the same radius.
    pub fn bounded_by(&self, bound: &GeometryProfile) -> bool {
        (0..=self.r_max()).all(|r| self.value(r) <= bound.value(r))
    }
}

/// `entries(R) = max_x |B(x,R)|` for `0 <= R <= r_max`.
pub fn bounded_geometry_profile(space: &FiniteMetricSpace, r_max: u32) -> GeometryProfile {
    let n = space.n();
    let mut values = vec![0u32; r_max as usize + 1];
    let mut counts = vec![0u32; r_max as usize + 2];
    for x in 0..n {
        counts.iter_mut().for_each(|c| *c = 0);
        for y in 0..n {
            let d = space.dist(x, y);
            if d <= r_max {
                counts[d as usize] += 1;
            }
        }
        let mut acc = 0u32;
        for r in 0..=r_max as usize {
            acc += counts[r];
            values[r] = values[r].max(acc);
        }
    }
    GeometryProfile { values }
}

// ---------------------------------------------------------------------------
// Generator recipes
// ---------------------------------------------------------------------------

/// Built-in matrix group presets for Cayley-ball spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "group", rename_all = "kebab-case")]
pub enum GroupPreset {
    /// Free abelian group of the given rank with standard generators.
    ZPower { rank: usize },
    /// Rank-two free group via the Sanov embedding in SL(2,Z).
    FreeRank2,
    /// Discrete Heisenberg group of 3x3 unitriangular integer matrices.
    Heisenberg,
}

impl GroupPreset {
    pub fn name(&self) -> String {
        match self {
            GroupPreset::ZPower { rank } => format!("z{rank}"),
            GroupPreset::FreeRank2 => "free2".to_string(),
            GroupPreset::Heisenberg => "heis".to_string(),
        }
    }

    /// The preset's symmetric generating set as integer matrices.
    pub fn generators(&self) -> Vec<IntMatrix> {
        match self {
            GroupPreset::ZPower { rank } => {
                let d = *rank;
                let mut gens = Vec::with_capacity(2 * d);
                for i in 0..d {
                    for sign in [1i64, -1] {
                        let mut m = IntMatrix::identity(d + 1);
                        m.set(i, d, sign);
                        gens.push(m);
                    }
                }
                gens
            }
            GroupPreset::FreeRank2 => {
                let a = IntMatrix::from_rows(&[&[1, 2], &[0, 1]]);
                let a_inv = IntMatrix::from_rows(&[&[1, -2], &[0, 1]]);
                let b = IntMatrix::from_rows(&[&[1, 0], &[2, 1]]);
                let b_inv = IntMatrix::from_rows(&[&[1, 0], &[-2, 1]]);
                vec![a, a_inv, b, b_inv]
            }
            GroupPreset::Heisenberg => {
                let x = IntMatrix::from_rows(&[&[1, 1, 0], &[0, 1, 0], &[0, 0, 1]]);
                let x_inv = IntMatrix::from_rows(&[&[1, -1, 0], &[0, 1, 0], &[0, 0, 1]]);
                let y = IntMatrix::from_rows(&[&[1, 0, 0], &[0, 1, 1], &[0, 0, 1]]);
                let y_inv = IntMatrix::from_rows(&[&[1, 0, 0], &[0, 1, -1], &[0, 0, 1]]);
                vec![x, x_inv, y, y_inv]
            }
        }
    }
}

/// Recipe for a space or a nested family of truncations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorRecipe {
    /// Path graph; `size` is the point count.
    Path,
    /// d-dimensional grid graph with axis edges (l1 metric); `size` is the side.
    Grid { dim: usize },
    /// Grid with diagonal moves added (l-infinity metric); `size` is the side.
    GridDiag { dim: usize },
    /// Rooted tree where every node has `branching` children; `size` is the depth.
    Tree { branching: usize },
    /// Word-metric ball in a matrix group preset; `size` is the radius.
    CayleyBall { preset: GroupPreset },
}

impl GeneratorRecipe {
    pub fn name(&self) -> String {
        match self {
            GeneratorRecipe::Path => "path".to_string(),
            GeneratorRecipe::Grid { dim } => format!("grid{dim}"),
            GeneratorRecipe::GridDiag { dim } => format!("grid{dim}-diag"),
            GeneratorRecipe::Tree { branching } => format!("tree{branching}"),
            GeneratorRecipe::CayleyBall { preset } => format!("cayley-{}", preset.name()),
        }
    }

    /// Parses CLI-style names: `path`, `grid2`, `grid2-diag`, `tree3`,
    /// `cayley-z2`, `cayley-free2`, `cayley-heis`.
    pub fn parse(name: &str) -> Result<Self> {
        if name == "path" {
            return Ok(GeneratorRecipe::Path);
        }
        if let Some(rest) = name.strip_prefix("grid") {
            let (digits, diag) = match rest.strip_suffix("-diag") {
                Some(d) => (d, true),
                None => (rest, false),
            };
            let dim: usize = digits
                .parse()
                .map_err(|_| Error::InvalidRecipe(format!("bad grid dimension in '{name}'")))?;
            if dim == 0 || dim > 4 {
                return Err(Error::InvalidRecipe(format!("grid dimension {dim} out of range 1..=4")));
            }
            return Ok(if diag { GeneratorRecipe::GridDiag { dim } } else { GeneratorRecipe::Grid { dim } });
        }
        if let Some(rest) = name.strip_prefix("tree") {
            let branching: usize = rest
                .parse()
                .map_err(|_| Error::InvalidRecipe(format!("bad branching in '{name}'")))?;
            if branching == 0 {
                return Err(Error::InvalidRecipe("tree branching must be >= 1".to_string()));
            }
            return Ok(GeneratorRecipe::Tree { branching });
        }
        if let Some(rest) = name.strip_prefix("cayley-") {
            if let Some(digits) = rest.strip_prefix('z') {
                let rank: usize = digits
                    .parse()
                    .map_err(|_| Error::InvalidRecipe(format!("bad rank in '{name}'")))?;
                if rank == 0 || rank > 3 {
                    return Err(Error::InvalidRecipe(format!("z-power rank {rank} out of range 1..=3")));
                }
                return Ok(GeneratorRecipe::CayleyBall { preset: GroupPreset::ZPower { rank } });
            }
            return match rest {
                "free2" => Ok(GeneratorRecipe::CayleyBall { preset: GroupPreset::FreeRank2 }),
                "heis" => Ok(GeneratorRecipe::CayleyBall { preset: GroupPreset::Heisenberg }),
                _ => Err(Error::InvalidRecipe(format!("unknown group preset '{rest}'"))),
            };
        }
        Err(Error::InvalidRecipe(format!("unknown recipe '{name}'")))
    }
}

/// Builds a validated space. The meaning of `size` is recipe-specific:
/// point count for paths, side length for grids, depth for trees, and ball
/// radius for Cayley recipes.
pub fn build_space(recipe: &GeneratorRecipe, size: usize) -> Result<Arc<FiniteMetricSpace>> {
    if size == 0 {
        return Err(Error::InvalidRecipe("size must be >= 1".to_string()));
    }
    let label = format!("{}-{}", recipe.name(), size);
    let (points, metric) = enumerate(recipe, EnumerationBudget::RecipeSize(size))?;
    Ok(Arc::new(assemble(label, &points, &metric)))
}

/// How far to run a recipe's canonical enumeration.
enum EnumerationBudget {
    /// Recipe-specific size parameter (side, depth, radius, count).
    RecipeSize(usize),
    /// At least this many points of the canonical enumeration.
    PointCount(usize),
}

/// Abstract point carrier per recipe, paired with a distance closure.
enum Carrier {
    Path,
    Grid { dim: usize, diag: bool },
    Tree { branching: usize },
    Cayley { word_len: HashMap<IntMatrix, u32>, elems: Vec<(IntMatrix, IntMatrix)> },
}

/// Canonical nested enumeration for a recipe: the first `m` points of a
/// larger run are always exactly the points of a smaller run, with the
/// induced metric independent of the cutoff.
fn enumerate(recipe: &GeneratorRecipe, budget: EnumerationBudget) -> Result<(Vec<usize>, Carrier)> {
    match recipe {
        GeneratorRecipe::Path => {
            let count = match budget {
                EnumerationBudget::RecipeSize(s) => s,
                EnumerationBudget::PointCount(c) => c,
            };
            Ok(((0..count).collect(), Carrier::Path))
        }
        GeneratorRecipe::Grid { dim } | GeneratorRecipe::GridDiag { dim } => {
            let diag = matches!(recipe, GeneratorRecipe::GridDiag { .. });
            let count = match budget {
                EnumerationBudget::RecipeSize(side) => side.pow(*dim as u32),
                EnumerationBudget::PointCount(c) => c,
            };
            Ok(((0..count).collect(), Carrier::Grid { dim: *dim, diag }))
        }
        GeneratorRecipe::Tree { branching } => {
            let count = match budget {
                EnumerationBudget::RecipeSize(depth) => {
                    // nodes of the complete tree with `depth` levels
                    let b = *branching;
                    if b == 1 {
                        depth
                    } else {
                        let mut total = 0usize;
                        let mut level = 1usize;
                        for _ in 0..depth {
                            total += level;
                            level *= b;
                        }
                        total
                    }
                }
                EnumerationBudget::PointCount(c) => c,
            };
            Ok(((0..count).collect(), Carrier::Tree { branching: *branching }))
        }
        GeneratorRecipe::CayleyBall { preset } => {
            let gens = preset.generators();
            let (order, word_len) = match budget {
                EnumerationBudget::RecipeSize(radius) => cayley_bfs(&gens, BfsStop::Radius(radius as u32))?,
                EnumerationBudget::PointCount(c) => cayley_bfs(&gens, BfsStop::Count(c))?,
            };
            let count = match budget {
                EnumerationBudget::RecipeSize(_) => order.len(),
                EnumerationBudget::PointCount(c) => c,
            };
            // Word lengths up to twice the deepest kept element are needed
            // so the induced d(g,h) = |g^-1 h| lookups never fall off the
            // table; a second BFS to that radius supplies them.
            let keep = &order[..count];
            let max_len = keep.iter().map(|(g, _)| word_len[g]).max().unwrap_or(0);
            let (_, word_len_2r) = cayley_bfs(&gens, BfsStop::Radius(2 * max_len))?;
            Ok((
                (0..count).collect(),
                Carrier::Cayley { word_len: word_len_2r, elems: keep.to_vec() },
            ))
        }
    }
}

fn assemble(label: String, points: &[usize], carrier: &Carrier) -> FiniteMetricSpace {
    let n = points.len();
    let mut dist = vec![0u32; n * n];
    match carrier {
        Carrier::Path => {
            for (i, &p) in points.iter().enumerate() {
                for (j, &q) in points.iter().enumerate() {
                    dist[i * n + j] = (p as i64 - q as i64).unsigned_abs() as u32;
                }
            }
        }
        Carrier::Grid { dim, diag } => {
            let coords: Vec<Vec<i64>> = points.iter().map(|&p| grid_point(*dim, p)).collect();
            for i in 0..n {
                for j in 0..n {
                    let mut l1 = 0i64;
                    let mut linf = 0i64;
                    for a in 0..*dim {
                        let delta = (coords[i][a] - coords[j][a]).abs();
                        l1 += delta;
                        linf = linf.max(delta);
                    }
                    dist[i * n + j] = if *diag { linf as u32 } else { l1 as u32 };
                }
            }
        }
        Carrier::Tree { branching } => {
            let depths: Vec<u32> = points.iter().map(|&p| tree_depth(*branching, p)).collect();
            for i in 0..n {
                for j in 0..n {
                    dist[i * n + j] = tree_distance(*branching, points[i], depths[i], points[j], depths[j]);
                }
            }
        }
        Carrier::Cayley { word_len, elems } => {
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let rel = elems[i].1.mul(&elems[j].0).expect("ball product overflow");
                    dist[i * n + j] = *word_len
                        .get(&rel)
                        .expect("relative element outside doubled ball");
                }
            }
        }
    }
    FiniteMetricSpace::from_parts(label, n, dist)
}

/// Coordinates of the p-th point in shell-lexicographic order on the
/// infinite non-negative grid: shells are indexed by the maximum
/// coordinate, so any side-s grid is a prefix of any larger one.
fn grid_point(dim: usize, p: usize) -> Vec<i64> {
    let mut shell = 0usize;
    let mut below = 0usize; // points with max coordinate < shell
    loop {
        let cube = (shell + 1).pow(dim as u32);
        if p < cube {
            break;
        }
        below = cube;
        shell += 1;
    }
    let mut rank = p - below;
    // enumerate lexicographically the points with max coordinate == shell
    let mut coords = vec![0i64; dim];
    let mut idx = 0usize;
    'outer: for tuple in GridTupleIter::new(dim, shell + 1) {
        if tuple.iter().max().copied().unwrap_or(0) as usize == shell {
            if rank == 0 {
                coords = tuple;
                break 'outer;
            }
            rank -= 1;
        }
        idx += 1;
        debug_assert!(idx <= (shell + 1).pow(dim as u32));
    }
    coords
}

/// Lexicographic iterator over {0..side-1}^dim.
struct GridTupleIter {
    dim: usize,
    side: usize,
    next: Option<Vec<i64>>,
}

impl GridTupleIter {
    fn new(dim: usize, side: usize) -> Self {
        Self { dim, side, next: Some(vec![0; dim]) }
    }
}

impl Iterator for GridTupleIter {
    type Item = Vec<i64>;

    fn next(&mut self) -> Option<Vec<i64>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        for a in (0..self.dim).rev() {
            if (succ[a] as usize) + 1 < self.side {
                succ[a] += 1;
                succ[a + 1..].iter_mut().for_each(|c| *c = 0);
                self.next = Some(succ);
                break;
            }
        }
        Some(current)
    }
}

/// Depth of node `p` in the level-order (heap) layout of the infinite
/// `b`-ary rooted tree.
fn tree_depth(b: usize, p: usize) -> u32 {
    if b == 1 {
        return p as u32;
    }
    let mut depth = 0u32;
    let mut first = 0usize; // first index at this depth
    let mut width = 1usize;
    while p >= first + width {
        first += width;
        width *= b;
        depth += 1;
    }
    depth
}

fn tree_parent(b: usize, p: usize) -> usize {
    if b == 1 {
        return p - 1;
    }
    (p - 1) / b
}

fn tree_distance(b: usize, mut u: usize, du: u32, mut v: usize, dv: u32) -> u32 {
    let (mut du, mut dv) = (du, dv);
    let mut steps = 0u32;
    while du > dv {
        u = tree_parent(b, u);
        du -= 1;
        steps += 1;
    }
    while dv > du {
        v = tree_parent(b, v);
        dv -= 1;
        steps += 1;
    }
    while u != v {
        u = tree_parent(b, u);
        v = tree_parent(b, v);
        steps += 2;
    }
    steps
}

// ---------------------------------------------------------------------------
// Integer matrix groups
// ---------------------------------------------------------------------------

/// Small dense integer matrix; the element type for Cayley-ball recipes.
/// All arithmetic is checked so word-metric computations are exact or fail
/// loudly.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IntMatrix {
    size: usize,
    data: Vec<i64>,
}

impl IntMatrix {
    pub fn identity(size: usize) -> Self {
        let mut data = vec![0i64; size * size];
        for i in 0..size {
            data[i * size + i] = 1;
        }
        Self { size, data }
    }

    pub fn from_rows(rows: &[&[i64]]) -> Self {
        let size = rows.len();
        let mut data = Vec::with_capacity(size * size);
        for row in rows {
            assert_eq!(row.len(), size, "square matrix required");
            data.extend_from_slice(row);
        }
        Self { size, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn get(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.size + c]
    }

    fn set(&mut self, r: usize, c: usize, v: i64) {
        self.data[r * self.size + c] = v;
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity(self.size)
    }

    pub fn mul(&self, other: &IntMatrix) -> Result<IntMatrix> {
        assert_eq!(self.size, other.size);
        let n = self.size;
        let mut out = IntMatrix { size: n, data: vec![0; n * n] };
        for r in 0..n {
            for c in 0..n {
                let mut acc: i64 = 0;
                for k in 0..n {
                    let term = self
                        .get(r, k)
                        .checked_mul(other.get(k, c))
                        .ok_or(Error::Overflow)?;
                    acc = acc.checked_add(term).ok_or(Error::Overflow)?;
                }
                out.set(r, c, acc);
            }
        }
        Ok(out)
    }
}

enum BfsStop {
    Radius(u32),
    Count(usize),
}

/// Breadth-first enumeration of a matrix group from the identity.
///
/// Returns the visit order as `(element, inverse)` pairs together with the
/// word-length table. Inverses are carried along the search so no matrix
/// inversion is ever needed: `inv(g s) = inv(s) inv(g)`.
fn cayley_bfs(
    generators: &[IntMatrix],
    stop: BfsStop,
) -> Result<(Vec<(IntMatrix, IntMatrix)>, HashMap<IntMatrix, u32>)> {
    validate_generating_set(generators)?;
    let size = generators[0].size();
    let inverses = pair_inverses(generators)?;

    let identity = IntMatrix::identity(size);
    let mut word_len: HashMap<IntMatrix, u32> = HashMap::new();
    let mut order: Vec<(IntMatrix, IntMatrix)> = Vec::new();
    let mut queue: VecDeque<(IntMatrix, IntMatrix)> = VecDeque::new();

    word_len.insert(identity.clone(), 0);
    order.push((identity.clone(), identity.clone()));
    queue.push_back((identity.clone(), identity));

    while let Some((g, g_inv)) = queue.pop_front() {
        let depth = word_len[&g];
        // Discovery order is a fixed infinite sequence (FIFO queue,
        // generators expanded in declaration order), so any stopping rule
        // yields a prefix of the same enumeration.
        let done = match stop {
            BfsStop::Radius(r) => depth >= r,
            BfsStop::Count(c) => order.len() >= c,
        };
        if done {
            continue;
        }
        for (s, s_inv) in generators.iter().zip(&inverses) {
            let h = g.mul(s)?;
            if word_len.contains_key(&h) {
                continue;
            }
            let h_inv = s_inv.mul(&g_inv)?;
            word_len.insert(h.clone(), depth + 1);
            order.push((h.clone(), h_inv.clone()));
            queue.push_back((h, h_inv));
        }
    }

    if let BfsStop::Count(c) = stop {
        if order.len() < c {
            return Err(Error::InvalidRecipe(format!(
                "group enumeration exhausted at {} elements, {} requested",
                order.len(),
                c
            )));
        }
    }
    Ok((order, word_len))
}

/// A generating set must be non-empty, square matrices of one size,
/// identity-free, and closed under inverses.
pub fn validate_generating_set(generators: &[IntMatrix]) -> Result<()> {
    if generators.is_empty() {
        return Err(Error::InvalidGeneratingSet("empty set".to_string()));
    }
    let size = generators[0].size();
    for (i, g) in generators.iter().enumerate() {
        if g.size() != size {
            return Err(Error::InvalidGeneratingSet(format!(
                "generator {i} has size {} but generator 0 has size {size}",
                g.size()
            )));
        }
        if g.is_identity() {
            return Err(Error::InvalidGeneratingSet(format!("generator {i} is the identity")));
        }
    }
    pair_inverses(generators).map(|_| ())
}

fn pair_inverses(generators: &[IntMatrix]) -> Result<Vec<IntMatrix>> {
    let mut inverses = Vec::with_capacity(generators.len());
    'outer: for (i, g) in generators.iter().enumerate() {
        for h in generators {
            if g.mul(h)?.is_identity() && h.mul(g)?.is_identity() {
                inverses.push(h.clone());
                continue 'outer;
            }
        }
        return Err(Error::InvalidGeneratingSet(format!(
            "generator {i} has no inverse in the set (set is not symmetric)"
        )));
    }
    Ok(inverses)
}

/// Word-metric ball with a caller-supplied generating set. The stored
/// metric is the ambient group word metric restricted to the ball, so
/// in-ball shortest paths never distort distances near the boundary.
pub fn cayley_ball_with_generators(
    label: impl Into<String>,
    generators: &[IntMatrix],
    radius: u32,
) -> Result<Arc<FiniteMetricSpace>> {
    let (order, _) = cayley_bfs(generators, BfsStop::Radius(radius))?;
    let (_, word_len_2r) = cayley_bfs(generators, BfsStop::Radius(2 * radius))?;
    let points: Vec<usize> = (0..order.len()).collect();
    let carrier = Carrier::Cayley { word_len: word_len_2r, elems: order };
    Ok(Arc::new(assemble(label.into(), &points, &carrier)))
}

// ---------------------------------------------------------------------------
// Families
// ---------------------------------------------------------------------------

/// A nested family of finite truncations of one generator recipe, indexed
/// by point count. Each truncation is a prefix of the recipe's canonical
/// enumeration, so smaller spaces embed isometrically in larger ones and
/// family-uniform constants are meaningful without re-indexing.
#[derive(Debug, Clone)]
pub struct SpaceFamily {
    generator: GeneratorRecipe,
    indices: Vec<usize>,
    spaces: BTreeMap<usize, Arc<FiniteMetricSpace>>,
}

impl SpaceFamily {
    /// Builds truncations with the given point counts (ascending).
    pub fn build(generator: GeneratorRecipe, counts: &[usize]) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidRecipe("family needs at least one index".to_string()));
        }
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted[0] == 0 {
            return Err(Error::InvalidRecipe("truncation sizes must be >= 1".to_string()));
        }
        let max = *sorted.last().unwrap();
        let (points, carrier) = enumerate(&generator, EnumerationBudget::PointCount(max))?;
        if points.len() < max {
            return Err(Error::InvalidRecipe(format!(
                "recipe {} yields only {} points, {} requested",
                generator.name(),
                points.len(),
                max
            )));
        }
        let mut spaces = BTreeMap::new();
        for &count in &sorted {
            let label = format!("{}#{}", generator.name(), count);
            let space = assemble(label, &points[..count], &carrier);
            spaces.insert(count, Arc::new(space));
        }
        let family = Self { generator, indices: sorted, spaces };
        family.check_nesting()?;
        Ok(family)
    }

    pub fn generator(&self) -> &GeneratorRecipe {
        &self.generator
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn space(&self, index: usize) -> Option<&Arc<FiniteMetricSpace>> {
        self.spaces.get(&index)
    }

    pub fn spaces(&self) -> impl Iterator<Item = (&usize, &Arc<FiniteMetricSpace>)> {
        self.spaces.iter()
    }

    pub fn largest(&self) -> &Arc<FiniteMetricSpace> {
        self.spaces.values().next_back().expect("non-empty family")
    }

    /// Verifies that each truncation's matrix is the leading principal
    /// submatrix of the next one's.
    pub fn check_nesting(&self) -> Result<()> {
        for pair in self.indices.windows(2) {
            let small = &self.spaces[&pair[0]];
            let large = &self.spaces[&pair[1]];
            for x in 0..small.n() {
                for y in 0..small.n() {
                    if small.dist(x, y) != large.dist(x, y) {
                        return Err(Error::FamilyNesting(format!(
                            "dist({x},{y}) differs between truncations {} and {}: {} vs {}",
                            pair[0],
                            pair[1],
                            small.dist(x, y),
                            large.dist(x, y)
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// One profile dominating every member, i.e. the pointwise maximum of
    /// the members' profiles.
    pub fn family_profile(&self, r_max: u32) -> GeometryProfile {
        self.spaces
            .values()
            .map(|s| bounded_geometry_profile(s, r_max))
            .reduce(|a, b| a.pointwise_max(&b))
            .expect("non-empty family")
    }

    pub fn to_document(&self) -> FamilyDocument {
        FamilyDocument {
            generator: self.generator.clone(),
            indices: self.indices.clone(),
            spaces: self
                .spaces
                .iter()
                .map(|(idx, sp)| (idx.to_string(), sp.to_document()))
                .collect(),
        }
    }

    pub fn from_document(doc: &FamilyDocument) -> Result<Self> {
        let mut spaces = BTreeMap::new();
        for (key, space_doc) in &doc.spaces {
            let index: usize = key
                .parse()
                .map_err(|_| Error::Schema(format!("family index '{key}' is not an integer")))?;
            spaces.insert(index, Arc::new(FiniteMetricSpace::from_document(space_doc)?));
        }
        let mut indices = doc.indices.clone();
        indices.sort_unstable();
        for index in &indices {
            if !spaces.contains_key(index) {
                return Err(Error::Schema(format!("family index {index} has no space entry")));
            }
        }
        let family = Self { generator: doc.generator.clone(), indices, spaces };
        family.check_nesting()?;
        Ok(family)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("family serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FamilyDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }
}

/// On-disk shape of a family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyDocument {
    pub generator: GeneratorRecipe,
    pub indices: Vec<usize>,
    pub spaces: BTreeMap<String, SpaceDocument>,
}

/// Label-keyed collection of spaces used to resolve serialized references.
#[derive(Debug, Default, Clone)]
pub struct SpaceStore {
    spaces: BTreeMap<String, Arc<FiniteMetricSpace>>,
}

impl SpaceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, space: Arc<FiniteMetricSpace>) {
        self.spaces.insert(space.label().to_string(), space);
    }

    pub fn get(&self, label: &str) -> Result<Arc<FiniteMetricSpace>> {
        self.spaces
            .get(label)
            .cloned()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.spaces.keys().map(|s| s.as_str())
    }
}
