//! Sparse algebra of finite-propagation block operators over finite metric
//! spaces.
//!
//! An operator is a sparse map from point pairs `(x, y)` to complex
//! `k_row x k_col` blocks. Its propagation is the largest distance carried
//! by a stored block, so the band structure is tracked exactly in integer
//! arithmetic while the entries stay floating point.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{same_space, FiniteMetricSpace, SpaceStore};

/// Blocks whose entries all fall below this after arithmetic are dropped,
/// keeping sparsity canonical without disturbing 1e-10-level assertions.
pub const PRUNE_TOL: f64 = 1e-14;

/// Numerical floor for reading "this block is non-zero" in support scans.
pub const SUPPORT_FLOOR: f64 = 1e-12;

/// Default cap on dense assembly for norm evaluation.
pub const DENSE_LIMIT: usize = 4096;

/// Relative tolerance of the power iteration inside [`BandOperator::operator_norm`].
pub const NORM_REL_TOL: f64 = 1e-12;

fn block_max_abs(block: &DMatrix<Complex64>) -> f64 {
    block.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Sparse block matrix indexed by two spaces with tracked propagation.
#[derive(Debug)]
pub struct BandOperator {
    row_space: Arc<FiniteMetricSpace>,
    col_space: Arc<FiniteMetricSpace>,
    k_row: usize,
    k_col: usize,
    blocks: BTreeMap<(usize, usize), DMatrix<Complex64>>,
    cached_propagation: OnceLock<u32>,
}

impl Clone for BandOperator {
    fn clone(&self) -> Self {
        Self {
            row_space: self.row_space.clone(),
            col_space: self.col_space.clone(),
            k_row: self.k_row,
            k_col: self.k_col,
            blocks: self.blocks.clone(),
            cached_propagation: self.cached_propagation.clone(),
        }
    }
}

impl BandOperator {
    /// Builds an operator from explicit blocks. Exact-zero blocks are
    /// dropped; block shapes and indices are checked.
    pub fn new(
        row_space: Arc<FiniteMetricSpace>,
        col_space: Arc<FiniteMetricSpace>,
        k_row: usize,
        k_col: usize,
        blocks: BTreeMap<(usize, usize), DMatrix<Complex64>>,
    ) -> Result<Self> {
        if k_row == 0 || k_col == 0 {
            return Err(Error::ShapeMismatch("fiber dimensions must be positive".to_string()));
        }
        let mut kept = BTreeMap::new();
        for ((x, y), block) in blocks {
            if x >= row_space.n() || y >= col_space.n() {
                return Err(Error::ShapeMismatch(format!(
                    "block index ({x},{y}) outside {} x {}",
                    row_space.n(),
                    col_space.n()
                )));
            }
            if block.nrows() != k_row || block.ncols() != k_col {
                return Err(Error::ShapeMismatch(format!(
                    "block at ({x},{y}) is {}x{}, expected {k_row}x{k_col}",
                    block.nrows(),
                    block.ncols()
                )));
            }
            if block_max_abs(&block) > 0.0 {
                kept.insert((x, y), block);
            }
        }
        Ok(Self {
            row_space,
            col_space,
            k_row,
            k_col,
            blocks: kept,
            cached_propagation: OnceLock::new(),
        })
    }

    pub fn zero(
        row_space: Arc<FiniteMetricSpace>,
        col_space: Arc<FiniteMetricSpace>,
        k_row: usize,
        k_col: usize,
    ) -> Self {
        Self {
            row_space,
            col_space,
            k_row,
            k_col,
            blocks: BTreeMap::new(),
            cached_propagation: OnceLock::new(),
        }
    }

    pub fn identity(space: Arc<FiniteMetricSpace>, k: usize) -> Self {
        let blocks = (0..space.n())
            .map(|x| ((x, x), DMatrix::identity(k, k)))
            .collect();
        Self {
            row_space: space.clone(),
            col_space: space,
            k_row: k,
            k_col: k,
            blocks,
            cached_propagation: OnceLock::new(),
        }
    }

    pub fn row_space(&self) -> &Arc<FiniteMetricSpace> {
        &self.row_space
    }

    pub fn col_space(&self) -> &Arc<FiniteMetricSpace> {
        &self.col_space
    }

    pub fn k_row(&self) -> usize {
        self.k_row
    }

    pub fn k_col(&self) -> usize {
        self.k_col
    }

    pub fn block(&self, x: usize, y: usize) -> Option<&DMatrix<Complex64>> {
        self.blocks.get(&(x, y))
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&(usize, usize), &DMatrix<Complex64>)> {
        self.blocks.iter()
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn is_square(&self) -> bool {
        same_space(&self.row_space, &self.col_space) && self.k_row == self.k_col
    }

    /// Largest distance over which a block is present; 0 for the zero
    /// operator (the supremum over an empty set is taken as 0 so the
    /// subadditivity inequalities stay total). Only defined when both
    /// index spaces agree.
    pub fn propagation(&self) -> Result<u32> {
        if !same_space(&self.row_space, &self.col_space) {
            return Err(Error::RectangularPropagation {
                row: self.row_space.label().to_string(),
                col: self.col_space.label().to_string(),
            });
        }
        Ok(*self.cached_propagation.get_or_init(|| {
            self.blocks
                .keys()
                .map(|&(x, y)| self.row_space.dist(x, y))
                .max()
                .unwrap_or(0)
        }))
    }

    fn check_same_shape(&self, other: &BandOperator) -> Result<()> {
        if !same_space(&self.row_space, &other.row_space)
            || !same_space(&self.col_space, &other.col_space)
            || self.k_row != other.k_row
            || self.k_col != other.k_col
        {
            return Err(Error::ShapeMismatch(format!(
                "({} x {}, {}x{}) vs ({} x {}, {}x{})",
                self.row_space.label(),
                self.col_space.label(),
                self.k_row,
                self.k_col,
                other.row_space.label(),
                other.col_space.label(),
                other.k_row,
                other.k_col
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &BandOperator) -> Result<BandOperator> {
        self.check_same_shape(other)?;
        let mut blocks = self.blocks.clone();
        for (&key, block) in &other.blocks {
            blocks
                .entry(key)
                .and_modify(|b| *b += block)
                .or_insert_with(|| block.clone());
        }
        blocks.retain(|_, b| block_max_abs(b) > PRUNE_TOL);
        Ok(BandOperator {
            row_space: self.row_space.clone(),
            col_space: self.col_space.clone(),
            k_row: self.k_row,
            k_col: self.k_col,
            blocks,
            cached_propagation: OnceLock::new(),
        })
    }

    pub fn scale(&self, factor: Complex64) -> BandOperator {
        let mut blocks: BTreeMap<_, _> =
            self.blocks.iter().map(|(&k, b)| (k, b * factor)).collect();
        blocks.retain(|_, b| block_max_abs(b) > PRUNE_TOL);
        BandOperator {
            row_space: self.row_space.clone(),
            col_space: self.col_space.clone(),
            k_row: self.k_row,
            k_col: self.k_col,
            blocks,
            cached_propagation: OnceLock::new(),
        }
    }

    pub fn sub(&self, other: &BandOperator) -> Result<BandOperator> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Sparse block product `self * other`.
    pub fn mul(&self, other: &BandOperator) -> Result<BandOperator> {
        if !same_space(&self.col_space, &other.row_space) || self.k_col != other.k_row {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply: inner shapes ({}, {}) vs ({}, {})",
                self.col_space.label(),
                self.k_col,
                other.row_space.label(),
                other.k_row
            )));
        }
        // bucket the right factor's blocks by row point
        let mut by_row: BTreeMap<usize, Vec<(usize, &DMatrix<Complex64>)>> = BTreeMap::new();
        for (&(y, z), block) in &other.blocks {
            by_row.entry(y).or_default().push((z, block));
        }
        let mut blocks: BTreeMap<(usize, usize), DMatrix<Complex64>> = BTreeMap::new();
        for (&(x, y), left) in &self.blocks {
            let Some(rights) = by_row.get(&y) else { continue };
            for &(z, right) in rights {
                let product = left * right;
                blocks
                    .entry((x, z))
                    .and_modify(|b| *b += &product)
                    .or_insert(product);
            }
        }
        blocks.retain(|_, b| block_max_abs(b) > PRUNE_TOL);
        Ok(BandOperator {
            row_space: self.row_space.clone(),
            col_space: other.col_space.clone(),
            k_row: self.k_row,
            k_col: other.k_col,
            blocks,
            cached_propagation: OnceLock::new(),
        })
    }

    /// Conjugate transpose: indices swap and blocks are conjugate-transposed.
    pub fn adjoint(&self) -> BandOperator {
        let blocks = self
            .blocks
            .iter()
            .map(|(&(x, y), b)| ((y, x), b.adjoint()))
            .collect();
        BandOperator {
            row_space: self.col_space.clone(),
            col_space: self.row_space.clone(),
            k_row: self.k_col,
            k_col: self.k_row,
            blocks,
            cached_propagation: OnceLock::new(),
        }
    }

    /// Largest entry distance between `self` and `other`, for oracle
    /// comparisons. Shapes must agree.
    pub fn max_entry_distance(&self, other: &BandOperator) -> Result<f64> {
        self.check_same_shape(other)?;
        let diff = self.sub(other)?;
        Ok(diff.blocks.values().map(block_max_abs).fold(0.0, f64::max))
    }

    /// Dense assembly with row index `x * k_row + i`, column `y * k_col + j`.
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let rows = self.row_space.n() * self.k_row;
        let cols = self.col_space.n() * self.k_col;
        let mut dense = DMatrix::zeros(rows, cols);
        for (&(x, y), block) in &self.blocks {
            dense
                .view_mut((x * self.k_row, y * self.k_col), (self.k_row, self.k_col))
                .copy_from(block);
        }
        dense
    }

    /// Extracts the sparse block form of a dense matrix, dropping blocks
    /// at or below `threshold` in max-entry magnitude.
    pub fn from_dense(
        row_space: Arc<FiniteMetricSpace>,
        col_space: Arc<FiniteMetricSpace>,
        k_row: usize,
        k_col: usize,
        dense: &DMatrix<Complex64>,
        threshold: f64,
    ) -> Result<Self> {
        if dense.nrows() != row_space.n() * k_row || dense.ncols() != col_space.n() * k_col {
            return Err(Error::ShapeMismatch(format!(
                "dense matrix is {}x{}, expected {}x{}",
                dense.nrows(),
                dense.ncols(),
                row_space.n() * k_row,
                col_space.n() * k_col
            )));
        }
        let mut blocks = BTreeMap::new();
        for x in 0..row_space.n() {
            for y in 0..col_space.n() {
                let block = dense.view((x * k_row, y * k_col), (k_row, k_col)).into_owned();
                if block_max_abs(&block) > threshold {
                    blocks.insert((x, y), block);
                }
            }
        }
        Ok(Self {
            row_space,
            col_space,
            k_row,
            k_col,
            blocks,
            cached_propagation: OnceLock::new(),
        })
    }

    /// Applies the operator to a dense coordinate vector of length
    /// `n(col_space) * k_col`.
    pub fn apply(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        let mut out = DVector::zeros(self.row_space.n() * self.k_row);
        for (&(x, y), block) in &self.blocks {
            let seg = v.rows(y * self.k_col, self.k_col);
            let mut target = out.rows_mut(x * self.k_row, self.k_row);
            target.gemv(Complex64::new(1.0, 0.0), block, &seg, Complex64::new(1.0, 0.0));
        }
        out
    }

    /// Largest singular value via power iteration on `T* T`, with relative
    /// tolerance [`NORM_REL_TOL`]. Exact for rank-one operators, which
    /// converge in a single step. Rejects operators whose dense assembly
    /// exceeds `dense_limit` rows or columns.
    pub fn operator_norm_with_limit(&self, dense_limit: usize) -> Result<f64> {
        self.operator_norm_with(dense_limit, NORM_REL_TOL)
    }

    /// Same as [`Self::operator_norm_with_limit`] with an explicit relative
    /// tolerance for the power iteration.
    pub fn operator_norm_with(&self, dense_limit: usize, rel_tol: f64) -> Result<f64> {
        let rows = self.row_space.n() * self.k_row;
        let cols = self.col_space.n() * self.k_col;
        if rows > dense_limit || cols > dense_limit {
            return Err(Error::DenseLimitExceeded { rows: rows.max(cols), limit: dense_limit });
        }
        if self.is_zero() {
            return Ok(0.0);
        }
        let dense = self.to_dense();
        let adjoint = dense.adjoint();

        let mut rng = ChaCha8Rng::seed_from_u64(0x6f70_6e6f_726d);
        for _restart in 0..4 {
            let mut v = DVector::from_fn(cols, |_, _| {
                Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let norm = v.norm();
            if norm == 0.0 {
                continue;
            }
            v /= Complex64::new(norm, 0.0);
            let mut sigma_prev = -1.0f64;
            for _ in 0..100_000 {
                let w = &dense * &v;
                let sigma = w.norm();
                if sigma == 0.0 {
                    break; // v lies in the kernel; restart
                }
                let mut next = &adjoint * &w;
                let next_norm = next.norm();
                if next_norm == 0.0 {
                    break;
                }
                next /= Complex64::new(next_norm, 0.0);
                v = next;
                if (sigma - sigma_prev).abs() <= rel_tol * sigma.max(f64::MIN_POSITIVE) {
                    return Ok(sigma);
                }
                sigma_prev = sigma;
            }
            if sigma_prev > 0.0 {
                return Ok(sigma_prev);
            }
        }
        // every restart started in the kernel of a non-zero operator;
        // practically unreachable with random starts
        Ok(0.0)
    }

    pub fn operator_norm(&self) -> Result<f64> {
        self.operator_norm_with_limit(DENSE_LIMIT)
    }

    pub fn to_document(&self) -> OperatorDocument {
        OperatorDocument {
            row_space: self.row_space.label().to_string(),
            col_space: self.col_space.label().to_string(),
            k_row: self.k_row,
            k_col: self.k_col,
            blocks: self
                .blocks
                .iter()
                .map(|(&(x, y), block)| BlockDocument {
                    x,
                    y,
                    re: (0..self.k_row)
                        .map(|i| (0..self.k_col).map(|j| block[(i, j)].re).collect())
                        .collect(),
                    im: (0..self.k_row)
                        .map(|i| (0..self.k_col).map(|j| block[(i, j)].im).collect())
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &OperatorDocument, store: &SpaceStore) -> Result<Self> {
        let row_space = store.get(&doc.row_space)?;
        let col_space = store.get(&doc.col_space)?;
        let mut blocks = BTreeMap::new();
        for entry in &doc.blocks {
            if entry.re.len() != doc.k_row || entry.im.len() != doc.k_row {
                return Err(Error::Schema(format!(
                    "block at ({},{}) has wrong row count",
                    entry.x, entry.y
                )));
            }
            let block = DMatrix::from_fn(doc.k_row, doc.k_col, |i, j| {
                Complex64::new(entry.re[i][j], entry.im[i][j])
            });
            blocks.insert((entry.x, entry.y), block);
        }
        Self::new(row_space, col_space, doc.k_row, doc.k_col, blocks)
    }
}

/// On-disk shape of an operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorDocument {
    pub row_space: String,
    pub col_space: String,
    pub k_row: usize,
    pub k_col: usize,
    pub blocks: Vec<BlockDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockDocument {
    pub x: usize,
    pub y: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

/// Multiplication by the characteristic function of a point subset.
#[derive(Debug, Clone)]
pub struct SubsetProjection {
    space: Arc<FiniteMetricSpace>,
    members: Vec<usize>,
}

impl SubsetProjection {
    pub fn new(space: Arc<FiniteMetricSpace>, mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if let Some(&bad) = members.iter().find(|&&p| p >= space.n()) {
            return Err(Error::ShapeMismatch(format!(
                "subset point {bad} outside space '{}' (n = {})",
                space.label(),
                space.n()
            )));
        }
        Ok(Self { space, members })
    }

    pub fn whole(space: Arc<FiniteMetricSpace>) -> Self {
        let members = (0..space.n()).collect();
        Self { space, members }
    }

    pub fn space(&self) -> &Arc<FiniteMetricSpace> {
        &self.space
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn contains(&self, p: usize) -> bool {
        self.members.binary_search(&p).is_ok()
    }

    /// Minimum distance to another subset of the same space; `None` when
    /// either set is empty.
    pub fn distance_to(&self, other: &SubsetProjection) -> Option<u32> {
        self.space.set_distance(&self.members, &other.members)
    }
}

/// `chi_A T chi_B`: keeps exactly the blocks with row point in `A` and
/// column point in `B`.
pub fn compress(
    a: &SubsetProjection,
    t: &BandOperator,
    b: &SubsetProjection,
) -> Result<BandOperator> {
    if !same_space(a.space(), t.row_space()) || !same_space(b.space(), t.col_space()) {
        return Err(Error::ShapeMismatch(format!(
            "projections over '{}', '{}' applied to operator over '{}', '{}'",
            a.space().label(),
            b.space().label(),
            t.row_space().label(),
            t.col_space().label()
        )));
    }
    let blocks = t
        .blocks
        .iter()
        .filter(|((x, y), _)| a.contains(*x) && b.contains(*y))
        .map(|(&k, v)| (k, v.clone()))
        .collect();
    Ok(BandOperator {
        row_space: t.row_space.clone(),
        col_space: t.col_space.clone(),
        k_row: t.k_row,
        k_col: t.k_col,
        blocks,
        cached_propagation: OnceLock::new(),
    })
}

/// The rank-one unit sending `delta_y (x) w` to `delta_x (x) v`: a single
/// block `v w*` at `(x, y)`.
#[derive(Debug, Clone)]
pub struct RankOneUnit {
    pub x: usize,
    pub y: usize,
    pub v: DVector<Complex64>,
    pub w: DVector<Complex64>,
}

impl RankOneUnit {
    pub fn new(x: usize, y: usize, v: DVector<Complex64>, w: DVector<Complex64>) -> Result<Self> {
        if v.norm() == 0.0 || w.norm() == 0.0 {
            return Err(Error::ShapeMismatch("rank-one unit vectors must be non-zero".to_string()));
        }
        Ok(Self { x, y, v, w })
    }

    /// Scalar unit `e_xy` (fiber dimension one).
    pub fn scalar(x: usize, y: usize) -> Self {
        let one = DVector::from_element(1, Complex64::new(1.0, 0.0));
        Self { x, y, v: one.clone(), w: one }
    }

    pub fn to_operator(&self, space: Arc<FiniteMetricSpace>) -> Result<BandOperator> {
        let block = &self.v * self.w.adjoint();
        let mut blocks = BTreeMap::new();
        blocks.insert((self.x, self.y), block);
        BandOperator::new(space.clone(), space, self.v.len(), self.w.len(), blocks)
    }

    pub fn adjoint(&self) -> RankOneUnit {
        RankOneUnit { x: self.y, y: self.x, v: self.w.clone(), w: self.v.clone() }
    }
}

/// Deterministic random band operator: every block lies within
/// `prop_bound`, entries are uniform in the unit square of the complex
/// plane, and a fixed seed reproduces the operator bit for bit.
pub fn random_band(
    space: &Arc<FiniteMetricSpace>,
    prop_bound: u32,
    density: f64,
    k: usize,
    seed: u64,
) -> BandOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = space.n();
    let mut blocks = BTreeMap::new();
    for x in 0..n {
        for y in 0..n {
            if space.dist(x, y) > prop_bound {
                continue;
            }
            if rng.gen::<f64>() >= density {
                continue;
            }
            let block =
                DMatrix::from_fn(k, k, |_, _| Complex64::new(rng.gen::<f64>(), rng.gen::<f64>()));
            blocks.insert((x, y), block);
        }
    }
    BandOperator {
        row_space: space.clone(),
        col_space: space.clone(),
        k_row: k,
        k_col: k,
        blocks,
        cached_propagation: OnceLock::new(),
    }
}

/// Result of probing a pairwise-orthogonal family against a pair of
/// subsets: beyond the family's maximal propagation `s_star`, every
/// compression must vanish identically.
#[derive(Debug, Clone, Serialize)]
pub struct OrthogonalSumProbe {
    pub family_size: usize,
    /// Maximal propagation over the family.
    pub s_star: u32,
    /// d(A, B); `None` when one of the sets is empty.
    pub distance: Option<u32>,
    /// Whether d(A,B) > s_star, i.e. the vanishing conclusion applies.
    pub applicable: bool,
    /// True when every applicable compression has no blocks at all.
    pub all_compressions_zero: bool,
}

/// Verifies pairwise orthogonality (`T_i T_j* = 0` and `T_i* T_j = 0` for
/// `i != j`) and then checks the compression-vanishing conclusion.
/// Non-orthogonal input is a rejection naming the witness pair.
pub fn orthogonal_sum_probe(
    family: &[BandOperator],
    a: &SubsetProjection,
    b: &SubsetProjection,
) -> Result<OrthogonalSumProbe> {
    for i in 0..family.len() {
        for j in (i + 1)..family.len() {
            let right = family[i].mul(&family[j].adjoint())?;
            if !right.is_zero() {
                let norm = right.blocks.values().map(block_max_abs).fold(0.0, f64::max);
                return Err(Error::NotOrthogonal { i, j, which: "T_i T_j*".to_string(), norm });
            }
            let left = family[i].adjoint().mul(&family[j])?;
            if !left.is_zero() {
                let norm = left.blocks.values().map(block_max_abs).fold(0.0, f64::max);
                return Err(Error::NotOrthogonal { i, j, which: "T_i* T_j".to_string(), norm });
            }
        }
    }
    let mut s_star = 0u32;
    for t in family {
        s_star = s_star.max(t.propagation()?);
    }
    let distance = a.distance_to(b);
    // an empty side makes every compression vanish trivially
    let applicable = distance.map_or(true, |d| d > s_star);
    let mut all_zero = true;
    if applicable {
        for t in family {
            if !compress(a, t, b)?.is_zero() {
                all_zero = false;
            }
        }
    }
    Ok(OrthogonalSumProbe {
        family_size: family.len(),
        s_star,
        distance,
        applicable,
        all_compressions_zero: applicable && all_zero,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{build_space, GeneratorRecipe};

    fn path(n: usize) -> Arc<FiniteMetricSpace> {
        build_space(&GeneratorRecipe::Path, n).unwrap()
    }

    fn grid2(side: usize) -> Arc<FiniteMetricSpace> {
        build_space(&GeneratorRecipe::Grid { dim: 2 }, side).unwrap()
    }

    /// Nearest-neighbor shift delta_i -> delta_{i+1} on a path.
    fn shift(space: &Arc<FiniteMetricSpace>) -> BandOperator {
        let mut blocks = BTreeMap::new();
        for i in 0..space.n() - 1 {
            blocks.insert((i + 1, i), DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)));
        }
        BandOperator::new(space.clone(), space.clone(), 1, 1, blocks).unwrap()
    }

    #[test]
    fn propagation_basics() {
        let space = path(6);
        assert_eq!(BandOperator::identity(space.clone(), 1).propagation().unwrap(), 0);
        assert_eq!(shift(&space).propagation().unwrap(), 1);
        let unit = RankOneUnit::scalar(0, 5).to_operator(space.clone()).unwrap();
        assert_eq!(unit.propagation().unwrap(), 5);
        assert_eq!(BandOperator::zero(space.clone(), space, 1, 1).propagation().unwrap(), 0);
    }

    #[test]
    fn propagation_rejects_rectangular() {
        let t = BandOperator::zero(path(4), path(6), 1, 1);
        assert!(matches!(t.propagation(), Err(Error::RectangularPropagation { .. })));
    }

    #[test]
    fn shift_times_adjoint_is_interior_projection() {
        // dense oracle
        let space = path(6);
        let s = shift(&space);
        let product = s.mul(&s.adjoint()).unwrap();
        let dense = s.to_dense() * s.to_dense().adjoint();
        let via_sparse = product.to_dense();
        assert!((dense - &via_sparse).iter().all(|z| z.norm() < 1e-14));
        // diagonal projection missing the first point
        for i in 1..6 {
            assert!(product.block(i, i).is_some());
        }
        assert!(product.block(0, 0).is_none());
        assert_eq!(product.block_count(), 5);
    }

    #[test]
    fn t_minus_t_is_zero_with_zero_propagation() {
        let space = grid2(4);
        let t = random_band(&space, 2, 0.5, 2, 7);
        let diff = t.sub(&t).unwrap();
        assert!(diff.is_zero());
        assert_eq!(diff.propagation().unwrap(), 0);
    }

    #[test]
    fn adjoint_of_rank_one_unit() {
        let space = path(5);
        let v = DVector::from_vec(vec![Complex64::new(1.0, 2.0), Complex64::new(0.0, -1.0)]);
        let w = DVector::from_vec(vec![Complex64::new(0.5, 0.0), Complex64::new(1.0, 1.0)]);
        let unit = RankOneUnit::new(1, 3, v, w).unwrap();
        let direct = unit.adjoint().to_operator(space.clone()).unwrap();
        let via_op = unit.to_operator(space).unwrap().adjoint();
        assert!(direct.max_entry_distance(&via_op).unwrap() < 1e-15);
    }

    #[test]
    fn compress_whole_is_identity_on_blocks() {
        let space = grid2(3);
        let t = random_band(&space, 2, 0.7, 1, 3);
        let whole = SubsetProjection::whole(space);
        let c = compress(&whole, &t, &whole).unwrap();
        assert_eq!(c.block_count(), t.block_count());
    }

    #[test]
    fn compress_beyond_propagation_is_structurally_zero() {
        let space = path(6);
        let t = shift(&space);
        let a = SubsetProjection::new(space.clone(), vec![0, 1, 2]).unwrap();
        let b = SubsetProjection::new(space.clone(), vec![4, 5]).unwrap();
        assert_eq!(a.distance_to(&b), Some(2));
        let c = compress(&a, &t, &b).unwrap();
        assert!(c.is_zero());
        // dense oracle agrees
        let dense = t.to_dense();
        for &x in a.members() {
            for &y in b.members() {
                assert_eq!(dense[(x, y)], Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn norm_of_rank_one_is_product_of_norms() {
        let space = path(8);
        let v = DVector::from_vec(vec![Complex64::new(3.0, 0.0), Complex64::new(0.0, 4.0)]);
        let w = DVector::from_vec(vec![Complex64::new(1.0, 1.0)]);
        let op = BandOperator::new(
            space.clone(),
            space,
            2,
            1,
            BTreeMap::from([((2usize, 6usize), &v * w.adjoint())]),
        )
        .unwrap();
        let norm = op.operator_norm().unwrap();
        assert!((norm - v.norm() * w.norm()).abs() < 1e-12);
    }

    #[test]
    fn norm_of_identity_is_one() {
        let space = grid2(3);
        let id = BandOperator::identity(space, 2);
        assert!((id.operator_norm().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn norm_matches_dense_svd_oracle() {
        for seed in 0..6u64 {
            let space = grid2(4);
            let t = random_band(&space, 3, 0.4, 2, seed);
            let norm = t.operator_norm().unwrap();
            let svd_norm =
                t.to_dense().singular_values().iter().copied().fold(0.0, f64::max);
            assert!(
                (norm - svd_norm).abs() <= 1e-9 * svd_norm.max(1.0),
                "seed {seed}: {norm} vs {svd_norm}"
            );
        }
    }

    #[test]
    fn norm_rejects_oversized_dense_assembly() {
        let space = path(5000);
        let t = BandOperator::identity(space, 1);
        assert!(matches!(t.operator_norm(), Err(Error::DenseLimitExceeded { .. })));
    }

    #[test]
    fn norm_monotone_under_compression() {
        let space = grid2(4);
        let t = random_band(&space, 2, 0.6, 1, 11);
        let norm = t.operator_norm().unwrap();
        let a = SubsetProjection::new(space.clone(), (0..8).collect()).unwrap();
        let b = SubsetProjection::new(space.clone(), (4..16).collect()).unwrap();
        let c = compress(&a, &t, &b).unwrap();
        assert!(c.operator_norm().unwrap() <= norm + 1e-10);
    }

    #[test]
    fn random_band_contracts() {
        let space = grid2(3);
        // propagation 0 forces block-diagonal support
        let diag = random_band(&space, 0, 1.0, 1, 3);
        assert!(diag.blocks().all(|(&(x, y), _)| x == y));
        // full density and propagation reach everything
        let full = random_band(&space, space.diameter(), 1.0, 1, 3);
        assert_eq!(full.block_count(), space.n() * space.n());
        // determinism
        let a = random_band(&space, 2, 0.5, 2, 42);
        let b = random_band(&space, 2, 0.5, 2, 42);
        assert_eq!(a.max_entry_distance(&b).unwrap(), 0.0);
    }

    #[test]
    fn probe_with_disjoint_rank_one_units() {
        let space = grid2(3);
        let family: Vec<BandOperator> = (0..4)
            .map(|i| RankOneUnit::scalar(2 * i, 2 * i + 1).to_operator(space.clone()).unwrap())
            .collect();
        let a = SubsetProjection::new(space.clone(), vec![0]).unwrap();
        let b = SubsetProjection::new(space.clone(), vec![8]).unwrap();
        let probe = orthogonal_sum_probe(&family, &a, &b).unwrap();
        if probe.applicable {
            assert!(probe.all_compressions_zero);
        }
    }

    #[test]
    fn probe_rejects_shared_column_index() {
        let space = path(6);
        let family = vec![
            RankOneUnit::scalar(0, 2).to_operator(space.clone()).unwrap(),
            RankOneUnit::scalar(1, 2).to_operator(space.clone()).unwrap(),
        ];
        let whole = SubsetProjection::whole(space);
        let err = orthogonal_sum_probe(&family, &whole, &whole).unwrap_err();
        assert!(matches!(err, Error::NotOrthogonal { i: 0, j: 1, .. }));
    }

    #[test]
    fn operator_document_round_trip() {
        let space = grid2(3);
        let mut store = SpaceStore::new();
        store.insert(space.clone());
        let t = random_band(&space, 2, 0.5, 2, 9);
        let text = serde_json::to_string(&t.to_document()).unwrap();
        let doc: OperatorDocument = serde_json::from_str(&text).unwrap();
        let back = BandOperator::from_document(&doc, &store).unwrap();
        assert_eq!(back.max_entry_distance(&t).unwrap(), 0.0);
    }
}
