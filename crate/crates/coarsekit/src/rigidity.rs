//! Spatial implementation pipelines between finite spaces.
//!
//! The two directions of the correspondence live here: from operator data
//! to geometry (recovering a unitary from an isomorphism table, then
//! extracting a point map from its column masses by threshold or support)
//! and from geometry to operators (constructing a block unitary that
//! covers a given map, with a verified covering constant). The locality
//! audit and the conjugation propagation bound quantify how tightly a
//! unitary is tied to the map it covers.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::band::{BandOperator, SUPPORT_FLOOR};
use crate::error::{Error, Result};
use crate::maps::{expansion_profile, PointMap};
use crate::space::{same_space, FiniteMetricSpace, SpaceStore};

/// Unitarity defect tolerance for construction and recovery.
pub const UNITARY_TOL: f64 = 1e-10;

/// Default cap on fiber dimensions chosen by the covering construction.
pub const FIBER_CAP: usize = 16;

fn cplx(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// A unitary between `l2(X) (x) C^k_dom` and `l2(Y) (x) C^k_cod`, stored
/// dense. Rows are indexed `y * k_cod + j`, columns `x * k_dom + i`.
#[derive(Debug, Clone)]
pub struct FiniteUnitary {
    domain: Arc<FiniteMetricSpace>,
    codomain: Arc<FiniteMetricSpace>,
    k_dom: usize,
    k_cod: usize,
    matrix: DMatrix<Complex64>,
}

impl FiniteUnitary {
    /// Validates shape and unitarity (`U*U` and `UU*` within
    /// [`UNITARY_TOL`] of the identity, max-entry norm).
    pub fn new(
        domain: Arc<FiniteMetricSpace>,
        codomain: Arc<FiniteMetricSpace>,
        k_dom: usize,
        k_cod: usize,
        matrix: DMatrix<Complex64>,
    ) -> Result<Self> {
        let rows = codomain.n() * k_cod;
        let cols = domain.n() * k_dom;
        if rows != cols {
            return Err(Error::ShapeMismatch(format!(
                "total dimensions differ: {} vs {}",
                rows, cols
            )));
        }
        if matrix.nrows() != rows || matrix.ncols() != cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix is {}x{}, expected {}x{}",
                matrix.nrows(),
                matrix.ncols(),
                rows,
                cols
            )));
        }
        let defect = unitarity_defect(&matrix);
        if defect > UNITARY_TOL {
            return Err(Error::NotUnitary { defect, tol: UNITARY_TOL });
        }
        Ok(Self { domain, codomain, k_dom, k_cod, matrix })
    }

    /// The unitary permuting basis vectors along a bijection, acting as the
    /// identity on fibers.
    pub fn permutation(map: &PointMap, k: usize) -> Result<Self> {
        if !map.is_bijection() {
            return Err(Error::ShapeMismatch(format!(
                "map {} -> {} is not a bijection",
                map.domain().label(),
                map.codomain().label()
            )));
        }
        let n = map.domain().n();
        let mut matrix = DMatrix::zeros(n * k, n * k);
        for x in 0..n {
            let y = map.apply(x);
            for i in 0..k {
                matrix[(y * k + i, x * k + i)] = cplx(1.0);
            }
        }
        Ok(Self {
            domain: map.domain().clone(),
            codomain: map.codomain().clone(),
            k_dom: k,
            k_cod: k,
            matrix,
        })
    }

    pub fn domain(&self) -> &Arc<FiniteMetricSpace> {
        &self.domain
    }

    pub fn codomain(&self) -> &Arc<FiniteMetricSpace> {
        &self.codomain
    }

    pub fn k_dom(&self) -> usize {
        self.k_dom
    }

    pub fn k_cod(&self) -> usize {
        self.k_cod
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    /// Embeds `delta_x (x) v` as a coordinate vector over the domain.
    pub fn embed_domain(&self, x: usize, v: &DVector<Complex64>) -> DVector<Complex64> {
        let mut out = DVector::zeros(self.domain.n() * self.k_dom);
        out.rows_mut(x * self.k_dom, self.k_dom).copy_from(v);
        out
    }

    pub fn embed_codomain(&self, y: usize, w: &DVector<Complex64>) -> DVector<Complex64> {
        let mut out = DVector::zeros(self.codomain.n() * self.k_cod);
        out.rows_mut(y * self.k_cod, self.k_cod).copy_from(w);
        out
    }

    /// `U (delta_x (x) v)`, read directly off the column block.
    pub fn column(&self, x: usize, v: &DVector<Complex64>) -> DVector<Complex64> {
        let mut out = DVector::zeros(self.matrix.nrows());
        for i in 0..self.k_dom {
            if v[i] != cplx(0.0) {
                out.axpy(v[i], &self.matrix.column(x * self.k_dom + i).into_owned(), cplx(1.0));
            }
        }
        out
    }

    /// Fiber-block norms of a codomain coordinate vector, one per point.
    pub fn fiber_masses(&self, xi: &DVector<Complex64>) -> Vec<f64> {
        (0..self.codomain.n())
            .map(|y| xi.rows(y * self.k_cod, self.k_cod).norm())
            .collect()
    }

    /// The `k_cod x k_dom` coefficient block at `(y, x)`.
    pub fn block(&self, y: usize, x: usize) -> DMatrix<Complex64> {
        self.matrix
            .view((y * self.k_cod, x * self.k_dom), (self.k_cod, self.k_dom))
            .into_owned()
    }

    /// The inverse as a unitary in the opposite direction.
    pub fn inverse(&self) -> FiniteUnitary {
        FiniteUnitary {
            domain: self.codomain.clone(),
            codomain: self.domain.clone(),
            k_dom: self.k_cod,
            k_cod: self.k_dom,
            matrix: self.matrix.adjoint(),
        }
    }

    /// `self` after `inner`.
    pub fn compose(&self, inner: &FiniteUnitary) -> Result<FiniteUnitary> {
        if !same_space(inner.codomain(), self.domain()) || inner.k_cod != self.k_dom {
            return Err(Error::ShapeMismatch(format!(
                "cannot compose: inner lands in ({}, {}), outer starts at ({}, {})",
                inner.codomain().label(),
                inner.k_cod,
                self.domain().label(),
                self.k_dom
            )));
        }
        Ok(FiniteUnitary {
            domain: inner.domain.clone(),
            codomain: self.codomain.clone(),
            k_dom: inner.k_dom,
            k_cod: self.k_cod,
            matrix: &self.matrix * &inner.matrix,
        })
    }

    /// `U T U*` as a sparse operator over the codomain, pruning blocks at
    /// or below `floor`.
    pub fn conjugate_with_floor(&self, t: &BandOperator, floor: f64) -> Result<BandOperator> {
        if !same_space(t.row_space(), &self.domain)
            || !same_space(t.col_space(), &self.domain)
            || t.k_row() != self.k_dom
            || t.k_col() != self.k_dom
        {
            return Err(Error::ShapeMismatch(format!(
                "operator over ('{}', {}) cannot be conjugated along '{}' -> '{}'",
                t.row_space().label(),
                t.k_row(),
                self.domain.label(),
                self.codomain.label()
            )));
        }
        let dense = &self.matrix * t.to_dense() * self.matrix.adjoint();
        BandOperator::from_dense(
            self.codomain.clone(),
            self.codomain.clone(),
            self.k_cod,
            self.k_cod,
            &dense,
            floor,
        )
    }

    pub fn conjugate(&self, t: &BandOperator) -> Result<BandOperator> {
        self.conjugate_with_floor(t, SUPPORT_FLOOR)
    }

    pub fn to_document(&self) -> UnitaryDocument {
        let rows = self.matrix.nrows();
        let cols = self.matrix.ncols();
        UnitaryDocument {
            domain_space: self.domain.label().to_string(),
            codomain_space: self.codomain.label().to_string(),
            k_dom: self.k_dom,
            k_cod: self.k_cod,
            re: (0..rows)
                .map(|r| (0..cols).map(|c| self.matrix[(r, c)].re).collect())
                .collect(),
            im: (0..rows)
                .map(|r| (0..cols).map(|c| self.matrix[(r, c)].im).collect())
                .collect(),
        }
    }

    pub fn from_document(doc: &UnitaryDocument, store: &SpaceStore) -> Result<Self> {
        let domain = store.get(&doc.domain_space)?;
        let codomain = store.get(&doc.codomain_space)?;
        let rows = doc.re.len();
        if doc.im.len() != rows {
            return Err(Error::Schema("re and im row counts differ".to_string()));
        }
        let cols = doc.re.first().map_or(0, |r| r.len());
        if doc.re.iter().any(|r| r.len() != cols) || doc.im.iter().any(|r| r.len() != cols) {
            return Err(Error::Schema("ragged unitary matrix rows".to_string()));
        }
        let matrix =
            DMatrix::from_fn(rows, cols, |r, c| Complex64::new(doc.re[r][c], doc.im[r][c]));
        Self::new(domain, codomain, doc.k_dom, doc.k_cod, matrix)
    }
}

/// On-disk shape of a unitary: dense matrix with space labels and fiber
/// dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitaryDocument {
    pub domain_space: String,
    pub codomain_space: String,
    pub k_dom: usize,
    pub k_cod: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

fn unitarity_defect(m: &DMatrix<Complex64>) -> f64 {
    let n = m.ncols();
    let gram = m.adjoint() * m;
    let co_gram = m * m.adjoint();
    let mut defect = 0.0f64;
    for r in 0..n {
        for c in 0..n {
            let id = if r == c { cplx(1.0) } else { cplx(0.0) };
            defect = defect.max((gram[(r, c)] - id).norm());
            defect = defect.max((co_gram[(r, c)] - id).norm());
        }
    }
    defect
}

/// Standard-normal complex entries via Box-Muller from the seeded stream.
fn gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    let radius = (-2.0 * u1.ln()).sqrt();
    let angle = std::f64::consts::TAU * u2;
    Complex64::new(radius * angle.cos(), radius * angle.sin())
}

/// Deterministic dense unitary: QR of a seeded Gaussian matrix with the
/// column phases fixed by the sign of the R diagonal.
pub fn seeded_unitary(dim: usize, seed: u64) -> DMatrix<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = DMatrix::from_fn(dim, dim, |_, _| gaussian(&mut rng));
    let qr = gauss.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        let diag = r[(j, j)];
        let phase = if diag.norm() > 0.0 { diag / cplx(diag.norm()) } else { cplx(1.0) };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    q
}

pub(crate) fn splitmix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Isomorphism tables and unitary recovery
// ---------------------------------------------------------------------------

/// Index of the generator unit `e_{(x, e_i), (y, e_j)}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GeneratorKey {
    pub x: usize,
    pub i: usize,
    pub y: usize,
    pub j: usize,
}

impl std::fmt::Display for GeneratorKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "e[({}, {}), ({}, {})]", self.x, self.i, self.y, self.j)
    }
}

/// Images of generator units under a *-homomorphism, stored as operators
/// over the codomain.
///
/// The column family `{e_{(x, e_i), (x0, e_0)}}` together with the corner
/// projection generates the whole matrix-unit system under products and
/// adjoints, so a table is complete once those entries are present;
/// arbitrary additional unit images may be stored as well.
#[derive(Debug, Clone)]
pub struct IsomorphismTable {
    domain: Arc<FiniteMetricSpace>,
    codomain: Arc<FiniteMetricSpace>,
    k_dom: usize,
    k_cod: usize,
    base_point: usize,
    base_fiber: usize,
    images: BTreeMap<GeneratorKey, BandOperator>,
}

impl IsomorphismTable {
    pub fn new(
        domain: Arc<FiniteMetricSpace>,
        codomain: Arc<FiniteMetricSpace>,
        k_dom: usize,
        k_cod: usize,
    ) -> Self {
        Self {
            domain,
            codomain,
            k_dom,
            k_cod,
            base_point: 0,
            base_fiber: 0,
            images: BTreeMap::new(),
        }
    }

    /// Builds the table of the conjugation `T -> V T V*` on the column
    /// generator family.
    pub fn conjugation_by(secret: &FiniteUnitary) -> Self {
        let mut table = Self::new(
            secret.domain().clone(),
            secret.codomain().clone(),
            secret.k_dom(),
            secret.k_cod(),
        );
        let base = {
            let mut e0 = DVector::zeros(secret.k_dom());
            e0[table.base_fiber] = cplx(1.0);
            secret.column(table.base_point, &e0)
        };
        for x in 0..secret.domain().n() {
            for i in 0..secret.k_dom() {
                let mut ei = DVector::zeros(secret.k_dom());
                ei[i] = cplx(1.0);
                let col = secret.column(x, &ei);
                let key = GeneratorKey { x, i, y: table.base_point, j: table.base_fiber };
                let image = outer_product_operator(
                    secret.codomain(),
                    secret.k_cod(),
                    &col,
                    &base,
                );
                table.images.insert(key, image);
            }
        }
        table
    }

    pub fn domain(&self) -> &Arc<FiniteMetricSpace> {
        &self.domain
    }

    pub fn codomain(&self) -> &Arc<FiniteMetricSpace> {
        &self.codomain
    }

    pub fn k_dom(&self) -> usize {
        self.k_dom
    }

    pub fn k_cod(&self) -> usize {
        self.k_cod
    }

    pub fn base_point(&self) -> usize {
        self.base_point
    }

    pub fn base_fiber(&self) -> usize {
        self.base_fiber
    }

    pub fn insert_image(&mut self, key: GeneratorKey, image: BandOperator) {
        self.images.insert(key, image);
    }

    pub fn image(&self, key: &GeneratorKey) -> Option<&BandOperator> {
        self.images.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &GeneratorKey> {
        self.images.keys()
    }

    fn corner_key(&self) -> GeneratorKey {
        GeneratorKey {
            x: self.base_point,
            i: self.base_fiber,
            y: self.base_point,
            j: self.base_fiber,
        }
    }

    fn column_key(&self, x: usize, i: usize) -> GeneratorKey {
        GeneratorKey { x, i, y: self.base_point, j: self.base_fiber }
    }

    /// Sampled *-compatibility: the corner image must be a self-adjoint
    /// idempotent, and `phi(a)* phi(b)` must equal `delta_ab * corner` on
    /// generator pairs (all diagonal pairs plus a deterministic sample of
    /// off-diagonal ones). Returns the worst defect observed.
    pub fn check_star_compatibility(&self, tol: f64) -> Result<f64> {
        let corner_key = self.corner_key();
        let corner = self
            .images
            .get(&corner_key)
            .ok_or_else(|| Error::TableIncomplete(corner_key.to_string()))?;
        let mut worst = 0.0f64;

        let idem = corner.mul(corner)?.max_entry_distance(corner)?;
        let sym = corner.adjoint().max_entry_distance(corner)?;
        worst = worst.max(idem).max(sym);
        if worst > tol {
            return Err(Error::Compatibility { witness: corner_key.to_string(), defect: worst });
        }

        let columns: Vec<&GeneratorKey> = self
            .images
            .keys()
            .filter(|k| k.y == self.base_point && k.j == self.base_fiber)
            .collect();
        let mut pairs: Vec<(usize, usize)> = (0..columns.len()).map(|i| (i, i)).collect();
        for step in 1..=3usize {
            for i in 0..columns.len() {
                pairs.push((i, (i + step) % columns.len()));
            }
        }
        for (ai, bi) in pairs {
            let a = columns[ai];
            let b = columns[bi];
            let product = self.images[a].adjoint().mul(&self.images[b])?;
            let defect = if a == b {
                product.max_entry_distance(corner)?
            } else {
                // orthogonal columns must multiply to zero
                product
                    .blocks()
                    .map(|(_, blk)| blk.iter().map(|z| z.norm()).fold(0.0, f64::max))
                    .fold(0.0, f64::max)
            };
            worst = worst.max(defect);
            if defect > tol {
                return Err(Error::Compatibility {
                    witness: format!("{a} vs {b}"),
                    defect,
                });
            }
        }
        Ok(worst)
    }
}

/// `a b*` as a sparse block operator over `space` with fiber `k`.
fn outer_product_operator(
    space: &Arc<FiniteMetricSpace>,
    k: usize,
    a: &DVector<Complex64>,
    b: &DVector<Complex64>,
) -> BandOperator {
    let dense = a * b.adjoint();
    BandOperator::from_dense(space.clone(), space.clone(), k, k, &dense, 0.0)
        .expect("outer product shapes agree")
}

/// Output of [`recover_unitary`]: the implementing unitary together with
/// the worst generator defect observed during verification.
#[derive(Debug, Clone)]
pub struct RecoveredUnitary {
    pub unitary: FiniteUnitary,
    pub max_generator_defect: f64,
}

/// Rebuilds the implementing unitary from an isomorphism table.
///
/// The corner image must be a rank-one projection; a unit vector `xi` in
/// its range seeds the columns `U(delta_x (x) e_i) = phi(e_{(x, e_i),
/// (x0, e_0)}) xi`. The result is verified against every stored generator
/// image and is unique up to one global phase.
pub fn recover_unitary(table: &IsomorphismTable) -> Result<RecoveredUnitary> {
    let corner_key = table.corner_key();
    let corner = table
        .image(&corner_key)
        .ok_or_else(|| Error::TableIncomplete(corner_key.to_string()))?;

    // corner must be a self-adjoint idempotent of rank one
    let idem = corner.mul(corner)?.max_entry_distance(corner)?;
    let sym = corner.adjoint().max_entry_distance(corner)?;
    if idem.max(sym) > UNITARY_TOL {
        return Err(Error::Compatibility {
            witness: corner_key.to_string(),
            defect: idem.max(sym),
        });
    }
    let corner_dense = corner.to_dense();
    let trace: Complex64 = (0..corner_dense.nrows()).map(|d| corner_dense[(d, d)]).sum();
    if (trace - cplx(1.0)).norm() > 1e-8 {
        return Err(Error::NotRankOne(format!(
            "corner image has trace {:.6} + {:.6}i, expected 1",
            trace.re, trace.im
        )));
    }

    // unit vector spanning the range: the largest column of the projection
    let mut best_col = 0;
    let mut best_norm = 0.0;
    for c in 0..corner_dense.ncols() {
        let norm = corner_dense.column(c).norm();
        if norm > best_norm {
            best_norm = norm;
            best_col = c;
        }
    }
    if best_norm <= SUPPORT_FLOOR {
        return Err(Error::NotRankOne("corner image is numerically zero".to_string()));
    }
    let xi = corner_dense.column(best_col).into_owned() / cplx(best_norm);

    let n_dom = table.domain().n();
    let rows = table.codomain().n() * table.k_cod();
    let mut matrix = DMatrix::zeros(rows, n_dom * table.k_dom());
    for x in 0..n_dom {
        for i in 0..table.k_dom() {
            let key = table.column_key(x, i);
            let image = table
                .image(&key)
                .ok_or_else(|| Error::TableIncomplete(key.to_string()))?;
            let column = image.apply(&xi);
            matrix.column_mut(x * table.k_dom() + i).copy_from(&column);
        }
    }
    let unitary = FiniteUnitary::new(
        table.domain().clone(),
        table.codomain().clone(),
        table.k_dom(),
        table.k_cod(),
        matrix,
    )?;

    // verify conjugation by the rebuilt unitary against every stored image
    let mut max_defect = 0.0f64;
    for (key, image) in &table.images {
        let e_dense = unit_dense(table.domain().n(), table.k_dom(), key);
        let conjugated = unitary.matrix() * e_dense * unitary.matrix().adjoint();
        let defect = (conjugated - image.to_dense()).norm();
        if defect > UNITARY_TOL {
            return Err(Error::Compatibility { witness: key.to_string(), defect });
        }
        max_defect = max_defect.max(defect);
    }
    Ok(RecoveredUnitary { unitary, max_generator_defect: max_defect })
}

fn unit_dense(n: usize, k: usize, key: &GeneratorKey) -> DMatrix<Complex64> {
    let mut e = DMatrix::zeros(n * k, n * k);
    e[(key.x * k + key.i, key.y * k + key.j)] = cplx(1.0);
    e
}

// ---------------------------------------------------------------------------
// Coefficient identity
// ---------------------------------------------------------------------------

/// Arguments of the coefficient identity: two domain points with fiber
/// vectors and two codomain points with fiber vectors.
#[derive(Debug, Clone)]
pub struct CoefficientArgs {
    pub x1: usize,
    pub v1: DVector<Complex64>,
    pub x2: usize,
    pub v2: DVector<Complex64>,
    pub y1: usize,
    pub w1: DVector<Complex64>,
    pub y2: usize,
    pub w2: DVector<Complex64>,
}

/// Compares two routes to the compression coefficient of a conjugated
/// rank-one unit and returns their absolute difference.
///
/// Left route: apply `U e U*` as three operator applications and pair
/// against `delta_y1 (x) w1`. Right route: the product of the two matrix
/// coefficients `<delta_y1 (x) w1, U(delta_x1 (x) v1)> <U(delta_x2 (x)
/// v2), delta_y2 (x) w2>`. Inner products are linear in the second slot.
pub fn coefficient_formula_check(u: &FiniteUnitary, args: &CoefficientArgs) -> f64 {
    // left: <b1, U (e (U* b2))>
    let b2 = u.embed_codomain(args.y2, &args.w2);
    let t1 = u.matrix().adjoint() * &b2;
    // e = (delta_x1 (x) v1)(delta_x2 (x) v2)*
    let inner = u.embed_domain(args.x2, &args.v2).dotc(&t1);
    let t2 = u.embed_domain(args.x1, &args.v1) * inner;
    let t3 = u.matrix() * t2;
    let b1 = u.embed_codomain(args.y1, &args.w1);
    let left = b1.dotc(&t3);

    // right: product of two coefficients
    let col1 = u.column(args.x1, &args.v1);
    let col2 = u.column(args.x2, &args.v2);
    let right = b1.dotc(&col1) * col2.dotc(&b2);

    (left - right).norm()
}

// ---------------------------------------------------------------------------
// Map extraction
// ---------------------------------------------------------------------------

/// Threshold-extraction parameters: the certification level `c` and the
/// fiber basis index of the probe vector.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExtractionParams {
    pub c: f64,
    pub v0_index: usize,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        Self { c: 0.5, v0_index: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExtractionVerdict {
    Certified,
    Uncertified { worst_x: usize, mass: f64 },
}

/// A map extracted from column masses, with the achieved mass per point.
#[derive(Debug, Clone)]
pub struct ThresholdExtraction {
    pub map: PointMap,
    /// Mass achieved at the chosen target, per domain point.
    pub achieved: Vec<f64>,
    /// The empirical best certification level: min over points of the
    /// achieved mass.
    pub min_achieved: f64,
    pub verdict: ExtractionVerdict,
}

/// For each `x`, sends `x` to the codomain point carrying the largest
/// fiber mass of `U(delta_x (x) v0)` (smallest index on ties). CERTIFIED
/// when every point achieves at least `params.c`; UNCERTIFIED is a verdict
/// naming the worst point, not a fault.
pub fn extract_map_threshold(
    u: &FiniteUnitary,
    params: &ExtractionParams,
) -> Result<ThresholdExtraction> {
    if !(params.c > 0.0 && params.c <= 1.0) {
        return Err(Error::Schema(format!("threshold c = {} outside (0, 1]", params.c)));
    }
    if params.v0_index >= u.k_dom() {
        return Err(Error::Schema(format!(
            "v0 index {} outside fiber dimension {}",
            params.v0_index,
            u.k_dom()
        )));
    }
    let mut v0 = DVector::zeros(u.k_dom());
    v0[params.v0_index] = cplx(1.0);

    let n = u.domain().n();
    let mut table = Vec::with_capacity(n);
    let mut achieved = Vec::with_capacity(n);
    for x in 0..n {
        let masses = u.fiber_masses(&u.column(x, &v0));
        let (mut best_y, mut best_m) = (0usize, f64::MIN);
        for (y, &m) in masses.iter().enumerate() {
            if m > best_m {
                best_m = m;
                best_y = y;
            }
        }
        table.push(best_y);
        achieved.push(best_m);
    }
    let (worst_x, &min_achieved) = achieved
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("masses are finite"))
        .expect("non-empty domain");
    let map = PointMap::new(u.domain().clone(), u.codomain().clone(), table)?;
    let verdict = if min_achieved >= params.c {
        ExtractionVerdict::Certified
    } else {
        ExtractionVerdict::Uncertified { worst_x, mass: min_achieved }
    };
    Ok(ThresholdExtraction { map, achieved, min_achieved, verdict })
}

/// Support rule: `f(x)` is the smallest-index codomain point whose fiber
/// mass exceeds `eta`. A point with no support above `eta` is a rejection
/// naming it.
pub fn extract_map_support(u: &FiniteUnitary, eta: f64, v0_index: usize) -> Result<PointMap> {
    if v0_index >= u.k_dom() {
        return Err(Error::Schema(format!(
            "v0 index {v0_index} outside fiber dimension {}",
            u.k_dom()
        )));
    }
    let mut v0 = DVector::zeros(u.k_dom());
    v0[v0_index] = cplx(1.0);
    let n = u.domain().n();
    let mut table = Vec::with_capacity(n);
    for x in 0..n {
        let masses = u.fiber_masses(&u.column(x, &v0));
        match masses.iter().position(|&m| m > eta) {
            Some(y) => table.push(y),
            None => return Err(Error::NoSupport { x, eta }),
        }
    }
    PointMap::new(u.domain().clone(), u.codomain().clone(), table)
}

// ---------------------------------------------------------------------------
// Locality audit
// ---------------------------------------------------------------------------

/// Observed locality radii of a unitary at coefficient level `delta`.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub delta: f64,
    /// `S(R)` for `R = 0..=diameter(domain)`: the largest codomain
    /// distance between coefficients of level >= delta whose source points
    /// are within `R`.
    pub s_of_r: Vec<u32>,
    /// Number of domain probe columns with non-empty support at `delta`.
    pub supported_columns: usize,
}

impl AuditReport {
    pub fn s_at(&self, r: u32) -> u32 {
        let idx = (r as usize).min(self.s_of_r.len() - 1);
        self.s_of_r[idx]
    }
}

/// Scans all coefficient pairs of magnitude >= `delta` (fiber vectors
/// drawn from `probes`, defaulting to the standard fiber basis at every
/// point) and reports the largest codomain spread per domain radius.
pub fn locality_audit(
    u: &FiniteUnitary,
    delta: f64,
    probes: Option<&[Vec<DVector<Complex64>>]>,
) -> Result<AuditReport> {
    if delta <= 0.0 {
        return Err(Error::Schema("audit level delta must be positive".to_string()));
    }
    let n = u.domain().n();
    let standard: Vec<DVector<Complex64>> = (0..u.k_dom())
        .map(|i| {
            let mut e = DVector::zeros(u.k_dom());
            e[i] = cplx(1.0);
            e
        })
        .collect();

    // union of supports over the probe vectors at each point
    let mut supports: Vec<Vec<usize>> = Vec::with_capacity(n);
    for x in 0..n {
        let vectors = match probes {
            Some(list) => &list[x],
            None => &standard,
        };
        let mut support = Vec::new();
        for v in vectors {
            let masses = u.fiber_masses(&u.column(x, v));
            for (y, &m) in masses.iter().enumerate() {
                if m >= delta {
                    support.push(y);
                }
            }
        }
        support.sort_unstable();
        support.dedup();
        supports.push(support);
    }

    let diam = u.domain().diameter();
    let mut buckets = vec![0u32; diam as usize + 1];
    for x1 in 0..n {
        if supports[x1].is_empty() {
            continue;
        }
        for x2 in x1..n {
            if supports[x2].is_empty() {
                continue;
            }
            let r = u.domain().dist(x1, x2) as usize;
            let mut spread = 0u32;
            for &y1 in &supports[x1] {
                for &y2 in &supports[x2] {
                    spread = spread.max(u.codomain().dist(y1, y2));
                }
            }
            buckets[r] = buckets[r].max(spread);
        }
    }
    for r in 1..buckets.len() {
        buckets[r] = buckets[r].max(buckets[r - 1]);
    }
    Ok(AuditReport {
        delta,
        s_of_r: buckets,
        supported_columns: supports.iter().filter(|s| !s.is_empty()).count(),
    })
}

/// Family view of locality audits: the per-index `S(R)` table over the
/// common radius range with a stabilization verdict.
#[derive(Debug, Clone, Serialize)]
pub struct LocalityFamilyReport {
    pub indices: Vec<usize>,
    pub common_radius: u32,
    /// Rows indexed by R; columns follow `indices`.
    pub s_table: Vec<Vec<u32>>,
    pub verdict: crate::maps::Verdict,
}

pub fn locality_family_report(
    audits: &BTreeMap<usize, AuditReport>,
) -> Result<LocalityFamilyReport> {
    if audits.is_empty() {
        return Err(Error::IncompatibleFamily("empty audit family".to_string()));
    }
    let indices: Vec<usize> = audits.keys().copied().collect();
    let common_radius = audits
        .values()
        .map(|a| (a.s_of_r.len() - 1) as u32)
        .min()
        .unwrap();
    let mut s_table = Vec::with_capacity(common_radius as usize + 1);
    let mut verdict = crate::maps::Verdict::Bounded;
    for r in 0..=common_radius {
        let row: Vec<u32> = audits.values().map(|a| a.s_at(r)).collect();
        verdict = verdict.combine(crate::maps::stabilization_verdict(&row));
        s_table.push(row);
    }
    Ok(LocalityFamilyReport { indices, common_radius, s_table, verdict })
}

// ---------------------------------------------------------------------------
// Covering unitaries
// ---------------------------------------------------------------------------

/// A covering bound `C` for a unitary against a map, with the violating
/// pairs when a claimed bound fails. The bound holds exactly when
/// `witnesses` is empty.
#[derive(Debug, Clone, Serialize)]
pub struct CoveringCertificate {
    pub c: u32,
    pub witnesses: Vec<(usize, usize)>,
}

/// Tight covering constant by exhaustive scan: the largest `d(f(x), y)`
/// over coefficient blocks above the support floor.
pub fn verify_covers(u: &FiniteUnitary, f: &PointMap) -> Result<CoveringCertificate> {
    verify_covers_with_floor(u, f, SUPPORT_FLOOR)
}

pub fn verify_covers_with_floor(
    u: &FiniteUnitary,
    f: &PointMap,
    floor: f64,
) -> Result<CoveringCertificate> {
    check_cover_shapes(u, f)?;
    let mut c = 0u32;
    for x in 0..u.domain().n() {
        let fx = f.apply(x);
        for y in 0..u.codomain().n() {
            if u.block(y, x).norm() > floor {
                c = c.max(u.codomain().dist(fx, y));
            }
        }
    }
    Ok(CoveringCertificate { c, witnesses: Vec::new() })
}

/// Checks a claimed bound, collecting every violating `(x, y)` pair.
pub fn check_covering_bound(
    u: &FiniteUnitary,
    f: &PointMap,
    claimed: u32,
    floor: f64,
) -> Result<CoveringCertificate> {
    check_cover_shapes(u, f)?;
    let mut witnesses = Vec::new();
    for x in 0..u.domain().n() {
        let fx = f.apply(x);
        for y in 0..u.codomain().n() {
            if u.block(y, x).norm() > floor && u.codomain().dist(fx, y) > claimed {
                witnesses.push((x, y));
            }
        }
    }
    Ok(CoveringCertificate { c: claimed, witnesses })
}

fn check_cover_shapes(u: &FiniteUnitary, f: &PointMap) -> Result<()> {
    if !same_space(u.domain(), f.domain()) || !same_space(u.codomain(), f.codomain()) {
        return Err(Error::ShapeMismatch(format!(
            "unitary over '{}' -> '{}' vs map over '{}' -> '{}'",
            u.domain().label(),
            u.codomain().label(),
            f.domain().label(),
            f.codomain().label()
        )));
    }
    Ok(())
}

/// Output of the covering construction.
#[derive(Debug, Clone)]
pub struct CoveringResult {
    pub unitary: FiniteUnitary,
    pub certificate: CoveringCertificate,
    /// Codomain partition pieces, each sorted.
    pub pieces: Vec<Vec<usize>>,
    pub k_dom: usize,
    pub k_cod: usize,
    /// Piece-diameter budget that finally admitted a partition.
    pub diameter_used: u32,
}

/// Builds a unitary covering `f` as a direct sum of seeded random blocks.
///
/// The codomain is scanned in index order; each unassigned image point
/// starts a piece that greedily absorbs unassigned points while its
/// diameter stays within budget. Leftover points trigger a retry with a
/// larger budget. Fiber dimensions are the smallest pair matching the
/// piece cardinalities blockwise; mismatched piece ratios or a fiber
/// dimension beyond `fiber_cap` are rejections.
pub fn covering_unitary(
    f: &PointMap,
    max_block_diameter: u32,
    seed: u64,
    fiber_cap: usize,
) -> Result<CoveringResult> {
    let codomain = f.codomain();
    let diameter = codomain.diameter();
    let budget_end = diameter.max(max_block_diameter);

    let mut found: Option<(Vec<Vec<usize>>, u32)> = None;
    for budget in max_block_diameter..=budget_end {
        if let Some(pieces) = try_partition(f, budget) {
            found = Some((pieces, budget));
            break;
        }
    }
    let (pieces, diameter_used) = found.ok_or_else(|| {
        Error::UnreachablePiece(format!(
            "no piece budget up to {budget_end} covers '{}' with every piece meeting the image",
            codomain.label()
        ))
    })?;

    // preimages and the blockwise dimension match
    let mut preimages: Vec<Vec<usize>> = Vec::with_capacity(pieces.len());
    for piece in &pieces {
        let members: Vec<usize> =
            (0..f.domain().n()).filter(|&x| piece.binary_search(&f.apply(x)).is_ok()).collect();
        preimages.push(members);
    }
    let mut ratio: Option<(usize, usize)> = None;
    for (piece, pre) in pieces.iter().zip(&preimages) {
        debug_assert!(!pre.is_empty(), "every piece meets the image");
        let g = gcd(piece.len(), pre.len());
        let r = (piece.len() / g, pre.len() / g);
        match ratio {
            None => ratio = Some(r),
            Some(prev) if prev != r => {
                return Err(Error::DimensionObstruction(format!(
                    "piece cardinality ratios differ: {}/{} vs {}/{}",
                    prev.0, prev.1, r.0, r.1
                )));
            }
            _ => {}
        }
    }
    let (p, q) = ratio.expect("at least one piece");
    // |X_n| * k_dom = |Y_n| * k_cod blockwise forces k_dom : k_cod = p : q
    let (k_dom, k_cod) = (p, q);
    if k_dom > fiber_cap || k_cod > fiber_cap {
        return Err(Error::DimensionObstruction(format!(
            "matching fiber dimensions {k_dom} and {k_cod} exceed the cap {fiber_cap}"
        )));
    }

    let rows = codomain.n() * k_cod;
    let mut matrix = DMatrix::zeros(rows, f.domain().n() * k_dom);
    for (piece_idx, (piece, pre)) in pieces.iter().zip(&preimages).enumerate() {
        let dim = pre.len() * k_dom;
        debug_assert_eq!(dim, piece.len() * k_cod);
        let block = seeded_unitary(dim, splitmix(seed, piece_idx as u64));
        for (col_pos, &x) in pre.iter().enumerate() {
            for i in 0..k_dom {
                let col = col_pos * k_dom + i;
                for (row_pos, &y) in piece.iter().enumerate() {
                    for j in 0..k_cod {
                        let row = row_pos * k_cod + j;
                        matrix[(y * k_cod + j, x * k_dom + i)] = block[(row, col)];
                    }
                }
            }
        }
    }
    let unitary =
        FiniteUnitary::new(f.domain().clone(), codomain.clone(), k_dom, k_cod, matrix)?;
    let certificate = verify_covers(&unitary, f)?;
    Ok(CoveringResult { unitary, certificate, pieces, k_dom, k_cod, diameter_used })
}

/// One greedy pass at a fixed diameter budget. Returns `None` when some
/// codomain point is neither in the image's reach nor absorbed by a piece.
fn try_partition(f: &PointMap, budget: u32) -> Option<Vec<Vec<usize>>> {
    let codomain = f.codomain();
    let n = codomain.n();
    let mut in_image = vec![false; n];
    for x in 0..f.domain().n() {
        in_image[f.apply(x)] = true;
    }
    let mut assigned = vec![false; n];
    let mut pieces: Vec<Vec<usize>> = Vec::new();
    for y in 0..n {
        if assigned[y] || !in_image[y] {
            continue;
        }
        let mut piece = vec![y];
        assigned[y] = true;
        for z in 0..n {
            if assigned[z] {
                continue;
            }
            if piece.iter().all(|&m| codomain.dist(m, z) <= budget) {
                piece.push(z);
                assigned[z] = true;
            }
        }
        piece.sort_unstable();
        pieces.push(piece);
    }
    if assigned.iter().all(|&a| a) {
        Some(pieces)
    } else {
        None
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

// ---------------------------------------------------------------------------
// Conjugation propagation bound
// ---------------------------------------------------------------------------

/// Result of checking `prop(U T U*) <= rho_plus(prop(T)) + 2C`.
#[derive(Debug, Clone, Serialize)]
pub struct PropagationBoundReport {
    pub prop_t: u32,
    pub prop_conjugated: u32,
    pub rho_at_prop: u32,
    pub covering_c: u32,
    pub bound: u32,
    pub holds: bool,
}

/// Conjugates `T` along `U`, prunes at the support floor, and compares the
/// resulting propagation against the bound derived from the covering
/// constant of `U` over `f` and the expansion profile of `f`.
pub fn conjugation_propagation_bound(
    u: &FiniteUnitary,
    f: &PointMap,
    t: &BandOperator,
) -> Result<PropagationBoundReport> {
    let certificate = verify_covers(u, f)?;
    let rho = expansion_profile(f);
    let prop_t = t.propagation()?;
    let rho_at_prop = rho.eval(prop_t);
    let bound = rho_at_prop + 2 * certificate.c;
    let conjugated = u.conjugate(t)?;
    let prop_conjugated = conjugated.propagation()?;
    Ok(PropagationBoundReport {
        prop_t,
        prop_conjugated,
        rho_at_prop,
        covering_c: certificate.c,
        bound,
        holds: prop_conjugated <= bound,
    })
}

// ---------------------------------------------------------------------------
// Band perturbation (noise experiments)
// ---------------------------------------------------------------------------

/// Adds entrywise noise of magnitude at most `magnitude` on the band
/// `d(f(x), y) <= band` and restores unitarity by a phase-fixed QR pass.
/// Deterministic for a fixed seed.
pub fn perturb_within_band(
    u: &FiniteUnitary,
    f: &PointMap,
    band: u32,
    magnitude: f64,
    seed: u64,
) -> Result<FiniteUnitary> {
    check_cover_shapes(u, f)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = u.matrix().clone();
    for x in 0..u.domain().n() {
        let fx = f.apply(x);
        for y in 0..u.codomain().n() {
            if u.codomain().dist(fx, y) > band {
                continue;
            }
            for j in 0..u.k_cod() {
                for i in 0..u.k_dom() {
                    let radius = magnitude * rng.gen::<f64>();
                    let angle = std::f64::consts::TAU * rng.gen::<f64>();
                    noisy[(y * u.k_cod() + j, x * u.k_dom() + i)] +=
                        Complex64::new(radius * angle.cos(), radius * angle.sin());
                }
            }
        }
    }
    let dim = noisy.ncols();
    let qr = noisy.qr();
    let r = qr.r();
    let mut q = qr.q();
    for jj in 0..dim {
        let diag = r[(jj, jj)];
        let phase = if diag.norm() > 0.0 { diag / cplx(diag.norm()) } else { cplx(1.0) };
        for ii in 0..dim {
            q[(ii, jj)] *= phase;
        }
    }
    FiniteUnitary::new(
        u.domain().clone(),
        u.codomain().clone(),
        u.k_dom(),
        u.k_cod(),
        q,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::closeness_constant;
    use crate::space::{build_space, GeneratorRecipe};

    fn path(n: usize) -> Arc<FiniteMetricSpace> {
        build_space(&GeneratorRecipe::Path, n).unwrap()
    }

    fn random_secret(space: &Arc<FiniteMetricSpace>, k: usize, seed: u64) -> FiniteUnitary {
        let dim = space.n() * k;
        FiniteUnitary::new(space.clone(), space.clone(), k, k, seeded_unitary(dim, seed))
            .unwrap()
    }

    fn dft_unitary(space: &Arc<FiniteMetricSpace>) -> FiniteUnitary {
        let n = space.n();
        let scale = 1.0 / (n as f64).sqrt();
        let matrix = DMatrix::from_fn(n, n, |r, c| {
            let angle = -std::f64::consts::TAU * (r * c) as f64 / n as f64;
            Complex64::new(angle.cos() * scale, angle.sin() * scale)
        });
        FiniteUnitary::new(space.clone(), space.clone(), 1, 1, matrix).unwrap()
    }

    #[test]
    fn seeded_unitary_is_unitary_and_deterministic() {
        let a = seeded_unitary(12, 5);
        let b = seeded_unitary(12, 5);
        assert_eq!(a, b);
        assert!(unitarity_defect(&a) < 1e-12);
    }

    #[test]
    fn permutation_unitary_round_trip() {
        let space = path(6);
        let sigma =
            PointMap::new(space.clone(), space.clone(), vec![2, 0, 1, 4, 3, 5]).unwrap();
        let u = FiniteUnitary::permutation(&sigma, 2).unwrap();
        let extraction = extract_map_threshold(&u, &ExtractionParams::default()).unwrap();
        assert_eq!(extraction.map.table(), sigma.table());
        assert_eq!(extraction.verdict, ExtractionVerdict::Certified);
        assert!(extraction.achieved.iter().all(|&m| (m - 1.0).abs() < 1e-12));
    }

    #[test]
    fn recovery_from_identity_table() {
        let space = path(5);
        let id_map = PointMap::identity(space.clone());
        let v = FiniteUnitary::permutation(&id_map, 1).unwrap();
        let table = IsomorphismTable::conjugation_by(&v);
        let recovered = recover_unitary(&table).unwrap();
        assert!(recovered.max_generator_defect <= 1e-10);
        // identity up to a global phase: every diagonal entry has modulus 1
        for d in 0..5 {
            let entry = recovered.unitary.matrix()[(d, d)];
            assert!((entry.norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn recovery_from_permutation_table() {
        let space = path(6);
        let sigma =
            PointMap::new(space.clone(), space.clone(), vec![5, 3, 0, 1, 4, 2]).unwrap();
        let v = FiniteUnitary::permutation(&sigma, 1).unwrap();
        let table = IsomorphismTable::conjugation_by(&v);
        table.check_star_compatibility(1e-10).unwrap();
        let recovered = recover_unitary(&table).unwrap();
        assert!(recovered.max_generator_defect <= 1e-10);
        for x in 0..6 {
            let u_col = recovered.unitary.matrix().column(x);
            let v_col = v.matrix().column(x);
            let overlap: Complex64 = v_col.dotc(&u_col);
            assert!((overlap.norm() - 1.0).abs() <= 1e-10, "column {x}");
        }
    }

    #[test]
    fn recovery_from_random_secret() {
        let space = path(16);
        let secret = random_secret(&space, 2, 77);
        let table = IsomorphismTable::conjugation_by(&secret);
        let recovered = recover_unitary(&table).unwrap();
        assert!(recovered.max_generator_defect <= 1e-10);
        // global phase agreement on every basis vector
        for col in 0..32 {
            let overlap: Complex64 =
                secret.matrix().column(col).dotc(&recovered.unitary.matrix().column(col));
            assert!((overlap.norm() - 1.0).abs() <= 1e-10, "column {col}");
        }
    }

    #[test]
    fn recovery_rejects_rank_two_corner() {
        let space = path(4);
        let secret = random_secret(&space, 1, 3);
        let mut table = IsomorphismTable::conjugation_by(&secret);
        // overwrite the corner with a rank-two projection
        let p1 = {
            let col = secret.matrix().column(0).into_owned();
            &col * col.adjoint()
        };
        let p2 = {
            let col = secret.matrix().column(1).into_owned();
            &col * col.adjoint()
        };
        let corner = BandOperator::from_dense(
            space.clone(),
            space.clone(),
            1,
            1,
            &(p1 + p2),
            0.0,
        )
        .unwrap();
        table.insert_image(GeneratorKey { x: 0, i: 0, y: 0, j: 0 }, corner);
        assert!(matches!(recover_unitary(&table), Err(Error::NotRankOne(_))));
    }

    #[test]
    fn coefficient_identity_on_identity_unitary() {
        let space = path(5);
        let u = FiniteUnitary::permutation(&PointMap::identity(space.clone()), 2).unwrap();
        let v1 = DVector::from_vec(vec![cplx(1.0), cplx(0.0)]);
        let w1 = DVector::from_vec(vec![Complex64::new(0.5, 0.5), cplx(0.3)]);
        // all points distinct: both routes vanish
        let args = CoefficientArgs {
            x1: 0,
            v1: v1.clone(),
            x2: 1,
            v2: v1.clone(),
            y1: 2,
            w1: w1.clone(),
            y2: 3,
            w2: w1.clone(),
        };
        assert!(coefficient_formula_check(&u, &args) < 1e-15);
        // matching points: both routes give <w1, v1><v2, w2>
        let args = CoefficientArgs {
            x1: 2,
            v1: v1.clone(),
            x2: 3,
            v2: w1.clone(),
            y1: 2,
            w1: w1.clone(),
            y2: 3,
            w2: v1.clone(),
        };
        assert!(coefficient_formula_check(&u, &args) < 1e-15);
    }

    #[test]
    fn coefficient_identity_on_random_unitaries() {
        let space = path(8);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..3u64 {
            let u = random_secret(&space, 2, seed);
            for _ in 0..300 {
                let rand_fiber = |rng: &mut ChaCha8Rng| {
                    let v = DVector::from_fn(2, |_, _| gaussian(rng));
                    let norm = v.norm();
                    v / cplx(norm)
                };
                let args = CoefficientArgs {
                    x1: rng.gen_range(0..8),
                    v1: rand_fiber(&mut rng),
                    x2: rng.gen_range(0..8),
                    v2: rand_fiber(&mut rng),
                    y1: rng.gen_range(0..8),
                    w1: rand_fiber(&mut rng),
                    y2: rng.gen_range(0..8),
                    w2: rand_fiber(&mut rng),
                };
                assert!(coefficient_formula_check(&u, &args) <= 1e-12);
            }
        }
    }

    #[test]
    fn threshold_extraction_on_spread_columns() {
        let space = path(8);
        let u = dft_unitary(&space);
        let level = 1.0 / (8f64).sqrt();
        let ok =
            extract_map_threshold(&u, &ExtractionParams { c: 0.9 * level, v0_index: 0 })
                .unwrap();
        assert_eq!(ok.verdict, ExtractionVerdict::Certified);
        assert!(ok.achieved.iter().all(|&m| (m - level).abs() < 1e-12));
        let too_high =
            extract_map_threshold(&u, &ExtractionParams { c: 1.1 * level, v0_index: 0 })
                .unwrap();
        assert!(matches!(too_high.verdict, ExtractionVerdict::Uncertified { .. }));
        assert!((too_high.min_achieved - level).abs() < 1e-12);
    }

    #[test]
    fn support_extraction_on_permutation() {
        let space = path(7);
        let sigma = PointMap::new(
            space.clone(),
            space.clone(),
            vec![3, 1, 0, 2, 6, 5, 4],
        )
        .unwrap();
        let u = FiniteUnitary::permutation(&sigma, 1).unwrap();
        let f = extract_map_support(&u, 0.0, 0).unwrap();
        assert_eq!(f.table(), sigma.table());
        // a floor above every mass names the failing point
        assert!(matches!(
            extract_map_support(&u, 2.0, 0),
            Err(Error::NoSupport { x: 0, .. })
        ));
    }

    #[test]
    fn locality_audit_of_isometric_permutation() {
        let space = path(9);
        // translation-like isometry: reversal
        let sigma =
            PointMap::new(space.clone(), space.clone(), (0..9).rev().collect()).unwrap();
        let u = FiniteUnitary::permutation(&sigma, 1).unwrap();
        let report = locality_audit(&u, 0.5, None).unwrap();
        for r in 0..=8u32 {
            assert_eq!(report.s_at(r), r, "radius {r}");
        }
    }

    #[test]
    fn covering_identity_with_zero_diameter() {
        let space = path(8);
        let id = PointMap::identity(space);
        let result = covering_unitary(&id, 0, 1, FIBER_CAP).unwrap();
        assert_eq!(result.certificate.c, 0);
        assert_eq!(result.k_dom, 1);
        assert_eq!(result.k_cod, 1);
        assert_eq!(result.pieces.len(), 8);
        // blocks are 1x1 phases
        for y in 0..8 {
            for x in 0..8 {
                let m = result.unitary.block(y, x).norm();
                if x == y {
                    assert!((m - 1.0).abs() < 1e-12);
                } else {
                    assert_eq!(m, 0.0);
                }
            }
        }
    }

    #[test]
    fn covering_doubling_map_balances_fibers() {
        let small = path(5);
        let large = path(10);
        let f =
            PointMap::new(small, large, (0..5).map(|i| 2 * i).collect()).unwrap();
        let result = covering_unitary(&f, 1, 7, FIBER_CAP).unwrap();
        assert_eq!(result.k_dom, 2);
        assert_eq!(result.k_cod, 1);
        assert_eq!(result.certificate.c, 1);
        assert_eq!(result.pieces, vec![
            vec![0, 1],
            vec![2, 3],
            vec![4, 5],
            vec![6, 7],
            vec![8, 9]
        ]);
        // threshold extraction lands within 2C of the covered map
        let extraction =
            extract_map_threshold(&result.unitary, &ExtractionParams::default()).unwrap();
        let dist = closeness_constant(&extraction.map, &f).unwrap();
        assert!(dist <= 2 * result.certificate.c);
    }

    #[test]
    fn covering_bijection_has_zero_constant() {
        let space = path(6);
        let relabel =
            PointMap::new(space.clone(), space.clone(), vec![1, 0, 3, 2, 5, 4]).unwrap();
        let result = covering_unitary(&relabel, 0, 3, FIBER_CAP).unwrap();
        assert_eq!(result.certificate.c, 0);
        let f = extract_map_support(&result.unitary, 1e-12, 0).unwrap();
        assert_eq!(f.table(), relabel.table());
    }

    #[test]
    fn covering_rejects_mismatched_ratios() {
        let dom = path(3);
        let cod = path(4);
        let f = PointMap::new(dom, cod, vec![0, 0, 2]).unwrap();
        let err = covering_unitary(&f, 1, 0, FIBER_CAP).unwrap_err();
        assert!(matches!(err, Error::DimensionObstruction(_)));
    }

    #[test]
    fn covering_rejects_fiber_cap_overflow() {
        let dom = path(1);
        let cod = path(20);
        let f = PointMap::new(dom, cod, vec![0]).unwrap();
        let err = covering_unitary(&f, 0, 0, FIBER_CAP).unwrap_err();
        assert!(matches!(err, Error::DimensionObstruction(_)));
    }

    #[test]
    fn verify_covers_dense_unitary_is_near_vacuous() {
        // a fully supported unitary covers anything only at diameter scale
        let space = path(7);
        let u = FiniteUnitary::new(space.clone(), space.clone(), 1, 1, seeded_unitary(7, 9))
            .unwrap();
        let id = PointMap::identity(space.clone());
        let cert = verify_covers(&u, &id).unwrap();
        assert_eq!(cert.c, space.diameter());
    }

    #[test]
    fn recovery_rejects_corrupted_column_image() {
        let space = path(5);
        let secret = random_secret(&space, 1, 12);
        let mut table = IsomorphismTable::conjugation_by(&secret);
        // swap one column image for an unrelated rank-one operator
        let key = GeneratorKey { x: 2, i: 0, y: 0, j: 0 };
        let bogus = {
            let a = secret.matrix().column(3).into_owned();
            let b = secret.matrix().column(4).into_owned();
            let dense = &a * b.adjoint();
            BandOperator::from_dense(space.clone(), space.clone(), 1, 1, &dense, 0.0).unwrap()
        };
        table.insert_image(key, bogus);
        let err = recover_unitary(&table).unwrap_err();
        assert!(matches!(err, Error::Compatibility { .. } | Error::NotUnitary { .. }));
    }

    #[test]
    fn verify_covers_permutation_is_tight() {
        let space = path(6);
        let sigma =
            PointMap::new(space.clone(), space.clone(), vec![2, 0, 1, 4, 3, 5]).unwrap();
        let u = FiniteUnitary::permutation(&sigma, 1).unwrap();
        let cert = verify_covers(&u, &sigma).unwrap();
        assert_eq!(cert.c, 0);
        assert!(cert.witnesses.is_empty());
        // claiming a bound below the truth yields witnesses
        let id = PointMap::identity(space);
        let check = check_covering_bound(&u, &id, 0, SUPPORT_FLOOR).unwrap();
        assert!(!check.witnesses.is_empty());
    }

    #[test]
    fn propagation_bound_for_isometric_relabeling() {
        let space = path(8);
        let shift_map = PointMap::new(
            space.clone(),
            space.clone(),
            (0..8).rev().collect(),
        )
        .unwrap();
        let u = FiniteUnitary::permutation(&shift_map, 1).unwrap();
        let t = crate::band::random_band(&space, 2, 0.8, 1, 5);
        let report = conjugation_propagation_bound(&u, &shift_map, &t).unwrap();
        assert!(report.holds);
        // isometric relabeling preserves propagation exactly
        assert_eq!(report.prop_conjugated, report.prop_t);
    }

    #[test]
    fn propagation_bound_identity_operator() {
        let small = path(5);
        let large = path(10);
        let f = PointMap::new(small.clone(), large, (0..5).map(|i| 2 * i).collect()).unwrap();
        let cover = covering_unitary(&f, 1, 11, FIBER_CAP).unwrap();
        let id = BandOperator::identity(small, 2);
        let report = conjugation_propagation_bound(&cover.unitary, &f, &id).unwrap();
        assert!(report.holds);
        assert_eq!(report.prop_t, 0);
    }

    #[test]
    fn propagation_bound_doubling_shift() {
        let small = path(5);
        let large = path(10);
        let f =
            PointMap::new(small.clone(), large, (0..5).map(|i| 2 * i).collect()).unwrap();
        let cover = covering_unitary(&f, 1, 2, FIBER_CAP).unwrap();
        assert_eq!(cover.certificate.c, 1);
        // nearest-neighbor shift with fiber 2
        let mut blocks = BTreeMap::new();
        for i in 0..4usize {
            blocks.insert((i + 1, i), DMatrix::identity(2, 2));
        }
        let t = BandOperator::new(small.clone(), small, 2, 2, blocks).unwrap();
        let report = conjugation_propagation_bound(&cover.unitary, &f, &t).unwrap();
        assert_eq!(report.prop_t, 1);
        assert_eq!(report.bound, 2 + 2 * 1);
        assert!(report.holds);
    }

    #[test]
    fn perturbed_covering_still_extracts_nearby_map() {
        let small = path(8);
        let large = path(16);
        let f =
            PointMap::new(small, large, (0..8).map(|i| 2 * i).collect()).unwrap();
        let cover = covering_unitary(&f, 1, 13, FIBER_CAP).unwrap();
        let noisy =
            perturb_within_band(&cover.unitary, &f, cover.certificate.c, 0.1, 21).unwrap();
        let extraction = extract_map_threshold(&noisy, &ExtractionParams::default()).unwrap();
        let dist = closeness_constant(&extraction.map, &f).unwrap();
        assert!(dist <= 2 * cover.certificate.c + 1, "distance {dist}");
    }

    #[test]
    fn unitary_document_round_trip() {
        let space = path(5);
        let mut store = SpaceStore::new();
        store.insert(space.clone());
        let u = random_secret(&space, 1, 17);
        let text = serde_json::to_string(&u.to_document()).unwrap();
        let doc: UnitaryDocument = serde_json::from_str(&text).unwrap();
        let back = FiniteUnitary::from_document(&doc, &store).unwrap();
        assert_eq!(back.matrix(), u.matrix());
    }
}
