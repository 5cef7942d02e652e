use thiserror::Error;

/// Crate-wide error type. Verdicts (uncertified extractions, infeasible
/// instances, divergent families) are *not* errors; they are returned as data.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid generating set: {0}")]
    InvalidGeneratingSet(String),

    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),

    #[error("metric axioms violated: {0}")]
    MetricViolation(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown space label '{0}'")]
    UnknownLabel(String),

    #[error("family is not nested: {0}")]
    FamilyNesting(String),

    #[error("incompatible family maps: {0}")]
    IncompatibleFamily(String),

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("incompatible operator shapes: {0}")]
    ShapeMismatch(String),

    #[error("propagation is only defined for square operators (row space {row}, column space {col})")]
    RectangularPropagation { row: String, col: String },

    #[error("dense evaluation limit exceeded: {rows} rows > {limit}; compress the operator before taking norms")]
    DenseLimitExceeded { rows: usize, limit: usize },

    #[error("operators {i} and {j} are not mutually orthogonal (|{which}| = {norm:.3e})")]
    NotOrthogonal {
        i: usize,
        j: usize,
        which: String,
        norm: f64,
    },

    #[error("matrix is not unitary (defect {defect:.3e} > {tol:.3e})")]
    NotUnitary { defect: f64, tol: f64 },

    #[error("corner image is not a rank-one projection: {0}")]
    NotRankOne(String),

    #[error("isomorphism table incomplete: missing image of generator {0}")]
    TableIncomplete(String),

    #[error("*-compatibility failure at generator {witness}: defect {defect:.3e}")]
    Compatibility { witness: String, defect: f64 },

    #[error("no coefficient above {eta:.3e} in column of point {x}")]
    NoSupport { x: usize, eta: f64 },

    #[error("extraction uncertified at family index {index} (worst point {worst_x}, mass {mass:.3e})")]
    Uncertified {
        index: usize,
        worst_x: usize,
        mass: f64,
    },

    #[error("no blockwise fiber dimensions match: {0}")]
    DimensionObstruction(String),

    #[error("codomain partition failed: {0}")]
    UnreachablePiece(String),

    #[error("decomposition pieces overlap at point {point}")]
    OverlappingPieces { point: usize },

    #[error("exact solver cap exceeded: {n} points > {cap}")]
    SolverCapExceeded { n: usize, cap: usize },

    #[error("mass is not normalized: total {total} (tolerance {tol:.1e})")]
    NotNormalized { total: f64, tol: f64 },

    #[error("mass entries must be non-negative (mass[{index}] = {value})")]
    NegativeMass { index: usize, value: f64 },

    #[error("not a unit vector: norm {norm} (tolerance {tol:.1e})")]
    NotUnitVector { norm: f64, tol: f64 },

    #[error("arithmetic overflow in group element computation")]
    Overflow,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
