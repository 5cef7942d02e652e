//! Desk-scale computational coarse geometry.
//!
//! The crate builds finite metric spaces and nested truncation families,
//! certifies coarse equivalences between them, runs a sparse algebra of
//! finite-propagation block operators, decides metric sparsification
//! instances, and executes both directions of the correspondence between
//! coarse equivalences and spatially implemented operator-algebra
//! isomorphisms: recovering a unitary from an isomorphism table, extracting
//! point maps from unitaries by threshold or support, constructing covering
//! unitaries from maps, and checking the quantitative locality bounds that
//! tie the two sides together.

pub mod band;
pub mod category;
pub mod corpus;
pub mod error;
pub mod maps;
pub mod rigidity;
pub mod space;
pub mod sparsify;

pub use error::{Error, Result};
