//! Shipped map families over nested truncations: the named coarse
//! equivalences that the round-trip machinery and the batch commands are
//! exercised against.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{MapDocument, PointMap};
use crate::space::{FamilyDocument, GeneratorRecipe, SpaceFamily};

/// Built-in family kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// Identity on a path family.
    Identity,
    /// Relabeling swapping points 0 and 1 on a path family.
    Swap01,
    /// Relabeling swapping 2i and 2i+1 on a path family (even sizes).
    PairSwap,
    /// `i -> 2i` from each path truncation into the doubled one.
    Doubling,
    /// `j -> floor(j/2)` from each doubled path truncation back down.
    Halving,
    /// Identity between the axis-edge grid and the grid with diagonals.
    GridDiagIdentity,
}

impl FamilyKind {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::Identity => "identity",
            FamilyKind::Swap01 => "swap01",
            FamilyKind::PairSwap => "pairswap",
            FamilyKind::Doubling => "doubling",
            FamilyKind::Halving => "halving",
            FamilyKind::GridDiagIdentity => "grid-diag-identity",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(FamilyKind::Identity),
            "swap01" => Ok(FamilyKind::Swap01),
            "pairswap" => Ok(FamilyKind::PairSwap),
            "doubling" => Ok(FamilyKind::Doubling),
            "halving" => Ok(FamilyKind::Halving),
            "grid-diag-identity" => Ok(FamilyKind::GridDiagIdentity),
            other => Err(Error::InvalidRecipe(format!("unknown map family preset '{other}'"))),
        }
    }

    pub const ALL: [FamilyKind; 6] = [
        FamilyKind::Identity,
        FamilyKind::Swap01,
        FamilyKind::PairSwap,
        FamilyKind::Doubling,
        FamilyKind::Halving,
        FamilyKind::GridDiagIdentity,
    ];
}

/// A family of maps over nested truncations, keyed by the domain
/// truncation size. Domain and codomain families are aligned by position,
/// so the codomain of the map at domain index `m` is the codomain family
/// member at the same position.
#[derive(Debug, Clone)]
pub struct MapFamily {
    pub name: String,
    pub domain_family: SpaceFamily,
    pub codomain_family: SpaceFamily,
    pub maps: BTreeMap<usize, PointMap>,
}

impl MapFamily {
    pub fn indices(&self) -> Vec<usize> {
        self.maps.keys().copied().collect()
    }

    pub fn to_document(&self) -> MapFamilyDocument {
        MapFamilyDocument {
            name: self.name.clone(),
            domain_family: self.domain_family.to_document(),
            codomain_family: self.codomain_family.to_document(),
            maps: self
                .maps
                .iter()
                .map(|(idx, map)| (idx.to_string(), map.to_document()))
                .collect(),
        }
    }

    pub fn from_document(doc: &MapFamilyDocument) -> Result<Self> {
        let domain_family = SpaceFamily::from_document(&doc.domain_family)?;
        let codomain_family = SpaceFamily::from_document(&doc.codomain_family)?;
        let mut maps = BTreeMap::new();
        for (key, map_doc) in &doc.maps {
            let index: usize = key
                .parse()
                .map_err(|_| Error::Schema(format!("map index '{key}' is not an integer")))?;
            let position = domain_family
                .indices()
                .iter()
                .position(|&i| i == index)
                .ok_or_else(|| {
                    Error::Schema(format!("map index {index} is not a domain family index"))
                })?;
            let cod_index = *codomain_family.indices().get(position).ok_or_else(|| {
                Error::Schema("codomain family is shorter than the domain family".to_string())
            })?;
            let domain = domain_family.space(index).expect("index verified").clone();
            let codomain = codomain_family.space(cod_index).expect("aligned index").clone();
            if map_doc.domain != domain.label() || map_doc.codomain != codomain.label() {
                return Err(Error::Schema(format!(
                    "map at index {index} references '{}' -> '{}', expected '{}' -> '{}'",
                    map_doc.domain,
                    map_doc.codomain,
                    domain.label(),
                    codomain.label()
                )));
            }
            maps.insert(index, PointMap::new(domain, codomain, map_doc.table.clone())?);
        }
        if maps.len() != domain_family.indices().len() {
            return Err(Error::Schema(format!(
                "family has {} indices but {} maps",
                domain_family.indices().len(),
                maps.len()
            )));
        }
        Ok(Self { name: doc.name.clone(), domain_family, codomain_family, maps })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("map family serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(text)?)
    }
}

/// On-disk shape of a map family: both space families embedded plus the
/// per-index tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapFamilyDocument {
    pub name: String,
    pub domain_family: FamilyDocument,
    pub codomain_family: FamilyDocument,
    pub maps: BTreeMap<String, MapDocument>,
}

/// Builds a named map family over the given domain truncation sizes.
pub fn build_map_family(kind: FamilyKind, indices: &[usize]) -> Result<MapFamily> {
    match kind {
        FamilyKind::Identity | FamilyKind::Swap01 | FamilyKind::PairSwap => {
            if kind != FamilyKind::Identity && indices.iter().any(|&m| m % 2 != 0) {
                return Err(Error::InvalidRecipe(format!(
                    "{} needs even truncation sizes",
                    kind.name()
                )));
            }
            if kind == FamilyKind::Swap01 && indices.iter().any(|&m| m < 2) {
                return Err(Error::InvalidRecipe("swap01 needs at least two points".to_string()));
            }
            let family = SpaceFamily::build(GeneratorRecipe::Path, indices)?;
            let mut maps = BTreeMap::new();
            for (&m, space) in family.spaces() {
                let table: Vec<usize> = match kind {
                    FamilyKind::Identity => (0..m).collect(),
                    FamilyKind::Swap01 => {
                        let mut t: Vec<usize> = (0..m).collect();
                        t.swap(0, 1);
                        t
                    }
                    FamilyKind::PairSwap => (0..m).map(|i| i ^ 1).collect(),
                    _ => unreachable!(),
                };
                maps.insert(m, PointMap::new(space.clone(), space.clone(), table)?);
            }
            Ok(MapFamily {
                name: kind.name().to_string(),
                domain_family: family.clone(),
                codomain_family: family,
                maps,
            })
        }
        FamilyKind::Doubling => {
            let domain_family = SpaceFamily::build(GeneratorRecipe::Path, indices)?;
            let doubled: Vec<usize> = indices.iter().map(|&m| 2 * m).collect();
            let codomain_family = SpaceFamily::build(GeneratorRecipe::Path, &doubled)?;
            let mut maps = BTreeMap::new();
            for (&m, domain) in domain_family.spaces() {
                let codomain = codomain_family.space(2 * m).expect("doubled index").clone();
                let table: Vec<usize> = (0..m).map(|i| 2 * i).collect();
                maps.insert(m, PointMap::new(domain.clone(), codomain, table)?);
            }
            Ok(MapFamily {
                name: kind.name().to_string(),
                domain_family,
                codomain_family,
                maps,
            })
        }
        FamilyKind::Halving => {
            let doubled: Vec<usize> = indices.iter().map(|&m| 2 * m).collect();
            let domain_family = SpaceFamily::build(GeneratorRecipe::Path, &doubled)?;
            let codomain_family = SpaceFamily::build(GeneratorRecipe::Path, indices)?;
            let mut maps = BTreeMap::new();
            for &m in indices {
                let domain = domain_family.space(2 * m).expect("doubled index").clone();
                let codomain = codomain_family.space(m).expect("index").clone();
                let table: Vec<usize> = (0..2 * m).map(|j| j / 2).collect();
                maps.insert(2 * m, PointMap::new(domain, codomain, table)?);
            }
            Ok(MapFamily {
                name: kind.name().to_string(),
                domain_family,
                codomain_family,
                maps,
            })
        }
        FamilyKind::GridDiagIdentity => {
            let domain_family = SpaceFamily::build(GeneratorRecipe::Grid { dim: 2 }, indices)?;
            let codomain_family =
                SpaceFamily::build(GeneratorRecipe::GridDiag { dim: 2 }, indices)?;
            let mut maps = BTreeMap::new();
            for &m in indices {
                let domain = domain_family.space(m).expect("index").clone();
                let codomain = codomain_family.space(m).expect("index").clone();
                maps.insert(m, PointMap::new(domain, codomain, (0..m).collect())?);
            }
            Ok(MapFamily {
                name: kind.name().to_string(),
                domain_family,
                codomain_family,
                maps,
            })
        }
    }
}
