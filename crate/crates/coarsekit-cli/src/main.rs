//! Batch front end: generate spaces and families, run decomposition
//! solves, extraction and covering pipelines, orthogonal-sum probes,
//! geometry profiles, locality audits, and full category round trips.
//!
//! Every command is deterministic for fixed inputs and seed; reports are
//! written atomically as pretty JSON (plus CSV for tabular data). Verdicts
//! like UNCERTIFIED, INFEASIBLE, or DIVERGENT are successful runs (exit
//! 0); exit 2 marks invalid input and exit 3 a pipeline rejection.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use coarsekit::band::{
    orthogonal_sum_probe, BandOperator, OperatorDocument, SubsetProjection, DENSE_LIMIT,
    NORM_REL_TOL, SUPPORT_FLOOR,
};
use coarsekit::category::{functor_u, roundtrip_report, CoarseMorphismClass, ExtractionMode};
use coarsekit::corpus::{build_map_family, FamilyKind, MapFamily};
use coarsekit::error::Error;
use coarsekit::maps::PointMap;
use coarsekit::rigidity::{
    extract_map_support, extract_map_threshold, locality_audit, verify_covers_with_floor,
    ExtractionParams, ExtractionVerdict, FiniteUnitary, UnitaryDocument,
};
use coarsekit::space::{
    bounded_geometry_profile, build_space, FiniteMetricSpace, GeneratorRecipe, SpaceFamily,
    SpaceStore,
};
use coarsekit::sparsify::{sparsify_exact, sparsify_greedy, InstanceDocument, MassDistribution};

#[derive(Parser)]
#[command(
    name = "coarsekit",
    version,
    about = "Finite metric spaces, band operators, sparsification, and covering-unitary pipelines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for every randomized construction.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Relative tolerance override for operator-norm evaluation.
    #[arg(long, global = true)]
    tol_norm: Option<f64>,

    /// Support floor override when reading blocks as non-zero.
    #[arg(long, global = true)]
    tol_support: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a space (or a nested family with --family) from a recipe.
    GenSpace {
        /// Recipe name: path, grid2, grid2-diag, grid3, tree2, cayley-z2,
        /// cayley-free2, cayley-heis, ...
        recipe: String,
        /// Recipe size: point count (path), side (grid), depth (tree),
        /// radius (cayley). Not used with --family.
        size: Option<usize>,
        /// Comma-separated truncation point counts for a nested family.
        #[arg(long, value_delimiter = ',')]
        family: Option<Vec<usize>>,
    },
    /// Ball-growth profile of a space.
    Profile {
        space: PathBuf,
        /// Largest radius to profile; defaults to the diameter.
        #[arg(long)]
        r_max: Option<u32>,
    },
    /// Solve a mass-decomposition instance.
    #[command(group(ArgGroup::new("solver").required(true).args(["exact", "greedy"])))]
    Sparsify {
        instance: PathBuf,
        /// Space file providing the label referenced by the instance.
        #[arg(long)]
        space: PathBuf,
        /// Exact minimum-diameter solve (instance size capped).
        #[arg(long)]
        exact: bool,
        /// Greedy ball-growing heuristic.
        #[arg(long)]
        greedy: bool,
    },
    /// Extract a point map from a unitary by threshold or support.
    ExtractMap {
        unitary: PathBuf,
        /// Space files resolving the labels in the unitary (repeatable).
        #[arg(long)]
        space: Vec<PathBuf>,
        /// Certification level for threshold extraction.
        #[arg(long, default_value_t = 0.5)]
        c: f64,
        /// Fiber basis index of the probe vector.
        #[arg(long, default_value_t = 0)]
        v0: usize,
        /// Use the support rule instead of the threshold rule.
        #[arg(long)]
        support: bool,
        /// Support-rule floor.
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Verify the covering constant of a unitary against a map.
    Cover {
        unitary: PathBuf,
        map: PathBuf,
        #[arg(long)]
        space: Vec<PathBuf>,
    },
    /// Probe a pairwise-orthogonal operator family against two subsets.
    ProbeOrthsum {
        /// JSON array of operator documents.
        operators: PathBuf,
        #[arg(long)]
        space: Vec<PathBuf>,
        /// Comma-separated point list of the row subset.
        #[arg(long, value_delimiter = ',')]
        a: Vec<usize>,
        /// Comma-separated point list of the column subset.
        #[arg(long, value_delimiter = ',')]
        b: Vec<usize>,
    },
    /// Round-trip a map family through covering unitaries and extraction.
    #[command(group(ArgGroup::new("input").required(true).args(["family", "preset"])))]
    Roundtrip {
        /// Map-family JSON file.
        family: Option<PathBuf>,
        /// Built-in family preset (identity, swap01, pairswap, doubling,
        /// halving, grid-diag-identity, or all).
        #[arg(long)]
        preset: Option<String>,
        /// Truncation sizes for --preset.
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
        indices: Vec<usize>,
        /// Piece-diameter budget for the covering construction.
        #[arg(long, default_value_t = 0)]
        block_diameter: u32,
        /// Certification level for the extraction half.
        #[arg(long, default_value_t = 0.5)]
        c: f64,
        /// Also write the per-index covering unitaries.
        #[arg(long)]
        emit_unitaries: bool,
    },
    /// Observed locality radii of a unitary at a coefficient level.
    AuditLocality {
        unitary: PathBuf,
        #[arg(long)]
        space: Vec<PathBuf>,
        /// Coefficient magnitude level.
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("COARSEKIT_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_class(&err))
        }
    }
}

#[derive(Debug)]
enum CliError {
    /// Malformed or inconsistent input: exit 2.
    Input(String),
    /// A pipeline operation rejected workable-looking input: exit 3.
    Rejection(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(msg) | CliError::Rejection(msg) => write!(f, "{msg}"),
        }
    }
}

fn exit_class(err: &CliError) -> u8 {
    match err {
        CliError::Input(_) => 2,
        CliError::Rejection(_) => 3,
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let msg = err.to_string();
        match err {
            Error::Schema(_)
            | Error::Json(_)
            | Error::UnknownLabel(_)
            | Error::MetricViolation(_)
            | Error::InvalidRecipe(_)
            | Error::InvalidGeneratingSet(_)
            | Error::FamilyNesting(_)
            | Error::NotNormalized { .. }
            | Error::NegativeMass { .. }
            | Error::NotUnitVector { .. }
            | Error::ShapeMismatch(_)
            | Error::DomainMismatch(_) => CliError::Input(msg),
            _ => CliError::Rejection(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Input(err.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn run(cli: Cli) -> CliResult {
    for tol in [cli.tol_norm, cli.tol_support].into_iter().flatten() {
        if !(tol > 0.0) {
            return Err(CliError::Input(format!("tolerances must be positive, got {tol}")));
        }
    }
    let support_floor = cli.tol_support.unwrap_or(SUPPORT_FLOOR);
    let norm_tol = cli.tol_norm.unwrap_or(NORM_REL_TOL);
    fs::create_dir_all(&cli.out)?;

    match cli.command {
        Command::GenSpace { recipe, size, family } => {
            cmd_gen_space(&cli.out, &recipe, size, family.as_deref())
        }
        Command::Profile { space, r_max } => cmd_profile(&cli.out, &space, r_max),
        Command::Sparsify { instance, space, exact, greedy: _ } => {
            cmd_sparsify(&cli.out, &instance, &space, exact)
        }
        Command::ExtractMap { unitary, space, c, v0, support, eta } => {
            let eta = eta.unwrap_or(support_floor);
            cmd_extract_map(&cli.out, &unitary, &space, c, v0, support, eta)
        }
        Command::Cover { unitary, map, space } => {
            cmd_cover(&cli.out, &unitary, &map, &space, support_floor)
        }
        Command::ProbeOrthsum { operators, space, a, b } => {
            cmd_probe(&cli.out, &operators, &space, a, b, norm_tol)
        }
        Command::Roundtrip { family, preset, indices, block_diameter, c, emit_unitaries } => {
            cmd_roundtrip(
                &cli.out,
                family.as_deref(),
                preset.as_deref(),
                &indices,
                block_diameter,
                c,
                emit_unitaries,
                cli.seed,
            )
        }
        Command::AuditLocality { unitary, space, delta } => {
            cmd_audit(&cli.out, &unitary, &space, delta)
        }
    }
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

fn write_atomic(path: &Path, contents: &str) -> CliResult {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    write_atomic(&dir.join(name), &format!("{text}\n"))
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "output".to_string(), |s| s.to_string_lossy().to_string())
}

fn load_store(paths: &[PathBuf]) -> Result<SpaceStore, CliError> {
    let mut store = SpaceStore::new();
    for path in paths {
        let text = read_to_string(path)?;
        // a file may hold a single space or a whole family
        if let Ok(space) = FiniteMetricSpace::from_json(&text) {
            store.insert(std::sync::Arc::new(space));
            continue;
        }
        let family = SpaceFamily::from_json(&text).map_err(|e| {
            CliError::Input(format!("{}: neither a space nor a family: {e}", path.display()))
        })?;
        for (_, space) in family.spaces() {
            store.insert(space.clone());
        }
    }
    Ok(store)
}

fn load_unitary(path: &Path, store: &SpaceStore) -> Result<FiniteUnitary, CliError> {
    let doc: UnitaryDocument = serde_json::from_str(&read_to_string(path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(FiniteUnitary::from_document(&doc, store)?)
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

fn cmd_gen_space(
    out: &Path,
    recipe_name: &str,
    size: Option<usize>,
    family: Option<&[usize]>,
) -> CliResult {
    let recipe = GeneratorRecipe::parse(recipe_name)?;
    match family {
        Some(indices) => {
            let family = SpaceFamily::build(recipe.clone(), indices)?;
            let tags: Vec<String> = family.indices().iter().map(|i| i.to_string()).collect();
            let name = format!("{}-family-{}.json", recipe.name(), tags.join("-"));
            write_json(out, &name, &family.to_document())?;
            println!("{}", out.join(name).display());
            Ok(())
        }
        None => {
            let size = size.ok_or_else(|| {
                CliError::Input("either a size or --family is required".to_string())
            })?;
            let space = build_space(&recipe, size)?;
            let name = format!("{}.json", space.label());
            write_json(out, &name, &space.to_document())?;
            println!("{}", out.join(name).display());
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ProfileReport {
    space: String,
    r_max: u32,
    /// `values[R]` is the largest closed-ball population at radius R.
    values: Vec<u32>,
}

fn cmd_profile(out: &Path, space_path: &Path, r_max: Option<u32>) -> CliResult {
    let space = FiniteMetricSpace::from_json(&read_to_string(space_path)?)?;
    let r_max = r_max.unwrap_or_else(|| space.diameter());
    let profile = bounded_geometry_profile(&space, r_max);
    let report = ProfileReport {
        space: space.label().to_string(),
        r_max,
        values: profile.values().to_vec(),
    };
    let base = format!("profile-{}", stem(space_path));
    write_json(out, &format!("{base}.json"), &report)?;
    let mut csv = String::from("R,N_R\n");
    for (r, v) in report.values.iter().enumerate() {
        csv.push_str(&format!("{r},{v}\n"));
    }
    write_atomic(&out.join(format!("{base}.csv")), &csv)?;
    println!("{}", out.join(format!("{base}.json")).display());
    Ok(())
}

fn cmd_sparsify(out: &Path, instance_path: &Path, space_path: &Path, exact: bool) -> CliResult {
    let instance: InstanceDocument = serde_json::from_str(&read_to_string(instance_path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", instance_path.display())))?;
    let space = std::sync::Arc::new(FiniteMetricSpace::from_json(&read_to_string(space_path)?)?);
    if space.label() != instance.space {
        return Err(CliError::Input(format!(
            "instance references space '{}' but the space file holds '{}'",
            instance.space,
            space.label()
        )));
    }
    let mu = MassDistribution::new(space, instance.mass.clone())?;
    let result = if exact {
        sparsify_exact(&mu, instance.kappa, instance.s)?
    } else {
        sparsify_greedy(&mu, instance.kappa, instance.s)
    };
    let name = format!("{}-result.json", stem(instance_path));
    write_json(out, &name, &result.to_document())?;
    println!("{}", out.join(name).display());
    Ok(())
}

#[derive(Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
enum ExtractReport {
    Threshold {
        #[serde(flatten)]
        verdict: ExtractionVerdict,
        map: coarsekit::maps::MapDocument,
        achieved_masses: Vec<f64>,
        min_achieved: f64,
    },
    Support {
        eta: f64,
        map: coarsekit::maps::MapDocument,
    },
}

fn cmd_extract_map(
    out: &Path,
    unitary_path: &Path,
    spaces: &[PathBuf],
    c: f64,
    v0: usize,
    support: bool,
    eta: f64,
) -> CliResult {
    let store = load_store(spaces)?;
    let unitary = load_unitary(unitary_path, &store)?;
    let report = if support {
        let map = extract_map_support(&unitary, eta, v0)?;
        ExtractReport::Support { eta, map: map.to_document() }
    } else {
        let extraction = extract_map_threshold(&unitary, &ExtractionParams { c, v0_index: v0 })?;
        ExtractReport::Threshold {
            verdict: extraction.verdict,
            map: extraction.map.to_document(),
            achieved_masses: extraction.achieved,
            min_achieved: extraction.min_achieved,
        }
    };
    let name = format!("{}-map.json", stem(unitary_path));
    write_json(out, &name, &report)?;
    println!("{}", out.join(name).display());
    Ok(())
}

fn cmd_cover(
    out: &Path,
    unitary_path: &Path,
    map_path: &Path,
    spaces: &[PathBuf],
    floor: f64,
) -> CliResult {
    let store = load_store(spaces)?;
    let unitary = load_unitary(unitary_path, &store)?;
    let map_doc: coarsekit::maps::MapDocument = serde_json::from_str(&read_to_string(map_path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", map_path.display())))?;
    let map = PointMap::from_document(&map_doc, &store)?;
    let certificate = verify_covers_with_floor(&unitary, &map, floor)?;
    let name = format!("{}-cover.json", stem(unitary_path));
    write_json(out, &name, &certificate)?;
    println!("{}", out.join(name).display());
    Ok(())
}

#[derive(Serialize)]
struct ProbeReport {
    #[serde(flatten)]
    probe: coarsekit::band::OrthogonalSumProbe,
    /// Operator norms of the family members.
    norms: Vec<f64>,
}

fn cmd_probe(
    out: &Path,
    ops_path: &Path,
    spaces: &[PathBuf],
    a: Vec<usize>,
    b: Vec<usize>,
    norm_tol: f64,
) -> CliResult {
    let store = load_store(spaces)?;
    let docs: Vec<OperatorDocument> = serde_json::from_str(&read_to_string(ops_path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", ops_path.display())))?;
    if docs.is_empty() {
        return Err(CliError::Input("empty operator family".to_string()));
    }
    let family: Vec<BandOperator> = docs
        .iter()
        .map(|doc| BandOperator::from_document(doc, &store))
        .collect::<Result<_, _>>()?;
    let space = family[0].row_space().clone();
    let a = SubsetProjection::new(space.clone(), a)?;
    let b = SubsetProjection::new(space, b)?;
    let probe = orthogonal_sum_probe(&family, &a, &b)?;
    let norms = family
        .iter()
        .map(|t| t.operator_norm_with(DENSE_LIMIT, norm_tol))
        .collect::<Result<Vec<_>, _>>()?;
    let name = format!("{}-probe.json", stem(ops_path));
    write_json(out, &name, &ProbeReport { probe, norms })?;
    println!("{}", out.join(name).display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_roundtrip(
    out: &Path,
    family_path: Option<&Path>,
    preset: Option<&str>,
    indices: &[usize],
    block_diameter: u32,
    c: f64,
    emit_unitaries: bool,
    seed: u64,
) -> CliResult {
    let families: Vec<MapFamily> = match (family_path, preset) {
        (Some(path), None) => vec![MapFamily::from_json(&read_to_string(path)?)?],
        (None, Some("all")) => FamilyKind::ALL
            .par_iter()
            .map(|&kind| build_map_family(kind, indices))
            .collect::<Result<_, _>>()?,
        (None, Some(name)) => vec![build_map_family(FamilyKind::parse(name)?, indices)?],
        _ => unreachable!("clap group enforces exactly one input"),
    };
    let mode = ExtractionMode::Threshold(ExtractionParams { c, v0_index: 0 });
    for family in families {
        let class = CoarseMorphismClass::with_measured_radius(family.maps.clone())?;
        let report = roundtrip_report(&class, block_diameter, seed, mode)?;
        let base = format!("roundtrip-{}", family.name);
        write_json(out, &format!("{base}.json"), &report)?;
        let mut csv =
            String::from("index,covering_c,map_closeness,unitary_propagation,pair_propagation\n");
        for (pos, index) in report.indices.iter().enumerate() {
            csv.push_str(&format!(
                "{index},{},{},{},{}\n",
                report.covering_c[pos],
                report.map_half.per_index_bounds[pos],
                report.unitary_half.per_index_bounds[pos],
                report.pair_propagation[pos],
            ));
        }
        write_atomic(&out.join(format!("{base}.csv")), &csv)?;
        if emit_unitaries {
            let covered = functor_u(&class, block_diameter, seed)?;
            for (index, unitary) in covered.class.representatives() {
                let name = format!("{}-cover-{index}.json", family.name);
                write_json(out, &name, &unitary.to_document())?;
            }
        }
        println!("{}", out.join(format!("{base}.json")).display());
    }
    Ok(())
}

fn cmd_audit(out: &Path, unitary_path: &Path, spaces: &[PathBuf], delta: f64) -> CliResult {
    let store = load_store(spaces)?;
    let unitary = load_unitary(unitary_path, &store)?;
    let report = locality_audit(&unitary, delta, None)?;
    let base = format!("{}-audit", stem(unitary_path));
    write_json(out, &format!("{base}.json"), &report)?;
    let mut csv = String::from("R,S\n");
    for (r, s) in report.s_of_r.iter().enumerate() {
        csv.push_str(&format!("{r},{s}\n"));
    }
    write_atomic(&out.join(format!("{base}.csv")), &csv)?;
    println!("{}", out.join(format!("{base}.json")).display());
    Ok(())
}
