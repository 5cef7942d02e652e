//! Independent feasibility oracles for the decomposition solver.
//!
//! Two oracles of increasing bluntness: a literal enumerator over every
//! subset and every set partition of it (tiny spaces only), and a
//! subset scan that unions points within the separation bound and checks
//! component diameters. The solver must agree with both.

use std::sync::Arc;

use coarsekit::space::{build_space, FiniteMetricSpace, GeneratorRecipe, GroupPreset, SpaceFamily};
use coarsekit::sparsify::{
    sparsify_exact, sparsify_greedy, validate_decomposition, vector_mass, MassDistribution,
    SparsifyVerdict,
};
use nalgebra::DVector;

/// Every set partition of `points`, visited through a callback. Standard
/// recursion: each element joins an existing block or opens a new one.
fn for_each_partition(points: &[usize], f: &mut dyn FnMut(&[Vec<usize>]) -> bool) -> bool {
    fn recurse(
        rest: &[usize],
        blocks: &mut Vec<Vec<usize>>,
        f: &mut dyn FnMut(&[Vec<usize>]) -> bool,
    ) -> bool {
        let Some((&first, tail)) = rest.split_first() else {
            return f(blocks);
        };
        for i in 0..blocks.len() {
            blocks[i].push(first);
            if recurse(tail, blocks, f) {
                blocks[i].pop();
                return true;
            }
            blocks[i].pop();
        }
        blocks.push(vec![first]);
        if recurse(tail, blocks, f) {
            blocks.pop();
            return true;
        }
        blocks.pop();
        false
    }
    recurse(points, &mut Vec::new(), f)
}

/// Pairwise validity of a partition: points sharing a block must be within
/// `d`, points in different blocks must be farther than `s`.
fn partition_valid(space: &FiniteMetricSpace, blocks: &[Vec<usize>], s: u32, d: u32) -> bool {
    for (bi, block) in blocks.iter().enumerate() {
        for (pi, &p) in block.iter().enumerate() {
            for &q in &block[pi + 1..] {
                if space.dist(p, q) > d {
                    return false;
                }
            }
            for other in &blocks[bi + 1..] {
                for &q in other {
                    if space.dist(p, q) <= s {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Oracle 1 (n <= 7): enumerate every subset and every partition of it.
fn feasible_by_partition_enumeration(
    space: &FiniteMetricSpace,
    mass: &[f64],
    kappa: f64,
    s: u32,
    d: u32,
) -> bool {
    let n = space.n();
    assert!(n <= 7, "partition enumeration is for tiny spaces");
    for bits in 0u32..(1 << n) {
        let omega: Vec<usize> = (0..n).filter(|&p| bits >> p & 1 == 1).collect();
        let total: f64 = omega.iter().map(|&p| mass[p]).sum();
        if total + 1e-9 < kappa {
            continue;
        }
        if for_each_partition(&omega, &mut |blocks| partition_valid(space, blocks, s, d)) {
            return true;
        }
    }
    false
}

/// Oracle 2 (n <= 14): subsets with a union-find over pairs within `s`,
/// checking every class diameter.
fn feasible_by_component_scan(
    space: &FiniteMetricSpace,
    mass: &[f64],
    kappa: f64,
    s: u32,
    d: u32,
) -> bool {
    let n = space.n();
    for bits in 0u32..(1 << n) {
        let omega: Vec<usize> = (0..n).filter(|&p| bits >> p & 1 == 1).collect();
        let total: f64 = omega.iter().map(|&p| mass[p]).sum();
        if total + 1e-9 < kappa {
            continue;
        }
        let m = omega.len();
        let mut parent: Vec<usize> = (0..m).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            if parent[i] != i {
                let root = find(parent, parent[i]);
                parent[i] = root;
            }
            parent[i]
        }
        for i in 0..m {
            for j in (i + 1)..m {
                if space.dist(omega[i], omega[j]) <= s {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
        let mut ok = true;
        'outer: for i in 0..m {
            for j in (i + 1)..m {
                if find(&mut parent, i) == find(&mut parent, j)
                    && space.dist(omega[i], omega[j]) > d
                {
                    ok = false;
                    break 'outer;
                }
            }
        }
        if ok {
            return true;
        }
    }
    false
}

fn minimal_d(
    space: &FiniteMetricSpace,
    mass: &[f64],
    kappa: f64,
    s: u32,
    oracle: &dyn Fn(&FiniteMetricSpace, &[f64], f64, u32, u32) -> bool,
) -> Option<u32> {
    (0..=space.diameter()).find(|&d| oracle(space, mass, kappa, s, d))
}

fn tiny_spaces() -> Vec<Arc<FiniteMetricSpace>> {
    vec![
        build_space(&GeneratorRecipe::Path, 6).unwrap(),
        build_space(&GeneratorRecipe::Path, 7).unwrap(),
        build_space(&GeneratorRecipe::Grid { dim: 2 }, 2).unwrap(),
        build_space(&GeneratorRecipe::Tree { branching: 2 }, 3).unwrap(),
        build_space(&GeneratorRecipe::CayleyBall { preset: GroupPreset::ZPower { rank: 1 } }, 3)
            .unwrap(),
    ]
}

#[test]
fn oracles_agree_with_each_other_and_the_solver_on_tiny_spaces() {
    for space in tiny_spaces() {
        let mu = MassDistribution::uniform(space.clone());
        for &kappa in &[0.3, 0.5, 0.8, 1.0] {
            for s in 0..=3u32 {
                let by_partitions =
                    minimal_d(&space, mu.mass(), kappa, s, &feasible_by_partition_enumeration);
                let by_components =
                    minimal_d(&space, mu.mass(), kappa, s, &feasible_by_component_scan);
                assert_eq!(
                    by_partitions,
                    by_components,
                    "{} kappa={kappa} s={s}",
                    space.label()
                );
                let solved = sparsify_exact(&mu, kappa, s).unwrap();
                match by_partitions {
                    Some(d) => {
                        assert_eq!(solved.verdict, SparsifyVerdict::Feasible);
                        assert_eq!(solved.d_achieved, d, "{} kappa={kappa} s={s}", space.label());
                    }
                    None => assert_eq!(solved.verdict, SparsifyVerdict::Infeasible),
                }
            }
        }
    }
}

fn corpus_spaces_up_to_12() -> Vec<Arc<FiniteMetricSpace>> {
    let mut spaces = vec![
        build_space(&GeneratorRecipe::Path, 10).unwrap(),
        build_space(&GeneratorRecipe::Path, 12).unwrap(),
        build_space(&GeneratorRecipe::Grid { dim: 2 }, 3).unwrap(),
        build_space(&GeneratorRecipe::GridDiag { dim: 2 }, 3).unwrap(),
        build_space(&GeneratorRecipe::Tree { branching: 2 }, 3).unwrap(),
        build_space(&GeneratorRecipe::CayleyBall { preset: GroupPreset::ZPower { rank: 1 } }, 5)
            .unwrap(),
        build_space(&GeneratorRecipe::CayleyBall { preset: GroupPreset::FreeRank2 }, 1).unwrap(),
        build_space(&GeneratorRecipe::CayleyBall { preset: GroupPreset::Heisenberg }, 1).unwrap(),
    ];
    let grid_family = SpaceFamily::build(GeneratorRecipe::Grid { dim: 2 }, &[12]).unwrap();
    spaces.push(grid_family.space(12).unwrap().clone());
    spaces
}

fn corpus_masses(space: &Arc<FiniteMetricSpace>) -> Vec<MassDistribution> {
    let mut masses = vec![MassDistribution::uniform(space.clone())];
    // vector-derived measures from seeded unitary columns
    for seed in [1u64, 2] {
        let u = coarsekit::rigidity::seeded_unitary(space.n(), seed);
        let xi = DVector::from(u.column(0).into_owned());
        masses.push(vector_mass(space, 1, &xi).unwrap());
    }
    masses
}

#[test]
fn solver_matches_component_oracle_on_corpus_instances() {
    let mut instance_count = 0usize;
    for space in corpus_spaces_up_to_12() {
        assert!(space.n() <= 12);
        for mu in corpus_masses(&space) {
            for &(kappa, s) in &[(0.25, 1u32), (0.5, 2), (0.75, 1), (1.0, 0)] {
                instance_count += 1;
                let oracle_d =
                    minimal_d(&space, mu.mass(), kappa, s, &feasible_by_component_scan);
                let solved = sparsify_exact(&mu, kappa, s).unwrap();
                match oracle_d {
                    Some(d) => {
                        assert_eq!(solved.verdict, SparsifyVerdict::Feasible);
                        assert_eq!(solved.d_achieved, d, "{} kappa={kappa} s={s}", space.label());
                        // the reported decomposition re-validates
                        let recheck =
                            validate_decomposition(&mu, &solved.decomposition, kappa, s);
                        assert_eq!(recheck.verdict, SparsifyVerdict::Feasible);
                    }
                    None => assert_eq!(solved.verdict, SparsifyVerdict::Infeasible),
                }
            }
        }
    }
    assert!(instance_count >= 50, "only {instance_count} corpus instances");
}

#[test]
fn greedy_never_beats_exact_and_both_validate() {
    for space in corpus_spaces_up_to_12() {
        let mu = MassDistribution::uniform(space.clone());
        for &(kappa, s) in &[(0.3, 1u32), (0.5, 2), (0.9, 1)] {
            let exact = sparsify_exact(&mu, kappa, s).unwrap();
            let greedy = sparsify_greedy(&mu, kappa, s);
            if exact.verdict == SparsifyVerdict::Feasible
                && greedy.verdict == SparsifyVerdict::Feasible
            {
                assert!(
                    exact.d_achieved <= greedy.d_achieved,
                    "{} kappa={kappa} s={s}: exact {} > greedy {}",
                    space.label(),
                    exact.d_achieved,
                    greedy.d_achieved
                );
            }
            // greedy infeasible implies exact infeasible is NOT required;
            // but exact infeasible forces greedy infeasible
            if exact.verdict == SparsifyVerdict::Infeasible {
                assert_eq!(greedy.verdict, SparsifyVerdict::Infeasible);
            }
            for result in [&exact, &greedy] {
                if result.verdict == SparsifyVerdict::Feasible {
                    let recheck = validate_decomposition(&mu, &result.decomposition, kappa, s);
                    assert_eq!(recheck.verdict, SparsifyVerdict::Feasible);
                }
            }
        }
    }
}

#[test]
fn greedy_on_vector_mass_self_validates() {
    // twelve-point grid truncation with a unitary-column mass
    let family = SpaceFamily::build(GeneratorRecipe::Grid { dim: 2 }, &[12]).unwrap();
    let space = family.space(12).unwrap().clone();
    let u = coarsekit::rigidity::seeded_unitary(12, 6);
    let mu = vector_mass(&space, 1, &DVector::from(u.column(0).into_owned())).unwrap();
    let result = sparsify_greedy(&mu, 0.25, 3);
    assert_eq!(result.verdict, SparsifyVerdict::Feasible);
    let recheck = validate_decomposition(&mu, &result.decomposition, 0.25, 3);
    assert_eq!(recheck.verdict, SparsifyVerdict::Feasible);
}

#[test]
fn unitary_columns_give_unit_mass_to_high_precision() {
    let space = build_space(&GeneratorRecipe::Grid { dim: 2 }, 3).unwrap();
    for seed in 0..5u64 {
        let u = coarsekit::rigidity::seeded_unitary(space.n() * 2, seed);
        for col in [0usize, 3, 7] {
            let xi = DVector::from(u.column(col).into_owned());
            let mu = vector_mass(&space, 2, &xi).unwrap();
            let total: f64 = mu.mass().iter().sum();
            assert!((total - 1.0).abs() <= 1e-12, "seed {seed} col {col}: {total}");
        }
    }
}
