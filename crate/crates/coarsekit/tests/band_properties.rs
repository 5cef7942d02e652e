//! Property tests for the block-operator algebra: exact propagation
//! inequalities on seeded random operators, and agreement of the sparse
//! arithmetic with a dense-matrix oracle on small spaces.

use coarsekit::band::{compress, orthogonal_sum_probe, random_band, RankOneUnit, SubsetProjection};
use coarsekit::space::{build_space, GeneratorRecipe};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn propagation_inequalities_hold_exactly(
        seed_t in 0u64..5000,
        seed_s in 5000u64..10000,
        prop_t in 0u32..5,
        prop_s in 0u32..5,
        k in 1usize..3,
        side in 3usize..6,
    ) {
        let space = build_space(&GeneratorRecipe::Grid { dim: 2 }, side).unwrap();
        let t = random_band(&space, prop_t, 0.4, k, seed_t);
        let s = random_band(&space, prop_s, 0.4, k, seed_s);
        let pt = t.propagation().unwrap();
        let ps = s.propagation().unwrap();
        prop_assert!(t.add(&s).unwrap().propagation().unwrap() <= pt.max(ps));
        prop_assert!(t.mul(&s).unwrap().propagation().unwrap() <= pt + ps);
        prop_assert_eq!(t.adjoint().propagation().unwrap(), pt);
    }

    #[test]
    fn sparse_algebra_matches_dense_oracle(
        seed in 0u64..3000,
        prop_bound in 0u32..6,
        k in 1usize..3,
    ) {
        // spaces up to 64 points
        let space = build_space(&GeneratorRecipe::Grid { dim: 2 }, 8).unwrap();
        let t = random_band(&space, prop_bound, 0.1, k, seed);
        let s = random_band(&space, prop_bound, 0.1, k, seed + 17);

        let dt = t.to_dense();
        let ds = s.to_dense();
        prop_assert!(max_abs(&(t.add(&s).unwrap().to_dense() - (&dt + &ds))) <= 1e-12);
        prop_assert!(max_abs(&(t.mul(&s).unwrap().to_dense() - (&dt * &ds))) <= 1e-12);
        prop_assert!(max_abs(&(t.adjoint().to_dense() - dt.adjoint())) <= 1e-12);
    }

    #[test]
    fn compression_vanishes_beyond_propagation(
        seed in 0u64..2000,
        prop_bound in 0u32..3,
        split in 1usize..15,
    ) {
        let space = build_space(&GeneratorRecipe::Grid { dim: 2 }, 4).unwrap();
        let t = random_band(&space, prop_bound, 0.6, 1, seed);
        let prop = t.propagation().unwrap();
        let a_members: Vec<usize> = (0..split).collect();
        // points strictly farther than prop from every point of A
        let b_members: Vec<usize> = (0..space.n())
            .filter(|&y| a_members.iter().all(|&x| space.dist(x, y) > prop))
            .collect();
        prop_assume!(!b_members.is_empty());
        let a = SubsetProjection::new(space.clone(), a_members).unwrap();
        let b = SubsetProjection::new(space.clone(), b_members).unwrap();
        let c = compress(&a, &t, &b).unwrap();
        prop_assert!(c.is_zero());
    }
}

#[test]
fn random_orthogonal_unit_family_compresses_to_zero() {
    // twenty rank-one units with pairwise disjoint row and column points
    let space = build_space(&GeneratorRecipe::Grid { dim: 2 }, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut available: Vec<usize> = (0..space.n()).collect();
    let mut family = Vec::new();
    for _ in 0..20 {
        let xi = rng.gen_range(0..available.len());
        let x = available.swap_remove(xi);
        let yi = rng.gen_range(0..available.len());
        let y = available.swap_remove(yi);
        family.push(RankOneUnit::scalar(x, y).to_operator(space.clone()).unwrap());
    }
    let s_star = family.iter().map(|t| t.propagation().unwrap()).max().unwrap();

    // pick A and B with d(A, B) = s_star + 1
    let mut chosen = None;
    'search: for x in 0..space.n() {
        for y in 0..space.n() {
            if space.dist(x, y) == s_star + 1 {
                chosen = Some((x, y));
                break 'search;
            }
        }
    }
    let (xa, yb) = chosen.expect("grid is wide enough");
    let a = SubsetProjection::new(space.clone(), vec![xa]).unwrap();
    let b = SubsetProjection::new(space.clone(), vec![yb]).unwrap();
    let probe = orthogonal_sum_probe(&family, &a, &b).unwrap();
    assert!(probe.applicable);
    assert!(probe.all_compressions_zero);

    // dense oracle: the compressed entries really are zero
    for t in &family {
        let dense = t.to_dense();
        assert_eq!(dense[(xa, yb)], Complex64::new(0.0, 0.0));
    }
}

#[test]
fn compression_norm_monotone_on_seeded_corpus() {
    let space = build_space(&GeneratorRecipe::Grid { dim: 2 }, 5).unwrap();
    for seed in 0..10u64 {
        let t = random_band(&space, 3, 0.5, 1, seed);
        let norm = t.operator_norm().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        for _ in 0..4 {
            let a_members: Vec<usize> =
                (0..space.n()).filter(|_| rng.gen::<f64>() < 0.5).collect();
            let b_members: Vec<usize> =
                (0..space.n()).filter(|_| rng.gen::<f64>() < 0.5).collect();
            let a = SubsetProjection::new(space.clone(), a_members).unwrap();
            let b = SubsetProjection::new(space.clone(), b_members).unwrap();
            let c = compress(&a, &t, &b).unwrap();
            assert!(c.operator_norm().unwrap() <= norm + 1e-10);
        }
    }
}
