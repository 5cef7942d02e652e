//! Property tests for map certificates: the composition inequality for
//! expansion profiles, the pseudometric laws of the closeness constant,
//! and the transfer of expansion bounds between close maps.

use std::sync::Arc;

use coarsekit::maps::{closeness_constant, expansion_profile, PointMap};
use coarsekit::space::{build_space, FiniteMetricSpace, GeneratorRecipe};
use proptest::prelude::*;

fn arb_space() -> impl Strategy<Value = Arc<FiniteMetricSpace>> {
    prop_oneof![
        (2usize..12).prop_map(|n| build_space(&GeneratorRecipe::Path, n).unwrap()),
        (2usize..4).prop_map(|s| build_space(&GeneratorRecipe::Grid { dim: 2 }, s).unwrap()),
        (2usize..4).prop_map(|s| build_space(&GeneratorRecipe::GridDiag { dim: 2 }, s).unwrap()),
    ]
}

fn arb_map(
    domain: Arc<FiniteMetricSpace>,
    codomain: Arc<FiniteMetricSpace>,
) -> impl Strategy<Value = PointMap> {
    let n = domain.n();
    let m = codomain.n();
    proptest::collection::vec(0..m, n)
        .prop_map(move |table| PointMap::new(domain.clone(), codomain.clone(), table).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composition_inequality(
        (g, f) in (arb_space(), arb_space(), arb_space()).prop_flat_map(|(a, b, c)| {
            (arb_map(a, b.clone()), arb_map(b, c))
        })
    ) {
        let fg = f.compose(&g).unwrap();
        let rho_f = expansion_profile(&f);
        let rho_g = expansion_profile(&g);
        let rho_fg = expansion_profile(&fg);
        for r in 0..=g.domain().diameter() {
            prop_assert!(rho_fg.eval(r) <= rho_f.eval(rho_g.eval(r)));
        }
    }

    #[test]
    fn closeness_is_a_pseudometric(
        (f, g, h) in (arb_space(), arb_space()).prop_flat_map(|(a, b)| {
            (arb_map(a.clone(), b.clone()), arb_map(a.clone(), b.clone()), arb_map(a, b))
        })
    ) {
        let fg = closeness_constant(&f, &g).unwrap();
        let gf = closeness_constant(&g, &f).unwrap();
        prop_assert_eq!(fg, gf);
        prop_assert_eq!(closeness_constant(&f, &f).unwrap(), 0);
        let fh = closeness_constant(&f, &h).unwrap();
        let gh = closeness_constant(&g, &h).unwrap();
        prop_assert!(fh <= fg + gh);
    }

    #[test]
    fn close_maps_have_close_profiles(
        (f, g) in (arb_space(), arb_space()).prop_flat_map(|(a, b)| {
            (arb_map(a.clone(), b.clone()), arb_map(a, b))
        })
    ) {
        let c = closeness_constant(&f, &g).unwrap();
        let rho_f = expansion_profile(&f);
        let rho_g = expansion_profile(&g);
        for r in 0..=f.domain().diameter() {
            prop_assert!(rho_f.eval(r) <= rho_g.eval(r) + 2 * c);
        }
    }
}
