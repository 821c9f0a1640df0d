use coupling_core::augmented::z_gap_identity;
use coupling_core::grid::retained_weight;
use coupling_core::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coupled_increments_preserve_pathwise_energy(r in 0.0f64..=1.0, seed in 0u64..1000) {
        let grid = TimeGrid::unit(1.0, 8).unwrap();
        let bundle = sample_paths(&grid, 1, 4, seed, 0).unwrap();
        let coupled = build_coupled_path(&bundle, &CouplingFunction::constant(r)).unwrap();
        let keep = retained_weight(r);
        for p in 0..4 {
            for k in 0..8 {
                let want = keep * bundle.w().path(p).increment(k, 0) + r * bundle.w_prime().path(p).increment(k, 0);
                prop_assert!((coupled.path(p).increment(k, 0) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn indicator_leaves_outside_cells_untouched(a in 0usize..8, len in 1usize..8, seed in 0u64..1000) {
        let c = (a + len).min(8);
        let grid = TimeGrid::unit(1.0, 8).unwrap();
        let bundle = sample_paths(&grid, 1, 2, seed, 0).unwrap();
        let phi = CouplingFunction::indicator(a as f64 / 8.0, c as f64 / 8.0);
        let coupled = build_coupled_path(&bundle, &phi).unwrap();
        for k in (0..a).chain(c..8) {
            prop_assert_eq!(coupled.path(0).increment(k, 0), bundle.w().path(0).increment(k, 0));
        }
    }

    #[test]
    fn z_gap_identity_holds(z in prop::collection::vec(-5.0f64..5.0, 1..6), phi in 0.0f64..=1.0, shift in -2.0f64..2.0) {
        let zp: Vec<f64> = z.iter().map(|v| v * 0.7 + shift).collect();
        let (l, r) = z_gap_identity(&z, &zp, phi);
        prop_assert!((l - r).abs() <= 1e-12 * l.max(1.0));
    }

    #[test]
    fn subgrids_keep_the_step(lo in 0usize..64, width in 1usize..64) {
        let grid = TimeGrid::unit(2.0, 64).unwrap();
        let k1 = (lo + width).min(64);
        prop_assume!(lo < k1);
        let sub = grid.subgrid(lo, k1).unwrap();
        prop_assert!((sub.step() - grid.step()).abs() < 1e-15);
        prop_assert_eq!(sub.n_steps(), k1 - lo);
    }
}
