//! Property-based invariants.

use incdiss::disk::*;
use incdiss::embedding::generate_grid;
use incdiss::lmi::{compute_li2_gain, incremental_qsr_block, GainOptions, GainOutcome};
use incdiss::sim::{classify_longrun, incremental_storage, simulate, KahanSum, LongRun};
use incdiss::{BoxRegion, DifferentialMatrices, FnSystem, GriddedEmbedding, Scheduling, SupplyQsr};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn interval() -> impl Strategy<Value = (f64, f64)> {
    (-100.0..100.0f64, 1e-3..50.0f64).prop_map(|(lo, w)| (lo, lo + w))
}

proptest! {
    #[test]
    fn grid_has_product_size_and_stays_in_region(
        bounds in prop::collection::vec(interval(), 1..4),
        counts in prop::collection::vec(1usize..5, 4),
    ) {
        let region = BoxRegion::new(bounds.clone()).unwrap();
        let counts = &counts[..bounds.len()];
        let grid = generate_grid(&region, counts).unwrap();
        prop_assert_eq!(grid.len(), counts.iter().product::<usize>());
        prop_assert!(grid.iter().all(|p| region.contains(p)));
    }

    #[test]
    fn region_json_round_trips_bit_exact(bounds in prop::collection::vec(interval(), 1..4)) {
        let region = BoxRegion::new(bounds).unwrap();
        let back: BoxRegion = serde_json::from_str(&serde_json::to_string(&region).unwrap()).unwrap();
        prop_assert_eq!(back, region);
    }

    #[test]
    fn disk_lift_inverts_the_schedule(
        x1 in -3.1..3.1f64, x2 in -10.0..10.0f64, u in -10.0..10.0f64, w in -70.0..70.0f64,
    ) {
        let p = DiskParameters::default();
        for cl in [lti_closed_loop(p).unwrap(), lpv_closed_loop(p).unwrap()] {
            let sched = DiskScheduling::for_loop(&cl).unwrap();
            let rho: Vec<f64> = [x1, x2, u, w][..sched.n_rho()].to_vec();
            let (x, wv) = sched.lift(&rho);
            let back = sched.schedule(&x, &wv);
            for (a, b) in back.iter().zip(&rho) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn l2_supply_is_weighted_difference(g in 0.01..10.0f64, dw in -5.0..5.0f64, dz in -5.0..5.0f64) {
        let s = SupplyQsr::l2_gain(g, 1, 1);
        let v = s.evaluate(&DVector::from_element(1, dw), &DVector::from_element(1, dz));
        prop_assert!((v - (g * g * dw * dw - dz * dz)).abs() <= 1e-12 * (1.0 + g * g * dw * dw + dz * dz));
    }

    #[test]
    fn storage_is_symmetric_and_nonnegative(
        l in prop::collection::vec(-2.0..2.0f64, 4),
        x in prop::collection::vec(-5.0..5.0f64, 2),
        y in prop::collection::vec(-5.0..5.0f64, 2),
    ) {
        let l = DMatrix::from_row_slice(2, 2, &l);
        let p = &l * l.transpose();
        let (x, y) = (DVector::from_vec(x), DVector::from_vec(y));
        let v = incremental_storage(&p, &x, &y);
        prop_assert!(v >= -1e-12);
        prop_assert!((v - incremental_storage(&p, &y, &x)).abs() <= 1e-12 * (1.0 + v));
    }

    #[test]
    fn qsr_block_is_symmetric(
        a in prop::collection::vec(-1.0..1.0f64, 4),
        b in prop::collection::vec(-1.0..1.0f64, 2),
        c in prop::collection::vec(-1.0..1.0f64, 2),
        d in -1.0..1.0f64,
        g in 0.1..5.0f64,
    ) {
        let m = DifferentialMatrices::new(
            DMatrix::from_row_slice(2, 2, &a),
            DMatrix::from_row_slice(2, 1, &b),
            DMatrix::from_row_slice(1, 2, &c),
            DMatrix::from_element(1, 1, d),
        ).unwrap();
        let blk = incremental_qsr_block(&m, &SupplyQsr::l2_gain(g, 1, 1), &DMatrix::identity(2, 2));
        prop_assert_eq!(blk.transpose(), blk);
    }

    #[test]
    fn kahan_sum_of_integers_is_exact(v in prop::collection::vec(-1_000_000i64..1_000_000, 0..200)) {
        let mut s = KahanSum::default();
        v.iter().for_each(|x| s.add(*x as f64));
        prop_assert_eq!(s.value(), v.iter().sum::<i64>() as f64);
    }

    #[test]
    fn contracting_scalar_runs_converge(a in -0.9..0.9f64, x0 in -10.0..10.0f64) {
        let sys = FnSystem::linear(DifferentialMatrices::scalar(a, 1.0, 1.0, 0.0));
        let traj = simulate(&sys, &DVector::from_element(1, x0), &vec![DVector::zeros(1); 400]).unwrap();
        prop_assert_eq!(classify_longrun(&traj, 300, 1e-6).unwrap(), LongRun::Converged);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn scalar_gain_matches_closed_form(a in -0.9..0.9f64, b in 0.2..2.0f64, c in 0.2..2.0f64) {
        // For x(k+1) = a x + b w, z = c x the peak gain is |b c| / (1 - |a|).
        let exact = (b * c).abs() / (1.0 - a.abs());
        let emb = GriddedEmbedding::constant(DifferentialMatrices::scalar(a, b, c, 0.0));
        let opts = GainOptions { gamma_cap: 100.0, ..GainOptions::default() };
        match compute_li2_gain(&emb, &opts).unwrap() {
            GainOutcome::Bounded { gamma, .. } => {
                prop_assert!(gamma >= exact - 1e-6, "gamma {} below {}", gamma, exact);
                prop_assert!(gamma <= exact + 2.0 * opts.bisect_tol + 1e-4 * exact, "gamma {} above {}", gamma, exact);
            }
            other => prop_assert!(false, "{:?}", other),
        }
    }
}
