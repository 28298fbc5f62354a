//! Trajectory-level checks of certificates and the differential form.

mod common;

use common::{random_stable, scalar_oracle};
use incdiss::disk::*;
use incdiss::lmi::{compute_li2_gain, GainOptions, GainOutcome};
use incdiss::sim::*;
use incdiss::{
    BoxRegion, Execution, FnSystem, GriddedEmbedding, StateScheduling, StorageCertificate,
    SupplyQsr,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn certificate(mats: incdiss::DifferentialMatrices) -> StorageCertificate {
    match compute_li2_gain(&GriddedEmbedding::constant(mats), &GainOptions::default()).unwrap() {
        GainOutcome::Bounded { certificate, .. } => certificate,
        other => panic!("expected a bounded gain, got {other:?}"),
    }
}

fn disk_pairs(n: usize, seed: u64) -> Vec<TrajectoryPair> {
    let cl = lti_closed_loop(DiskParameters::default()).unwrap();
    let sched = DiskScheduling::for_loop(&cl).unwrap();
    PairSampler::new(sched.region(), 60)
        .sample(&cl, &sched, n, seed, Execution::Parallel)
        .unwrap()
}

#[test]
fn telescoped_sum_matches_storage_change() {
    let p =
        nalgebra::DMatrix::from_row_slice(3, 3, &[4.0, 0.5, 0.1, 0.5, 0.2, 0.0, 0.1, 0.0, 0.01]);
    let supply = SupplyQsr::l2_gain(0.3, 1, 1);
    for pair in disk_pairs(10, 3) {
        let terms = dissipation_terms(&pair, &p, &supply).unwrap();
        let n = pair.first.horizon();
        let mut supplied = KahanSum::default();
        for k in 0..n {
            supplied.add(supply.evaluate(
                &(&pair.first.inputs[k] - &pair.second.inputs[k]),
                &(&pair.first.outputs[k] - &pair.second.outputs[k]),
            ));
        }
        let mut summed = KahanSum::default();
        terms.iter().for_each(|t| summed.add(*t));
        let v_end = incremental_storage(&p, &pair.first.states[n], &pair.second.states[n]);
        let v_start = incremental_storage(&p, &pair.first.states[0], &pair.second.states[0]);
        let scale = 1.0 + v_end.abs() + v_start.abs() + supplied.value().abs();
        assert!((summed.value() - (v_end - v_start - supplied.value())).abs() <= 1e-10 * scale);
    }
}

#[test]
fn lti_differential_matches_primal_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mats = random_stable(&mut rng, 3, 2, 2);
    let sys = FnSystem::linear(mats);
    let horizon = 80;
    let draw =
        |rng: &mut ChaCha8Rng, n: usize| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let w: Vec<_> = (0..horizon).map(|_| draw(&mut rng, 2)).collect();
    let wt: Vec<_> = (0..horizon).map(|_| draw(&mut rng, 2)).collect();
    let (x0, xt0) = (draw(&mut rng, 3), draw(&mut rng, 3));
    let a = simulate(&sys, &x0, &w).unwrap();
    let b = simulate(&sys, &xt0, &wt).unwrap();
    let dw: Vec<_> = wt.iter().zip(&w).map(|(p, q)| p - q).collect();
    let d = simulate_differential(&sys, &a, &(&xt0 - &x0), &dw).unwrap();
    for k in 0..=horizon {
        assert!((&b.states[k] - &a.states[k] - &d.dx[k]).amax() <= 1e-12);
    }
    for k in 0..horizon {
        assert!((&b.outputs[k] - &a.outputs[k] - &d.dz[k]).amax() <= 1e-12);
    }
}

#[test]
fn shrunken_certificate_is_caught() {
    let cert = certificate(scalar_oracle());
    let sys = FnSystem::linear(scalar_oracle());
    let sched = StateScheduling { n_x: 1, n_w: 1 };
    let pairs = PairSampler::new(BoxRegion::new(vec![(-20.0, 20.0)]).unwrap(), 50)
        .sample(&sys, &sched, 40, 9, Execution::Parallel)
        .unwrap();
    assert!(validate_pairs(&pairs, &cert.p, &cert.supply, Execution::Parallel).unwrap() <= 1e-6);
    let shrunk = &cert.p / 10.0;
    let (worst_pair, worst) = pairs
        .iter()
        .map(|pair| {
            let gap = (&pair.first.states[0] - &pair.second.states[0]).norm();
            (
                gap,
                validate_dissipation(pair, &shrunk, &cert.supply).unwrap(),
            )
        })
        .fold(
            (0.0, f64::NEG_INFINITY),
            |acc, v| if v.1 > acc.1 { v } else { acc },
        );
    assert!(worst > 0.0, "violation {worst} at initial gap {worst_pair}");
}

#[test]
fn shrunken_disk_certificate_is_caught() {
    let cl = lti_closed_loop(DiskParameters::default()).unwrap();
    let sched = DiskScheduling::for_loop(&cl).unwrap();
    let emb = incdiss::embedding::embed_differential_form(
        &cl,
        &sched,
        &sched.region(),
        &[3, 3, 3],
        Execution::Parallel,
    )
    .unwrap();
    let cert = match compute_li2_gain(&emb, &GainOptions::default()).unwrap() {
        GainOutcome::Bounded { certificate, .. } => certificate,
        other => panic!("{other:?}"),
    };
    let pairs = disk_pairs(30, 21);
    let worst =
        validate_pairs(&pairs, &(&cert.p / 10.0), &cert.supply, Execution::Parallel).unwrap();
    assert!(worst > 0.0, "violation {worst}");
}

#[test]
fn validation_is_independent_of_execution_mode() {
    let cert = certificate(scalar_oracle());
    let sys = FnSystem::linear(scalar_oracle());
    let sched = StateScheduling { n_x: 1, n_w: 1 };
    let sampler = PairSampler::new(BoxRegion::new(vec![(-20.0, 20.0)]).unwrap(), 30);
    let seq = sampler
        .sample(&sys, &sched, 20, 5, Execution::Sequential)
        .unwrap();
    let par = sampler
        .sample(&sys, &sched, 20, 5, Execution::Parallel)
        .unwrap();
    assert_eq!(seq, par);
    let vs = validate_pairs(&seq, &cert.p, &cert.supply, Execution::Sequential).unwrap();
    let vp = validate_pairs(&par, &cert.p, &cert.supply, Execution::Parallel).unwrap();
    assert_eq!(vs, vp);
}
