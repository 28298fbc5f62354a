//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::time::{Duration, Instant};

use common::{hinf_sweep, random_stable, scalar_oracle};
use incdiss::disk::*;
use incdiss::embedding::{embed_differential_form, StateScheduling};
use incdiss::linalg::{max_eigenvalue, min_eigenvalue};
use incdiss::lmi::*;
use incdiss::sim::*;
use incdiss::{
    BoxRegion, DifferentialMatrices, DiscreteTimeSystem, Execution, FnSystem, GainOutcome,
    GriddedEmbedding, Scheduling, StorageCertificate, SupplyQsr, Trajectory, Verdict,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GAMMA_WINDOW: (f64, f64) = (0.200, 0.242);
const WALL_LIMIT: Duration = Duration::from_secs(600);
const SETTLE_K: usize = 500;
const SETTLE_TOL: f64 = 1e-6;
const HORIZON: usize = 1000;

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, name: &str, outcome: Result<String, String>) {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
}

fn ensure(cond: bool, detail: String) -> Result<String, String> {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn disk_gain(cl: &DiskLoop, n: usize) -> Result<(GainOutcome, Duration), String> {
    let t0 = Instant::now();
    let sched = DiskScheduling::for_loop(cl).map_err(|e| e.to_string())?;
    let emb = embed_differential_form(
        cl,
        &sched,
        &sched.region(),
        &sched.uniform_grid(n),
        Execution::Parallel,
    )
    .map_err(|e| e.to_string())?;
    let out = compute_li2_gain(&emb, &GainOptions::default()).map_err(|e| e.to_string())?;
    Ok((out, t0.elapsed()))
}

fn gamma_reproduction(cl: &DiskLoop) -> (Result<String, String>, Option<StorageCertificate>) {
    match disk_gain(cl, 11) {
        Ok((GainOutcome::Bounded { gamma, certificate }, took)) => {
            let ok = (GAMMA_WINDOW.0..=GAMMA_WINDOW.1).contains(&gamma) && took <= WALL_LIMIT;
            let detail = format!(
                "gamma = {gamma:.4} (window [{}, {}]), margin {:.2e}, {:.1} s",
                GAMMA_WINDOW.0,
                GAMMA_WINDOW.1,
                certificate.margin,
                took.as_secs_f64()
            );
            (ensure(ok, detail), Some(certificate))
        }
        Ok((other, _)) => (Err(format!("expected a bounded gain, got {other:?}")), None),
        Err(e) => (Err(e), None),
    }
}

fn lpv_unbounded() -> Result<String, String> {
    let cl = lpv_closed_loop(DiskParameters::default()).map_err(|e| e.to_string())?;
    match disk_gain(&cl, 11)? {
        (GainOutcome::Unbounded { gamma_cap, info }, took) => Ok(format!(
            "no certificate up to gamma_cap = {gamma_cap} (margin bound {:.2e}, certified {}), {:.1} s",
            info.margin_upper_bound,
            info.certified,
            took.as_secs_f64()
        )),
        (GainOutcome::Bounded { gamma, .. }, _) => Err(format!("certified gamma = {gamma}")),
    }
}

fn longrun(
    cl: &DiskLoop,
    x0: &DVector<f64>,
    w: &[DVector<f64>],
) -> Result<(LongRun, Trajectory), String> {
    let traj = simulate(cl, x0, w).map_err(|e| e.to_string())?;
    let class = classify_longrun(&traj, SETTLE_K, SETTLE_TOL).map_err(|e| e.to_string())?;
    Ok((class, traj))
}

fn fig3() -> Result<String, String> {
    let p = DiskParameters::default();
    let lti = lti_closed_loop(p).map_err(|e| e.to_string())?;
    let lpv = lpv_closed_loop(p).map_err(|e| e.to_string())?;
    let x0 = dv(&[0.5, 0.0, 0.0]);
    let zero = regulation_inputs(HORIZON);
    let (lti_a, _) = longrun(&lti, &x0, &zero)?;
    let (lpv_a, _) = longrun(&lpv, &x0, &zero)?;
    let ramp = ramp_sat_inputs(-1.0, 70, HORIZON);
    let origin = DVector::zeros(3);
    let (lti_b, lti_traj) = longrun(&lti, &origin, &ramp)?;
    let (lpv_b, _) = longrun(&lpv, &origin, &ramp)?;
    let x1_end = lti_traj.states[HORIZON][0];
    let lpv_p2p = match &lpv_b {
        LongRun::Oscillating { peak_to_peak } => peak_to_peak[0],
        _ => 0.0,
    };
    let ok = lti_a == LongRun::Converged
        && lpv_a == LongRun::Converged
        && lti_b == LongRun::Converged
        && x1_end.abs() < 1e-3
        && lpv_p2p > 0.05;
    ensure(
        ok,
        format!(
            "w = 0: LTI {lti_a:?}, LPV {lpv_a:?}; ramp: LTI {lti_b:?} with |x1(1000)| = {:.1e}, LPV x1 peak-to-peak {lpv_p2p:.3} rad",
            x1_end.abs()
        ),
    )
}

fn bounded_gain(mats: &DifferentialMatrices) -> Result<(f64, StorageCertificate), String> {
    match compute_li2_gain(
        &GriddedEmbedding::constant(mats.clone()),
        &GainOptions::default(),
    ) {
        Ok(GainOutcome::Bounded { gamma, certificate }) => Ok((gamma, certificate)),
        other => Err(format!("expected a bounded gain, got {other:?}")),
    }
}

fn random_four_state() -> DifferentialMatrices {
    random_stable(&mut ChaCha8Rng::seed_from_u64(4), 4, 1, 1)
}

fn lti_oracle() -> Result<String, String> {
    let scalar = scalar_oracle();
    let (g1, _) = bounded_gain(&scalar)?;
    let o1 = hinf_sweep(&scalar, 20_000);
    let four = random_four_state();
    let (g4, _) = bounded_gain(&four)?;
    let o4 = hinf_sweep(&four, 20_000);
    let (e1, e4) = ((g1 - o1).abs() / o1, (g4 - o4).abs() / o4);
    ensure(
        e1 <= 0.01 && e4 <= 0.02,
        format!(
            "scalar {g1:.5} vs {o1:.5} ({:.3}%), 4-state {g4:.5} vs {o4:.5} ({:.3}%)",
            100.0 * e1,
            100.0 * e4
        ),
    )
}

struct SoundnessCase<'a> {
    name: &'a str,
    sys: &'a dyn DiscreteTimeSystem,
    sched: &'a dyn Scheduling,
    region: BoxRegion,
    cert: StorageCertificate,
    horizon: usize,
}

fn soundness_case(case: &SoundnessCase) -> Result<String, String> {
    let gamma = case.cert.gamma.ok_or("certificate without gain")?;
    let mut sampler = PairSampler::new(case.region.clone(), case.horizon);
    let free = sampler
        .sample(case.sys, case.sched, 100, 11, Execution::Parallel)
        .map_err(|e| e.to_string())?;
    sampler.shared_initial = true;
    let shared = sampler
        .sample(case.sys, case.sched, 100, 12, Execution::Parallel)
        .map_err(|e| e.to_string())?;
    if free.len() < 100 || shared.len() < 100 {
        return Err(format!(
            "{}: only {} + {} in-region pairs",
            case.name,
            free.len(),
            shared.len()
        ));
    }
    let all: Vec<_> = free.into_iter().chain(shared.iter().cloned()).collect();
    let violation = validate_pairs(&all, &case.cert.p, &case.cert.supply, Execution::Parallel)
        .map_err(|e| e.to_string())?;
    let lower = empirical_gain_lower_bound(&shared);
    let ok = violation <= 1e-6 && lower <= gamma + 1e-6;
    ensure(
        ok,
        format!(
            "{}: {} pairs, max violation {violation:.2e}, empirical gain {lower:.4} <= {gamma:.4}",
            case.name,
            all.len()
        ),
    )
}

fn soundness(disk_cert: Option<StorageCertificate>) -> Result<String, String> {
    let disk_cert = disk_cert.ok_or("no disk certificate was emitted")?;
    let cl = lti_closed_loop(DiskParameters::default()).map_err(|e| e.to_string())?;
    let disk_sched = DiskScheduling::for_loop(&cl).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut ok = true;
    let disk_case = SoundnessCase {
        name: "disk",
        sys: &cl,
        sched: &disk_sched,
        region: disk_sched.region(),
        cert: disk_cert,
        horizon: 100,
    };
    let mut cases = vec![disk_case];
    let lti_systems: Vec<(&str, FnSystem, StateScheduling, StorageCertificate)> = [
        ("scalar", scalar_oracle()),
        ("4-state", random_four_state()),
    ]
    .into_iter()
    .map(|(name, mats)| {
        let cert = bounded_gain(&mats).map(|(_, c)| c);
        let sched = StateScheduling {
            n_x: mats.n_x(),
            n_w: mats.n_w(),
        };
        cert.map(|c| (name, FnSystem::linear(mats), sched, c))
    })
    .collect::<Result<_, _>>()?;
    for (name, sys, sched, cert) in &lti_systems {
        cases.push(SoundnessCase {
            name,
            sys,
            sched,
            region: BoxRegion::new(vec![(-20.0, 20.0); sched.n_x]).unwrap(),
            cert: cert.clone(),
            horizon: 200,
        });
    }
    for case in &cases {
        match soundness_case(case) {
            Ok(l) => lines.push(l),
            Err(l) => {
                ok = false;
                lines.push(l)
            }
        }
    }
    ensure(ok, lines.join("; "))
}

fn schur_congruence() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let opts = SolveOptions::default();
    let mut worst_li2 = f64::NEG_INFINITY;
    for _ in 0..50 {
        let (n, nw, nz) = (
            rng.gen_range(1..=3),
            rng.gen_range(1..=2),
            rng.gen_range(1..=2),
        );
        let mats = random_stable(&mut rng, n, nw, nz);
        let gamma = 1.3 * hinf_sweep(&mats, 4000);
        let emb = GriddedEmbedding::constant(mats.clone());
        let problem = li2_problem(&emb, gamma, Execution::Sequential).map_err(|e| e.to_string())?;
        let sol = match InteriorPointBackend.solve(&problem, &li2_solve_options(&opts, gamma)) {
            Verdict::Feasible(sol) => sol,
            other => {
                return Err(format!(
                    "Schur instance at gamma {gamma} not feasible: {other:?}"
                ))
            }
        };
        let p_bar = problem.symmetric[0].extract(&sol.y) * gamma;
        let schur = min_eigenvalue(&li2_schur_block(&mats, gamma, &p_bar));
        let p = p_bar.clone().try_inverse().ok_or("singular Pbar")? * gamma;
        let qsr = max_eigenvalue(&incremental_qsr_block(
            &mats,
            &SupplyQsr::l2_gain(gamma, nw, nz),
            &p,
        ));
        if schur < -opts.tol {
            return Err(format!("Schur margin {schur:e} below tolerance"));
        }
        worst_li2 = worst_li2.max(qsr);
    }
    let mut worst_pass = f64::NEG_INFINITY;
    let mut count = 0;
    while count < 50 {
        let (n, m) = (rng.gen_range(1..=3), rng.gen_range(1..=2));
        let mut mats = random_stable(&mut rng, n, m, m);
        mats.d += DMatrix::<f64>::identity(m, m) * rng.gen_range(2.0..6.0);
        let emb = GriddedEmbedding::constant(mats.clone());
        let cert = match check_passivity(&emb, &opts).map_err(|e| e.to_string())? {
            CheckOutcome::Certified(c) => c,
            CheckOutcome::NotCertified(_) => continue,
        };
        let qsr = max_eigenvalue(&incremental_qsr_block(
            &mats,
            &SupplyQsr::passivity(m),
            &cert.p,
        ));
        worst_pass = worst_pass.max(qsr);
        count += 1;
    }
    ensure(
        worst_li2 <= 1e-6 && worst_pass <= 1e-6,
        format!(
            "50 l2 instances: worst (Q,S,R) block eigenvalue {worst_li2:.2e}; 50 passivity instances: worst {worst_pass:.2e}"
        ),
    )
}

/// Composite trapezoid weights on `n` nodes of `[0, 1]`.
fn trapezoid_weights(n: usize) -> Vec<f64> {
    let h = 1.0 / (n - 1) as f64;
    (0..n)
        .map(|i| if i == 0 || i == n - 1 { h / 2.0 } else { h })
        .collect()
}

fn norm_integral_inequality() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let nodes = 10_000;
    let weights = trapezoid_weights(nodes);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=4);
        let rank = rng.gen_range(1..=n);
        let l = DMatrix::from_fn(n, rank, |_, _| rng.gen_range(-1.0..1.0));
        let m = &l * l.transpose();
        let terms = rng.gen_range(1..=5);
        let coef: Vec<(f64, f64, f64)> = (0..n * terms)
            .map(|_| {
                (
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..8.0),
                )
            })
            .collect();
        let offset = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let phi = |t: f64| {
            DVector::from_fn(n, |i, _| {
                offset[i]
                    + coef[i * terms..(i + 1) * terms]
                        .iter()
                        .map(|&(a, b, f)| {
                            a * (std::f64::consts::TAU * f * t).cos()
                                + b * (std::f64::consts::TAU * f * t).sin()
                        })
                        .sum::<f64>()
            })
        };
        let mut mean = DVector::zeros(n);
        let mut energy = KahanSum::default();
        for (i, w) in weights.iter().enumerate() {
            let v = phi(i as f64 / (nodes - 1) as f64);
            energy.add(w * incdiss::linalg::quad(&m, &v));
            mean += &v * *w;
        }
        let slack = energy.value() - incdiss::linalg::quad(&m, &mean);
        worst = worst.min(slack);
    }
    ensure(
        worst >= -1e-8,
        format!("1000 trials, smallest slack {worst:.3e}"),
    )
}

fn taylor_mismatch(cl: &DiskLoop, eps: f64) -> Result<f64, String> {
    let horizon = 60;
    let x0 = dv(&[0.4, -0.5, 2.0]);
    let w: Vec<_> = (0..horizon)
        .map(|k| dv(&[0.8 * (0.15 * k as f64).sin()]))
        .collect();
    let dx0 = dv(&[1.0, -0.5, 0.8]);
    let dw: Vec<_> = (0..horizon)
        .map(|k| dv(&[(0.3 * k as f64).cos()]))
        .collect();
    let base = simulate(cl, &x0, &w).map_err(|e| e.to_string())?;
    let diff = simulate_differential(cl, &base, &dx0, &dw).map_err(|e| e.to_string())?;
    let wp: Vec<_> = w.iter().zip(&dw).map(|(a, b)| a + b * eps).collect();
    let pert = simulate(cl, &(&x0 + &dx0 * eps), &wp).map_err(|e| e.to_string())?;
    Ok((0..=horizon)
        .map(|k| (&pert.states[k] - &base.states[k] - &diff.dx[k] * eps).norm())
        .chain(
            (0..horizon).map(|k| (&pert.outputs[k] - &base.outputs[k] - &diff.dz[k] * eps).norm()),
        )
        .fold(0.0, f64::max))
}

fn taylor_check() -> Result<String, String> {
    let p = DiskParameters::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, cl) in [
        ("LTI", lti_closed_loop(p).map_err(|e| e.to_string())?),
        ("LPV", lpv_closed_loop(p).map_err(|e| e.to_string())?),
    ] {
        let mut ratios = Vec::new();
        for eps in [1e-2, 5e-3, 2.5e-3] {
            let r = taylor_mismatch(&cl, eps)? / taylor_mismatch(&cl, eps / 2.0)?;
            ok &= r >= 3.5;
            ratios.push(format!("{r:.3}"));
        }
        lines.push(format!("{name} ratios [{}]", ratios.join(", ")));
    }
    ensure(ok, lines.join("; "))
}

fn main() {
    let mut report = Report { failures: 0 };
    let lti = lti_closed_loop(DiskParameters::default()).expect("disk loop");
    let (outcome, disk_cert) = gamma_reproduction(&lti);
    report.record("disk LTI gain reproduction", outcome);
    report.record("disk LPV unboundedness", lpv_unbounded());
    report.record("long-run behaviour of both loops", fig3());
    report.record("LTI H-infinity oracle", lti_oracle());
    report.record("certificate soundness", soundness(disk_cert));
    report.record("Schur and congruence equivalence", schur_congruence());
    report.record("norm integral inequality", norm_integral_inequality());
    report.record("differential form Taylor check", taylor_check());
    if report.failures > 0 {
        println!("{} acceptance criteria failed", report.failures);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
