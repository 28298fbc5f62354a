//! Analyses behind the command line.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use incdiss::disk::{lpv_closed_loop, lti_closed_loop, DiskParameters, DiskScheduling};
use incdiss::embedding::embed_differential_form;
use incdiss::lmi::{
    check_incremental_qsr, check_passivity, compute_li2_gain, CheckOutcome, GainOptions,
    GainOutcome, InfeasibleInfo, SolveOptions,
};
use incdiss::num17::fmt17;
use incdiss::sim::{classify_longrun, simulate, validate_pairs, LongRun, PairSampler};
use incdiss::{
    BoxRegion, DifferentialMatrices, DiscreteTimeSystem, Error, Execution, FnSystem,
    GriddedEmbedding, Scheduling, StateScheduling, StorageCertificate,
};
use nalgebra::DVector;

use crate::config::{Analysis, AnalysisConfig, Disturbance, SystemName};

/// Largest dissipation violation accepted by `validate`.
const VALIDATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// Certified or completed.
    Completed,
    /// Infeasible, unbounded or a failed validation.
    NotCertified,
    /// The solver gave up.
    Unsolved,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Completed => 0,
            Status::NotCertified => 2,
            Status::Unsolved => 3,
        }
    }
}

struct Builtin {
    sys: Box<dyn DiscreteTimeSystem>,
    sched: Box<dyn Scheduling>,
    region: BoxRegion,
    grid: Vec<usize>,
}

fn builtin(name: SystemName) -> Result<Builtin> {
    let disk = |cl: incdiss::disk::DiskLoop| -> Result<Builtin> {
        let sched = DiskScheduling::for_loop(&cl)?;
        Ok(Builtin {
            region: sched.region(),
            grid: sched.uniform_grid(11),
            sys: Box::new(cl),
            sched: Box::new(sched),
        })
    };
    match name {
        SystemName::DiskLtiClosedloop => disk(lti_closed_loop(DiskParameters::default())?),
        SystemName::DiskLpvClosedloop => disk(lpv_closed_loop(DiskParameters::default())?),
        SystemName::ScalarLtiOracle => Ok(Builtin {
            sys: Box::new(FnSystem::linear(DifferentialMatrices::scalar(
                0.5, 1.0, 1.0, 0.0,
            ))),
            sched: Box::new(StateScheduling { n_x: 1, n_w: 1 }),
            region: BoxRegion::new(vec![(-20.0, 20.0)])?,
            grid: vec![1],
        }),
    }
}

/// `key: value` lines, printed and written to the summary file.
#[derive(Default)]
struct Summary {
    lines: Vec<(String, String)>,
}

impl Summary {
    fn add(&mut self, key: &str, value: impl ToString) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(out, "{k}: {v}");
        }
        out
    }
}

pub struct RunArgs<'a> {
    pub out_dir: &'a Path,
    pub seed: u64,
    pub quiet: bool,
}

pub fn run(cfg: &AnalysisConfig, args: &RunArgs) -> Result<Status> {
    let start = Instant::now();
    let b = builtin(cfg.system)?;
    std::fs::create_dir_all(args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let mut summary = Summary::default();
    summary.add("system", cfg.system.as_str());
    summary.add("analysis", format!("{:?}", cfg.analysis).to_lowercase());
    summary.add("seed", args.seed);
    let status = match cfg.analysis {
        Analysis::Li2 | Analysis::Qsr | Analysis::Passivity => {
            certify(cfg, args, &b, &mut summary)?
        }
        Analysis::Simulate => run_simulation(cfg, args, &b, &mut summary)?,
        Analysis::Validate => run_validation(cfg, args, &b, &mut summary)?,
    };
    summary.add("exit_code", status.exit_code());
    summary.add(
        "wall_time_s",
        format!("{:.3}", start.elapsed().as_secs_f64()),
    );
    let text = summary.render();
    let path = args.out_dir.join(&cfg.outputs.summary);
    std::fs::write(&path, &text).with_context(|| format!("cannot write {}", path.display()))?;
    if !args.quiet {
        print!("{text}");
    }
    Ok(status)
}

fn embedding(cfg: &AnalysisConfig, b: &Builtin) -> Result<GriddedEmbedding> {
    let region = cfg.region()?.unwrap_or_else(|| b.region.clone());
    let grid = cfg.grid.clone().unwrap_or_else(|| b.grid.clone());
    if region.dim() != b.sched.n_rho() || grid.len() != b.sched.n_rho() {
        bail!(
            "system {} schedules on {} coordinates, but the region has {} and the grid {}",
            cfg.system.as_str(),
            b.sched.n_rho(),
            region.dim(),
            grid.len()
        );
    }
    Ok(embed_differential_form(
        &*b.sys,
        &*b.sched,
        &region,
        &grid,
        Execution::default(),
    )?)
}

fn not_certified(summary: &mut Summary, verdict: String, info: &InfeasibleInfo) -> Status {
    summary.add("verdict", verdict);
    summary.add("best_margin", fmt17(info.best_margin));
    summary.add("margin_upper_bound", fmt17(info.margin_upper_bound));
    summary.add("infeasibility_certified", info.certified);
    Status::NotCertified
}

fn certify(
    cfg: &AnalysisConfig,
    args: &RunArgs,
    b: &Builtin,
    summary: &mut Summary,
) -> Result<Status> {
    let emb = embedding(cfg, b)?;
    let grid: Vec<String> = emb.points_per_dim.iter().map(usize::to_string).collect();
    summary.add("grid", grid.join("x"));
    summary.add("grid_points", emb.len());
    let solve = SolveOptions::with_tol(cfg.tolerances.feas_tol);
    let result = match cfg.analysis {
        Analysis::Li2 => {
            let opts = GainOptions {
                bisect_tol: cfg.tolerances.bisect_tol,
                gamma_cap: cfg.tolerances.gamma_cap,
                solve,
            };
            compute_li2_gain(&emb, &opts).map(|out| match out {
                GainOutcome::Bounded { certificate, .. } => CheckOutcome::Certified(certificate),
                GainOutcome::Unbounded { info, .. } => CheckOutcome::NotCertified(info),
            })
        }
        Analysis::Qsr => {
            let supply = cfg.supply()?.context("field `supply` is required")?;
            check_incremental_qsr(&emb, &supply, &solve)
        }
        _ => check_passivity(&emb, &solve),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(Error::Unsolved(msg)) => {
            summary.add("verdict", format!("unsolved: {msg}"));
            return Ok(Status::Unsolved);
        }
        Err(e) => return Err(e.into()),
    };
    match outcome {
        CheckOutcome::Certified(mut cert) => {
            cert.seed = Some(args.seed);
            let path = args.out_dir.join(&cfg.outputs.certificate);
            cert.save(&path)?;
            summary.add("verdict", "certified");
            if let Some(g) = cert.gamma {
                summary.add("gamma", fmt17(g));
            }
            summary.add("margin", fmt17(cert.margin));
            summary.add("certificate", path.display());
            Ok(Status::Completed)
        }
        CheckOutcome::NotCertified(info) => {
            let verdict = if cfg.analysis == Analysis::Li2 {
                format!(
                    "no certificate up to gamma_cap = {}",
                    fmt17(cfg.tolerances.gamma_cap)
                )
            } else {
                "no certificate found".to_string()
            };
            Ok(not_certified(summary, verdict, &info))
        }
    }
}

fn run_simulation(
    cfg: &AnalysisConfig,
    args: &RunArgs,
    b: &Builtin,
    summary: &mut Summary,
) -> Result<Status> {
    let n_x = b.sys.n_x();
    let x0 = match &cfg.initial_state {
        Some(v) if v.len() != n_x => {
            bail!("field `initial_state` needs {n_x} entries, got {}", v.len())
        }
        Some(v) => DVector::from_column_slice(v),
        None => DVector::zeros(n_x),
    };
    let w = Disturbance::parse(&cfg.disturbance)?.sequence(b.sys.n_w(), cfg.horizon);
    let traj = simulate(&*b.sys, &x0, &w)?;
    let path = args.out_dir.join(&cfg.outputs.trajectory);
    traj.save_csv(&path)?;
    summary.add("horizon", traj.horizon());
    if let Some(why) = &traj.truncated {
        summary.add("truncated", why);
    }
    let last = traj.states.last().expect("initial state is kept");
    let last: Vec<String> = last.iter().map(|v| fmt17(*v)).collect();
    summary.add("final_state", last.join(" "));
    let settle_k = cfg.settle_k.unwrap_or((cfg.horizon / 2).min(500));
    if traj.horizon() > settle_k {
        let class = classify_longrun(&traj, settle_k, 1e-6)?;
        let text = match class {
            LongRun::Converged => "converged".to_string(),
            LongRun::Diverged => "diverged".to_string(),
            LongRun::Oscillating { peak_to_peak } => {
                let p2p: Vec<String> = peak_to_peak.iter().map(|v| fmt17(*v)).collect();
                format!("oscillating (peak-to-peak {})", p2p.join(" "))
            }
        };
        summary.add("settle_k", settle_k);
        summary.add("long_run", text);
    }
    summary.add("trajectory", path.display());
    Ok(Status::Completed)
}

fn run_validation(
    cfg: &AnalysisConfig,
    args: &RunArgs,
    b: &Builtin,
    summary: &mut Summary,
) -> Result<Status> {
    let path = cfg
        .certificate
        .as_ref()
        .context("field `certificate` is required")?;
    let cert = StorageCertificate::load(path)
        .with_context(|| format!("cannot load certificate {}", path.display()))?;
    let sys = &*b.sys;
    if cert.n_x() != sys.n_x() || cert.supply.n_w() != sys.n_w() || cert.supply.n_z() != sys.n_z() {
        bail!(
            "certificate (n_x {}, n_w {}, n_z {}) does not match system {} (n_x {}, n_w {}, n_z {})",
            cert.n_x(),
            cert.supply.n_w(),
            cert.supply.n_z(),
            cfg.system.as_str(),
            sys.n_x(),
            sys.n_w(),
            sys.n_z()
        );
    }
    if cert.region.dim() != b.sched.n_rho() {
        bail!(
            "certificate region has {} coordinates, system {} schedules on {}",
            cert.region.dim(),
            cfg.system.as_str(),
            b.sched.n_rho()
        );
    }
    let sampler = PairSampler::new(cert.region.clone(), cfg.pair_horizon);
    let pairs = sampler.sample(sys, &*b.sched, cfg.pairs, args.seed, Execution::default())?;
    if pairs.len() < cfg.pairs {
        bail!(
            "only {} of {} in-region pairs could be sampled",
            pairs.len(),
            cfg.pairs
        );
    }
    let worst = validate_pairs(&pairs, &cert.p, &cert.supply, Execution::default())?;
    summary.add("pairs", pairs.len());
    summary.add("pair_horizon", cfg.pair_horizon);
    summary.add("max_violation", fmt17(worst));
    summary.add("tolerance", fmt17(VALIDATION_TOL));
    if worst <= VALIDATION_TOL {
        summary.add("verdict", "consistent");
        Ok(Status::Completed)
    } else {
        summary.add("verdict", "violation found");
        Ok(Status::NotCertified)
    }
}
