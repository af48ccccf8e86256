//! Directional comparisons between methods. Each asserts an ordering, never a
//! pinned ratio.

use rayon::prelude::*;

use commopt::compressors::{CompressorKind, CompressorSpec, EnsembleSpec};
use commopt::datasets::SynthClassification;
use commopt::efbv::{Efbv, EfbvConfig, LConvention, Mode, Regime};
use commopt::harness::{self, Algorithm, ExperimentConfig, ParamGrid, Prepared};
use commopt::linalg::norm_sq;
use commopt::problems::{self, Problem, ProblemKind, QuadraticClient, SmoothObjective};
use commopt::scafflix::{self, FlixInstance, GradMode, ScafflixConfig};
use commopt::sppm::{self, CostModel, LocalGdConfig, ProxSolverSpec, RunOptions, SppmConfig};

const EPS: f64 = 1e-6;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Diagonal quadratics with curvature from `mu` up to `mu * kappa`.
fn spread_quadratics(n: usize, kappa: f64) -> Problem {
    let clients = (0..n)
        .map(|i| {
            let top = kappa.powf(i as f64 / (n - 1) as f64);
            QuadraticClient {
                curvature: vec![1.0, top, 0.5 * (1.0 + top)],
                center: vec![i as f64 - 2.0, (i % 3) as f64, 1.0 - 0.5 * i as f64],
            }
        })
        .collect();
    Problem::quadratic(clients).unwrap()
}

fn median_comm_rounds(inst: &FlixInstance, cfg: &ScafflixConfig, seeds: u64) -> f64 {
    let rounds: Vec<f64> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let mut c = cfg.clone();
            c.seed = seed;
            let t = scafflix::run_scafflix(inst, c).unwrap();
            scafflix::comm_rounds_to(&t, EPS).expect("target not reached") as f64
        })
        .collect();
    median(rounds)
}

#[test]
fn individual_stepsizes_beat_uniform() {
    let p = spread_quadratics(6, 50.0);
    let inst = FlixInstance::build(&p, &[0.5; 6], 1e-12).unwrap();
    let individual = ScafflixConfig::individual(&p, 0.3, GradMode::Exact, 3000, 0);
    let uniform = ScafflixConfig {
        gamma_i: vec![1.0 / p.constants().l_max; 6],
        ..individual.clone()
    };
    let a = median_comm_rounds(&inst, &individual, 11);
    let b = median_comm_rounds(&inst, &uniform, 11);
    assert!(a < b, "individual {a} vs uniform {b}");
}

#[test]
fn scafflix_needs_fewer_communications_than_flix_gd() {
    let p = SynthClassification::new(10, 30, 5, 6).problem(ProblemKind::L2Logistic, 0.01).unwrap();
    let inst = FlixInstance::build(&p, &[0.3; 10], 1e-12).unwrap();
    let cfg = ScafflixConfig::individual(&p, 0.2, GradMode::Exact, 20_000, 0);
    let local = median_comm_rounds(&inst, &cfg, 11);
    let gd = scafflix::run_flix_gd(&inst, 1.0 / inst.lipschitz_bound(), 20_000).unwrap();
    let gd_rounds = scafflix::comm_rounds_to(&gd, EPS).expect("FLIX-GD did not reach the target") as f64;
    assert!(local < gd_rounds, "Scafflix {local} vs FLIX-GD {gd_rounds}");
}

#[test]
fn communication_grows_like_the_square_root_of_the_condition_number() {
    let mut counts = Vec::new();
    for kappa in [25.0, 100.0, 400.0] {
        let p = spread_quadratics(5, kappa);
        let inst = FlixInstance::build(&p, &[1.0; 5], 1e-12).unwrap();
        let cfg = ScafflixConfig::individual(&p, 1.0 / p.constants().kappa_max.sqrt(), GradMode::Exact, 50_000, 0);
        counts.push(median_comm_rounds(&inst, &cfg, 11));
    }
    for w in counts.windows(2) {
        assert!(w[1] / w[0] <= 2.5, "{counts:?}");
    }
}

#[test]
fn nonconvex_efbv_respects_the_stationarity_bound() {
    let p = SynthClassification::new(8, 20, 6, 2).problem(ProblemKind::NonconvexLogistic, 0.1).unwrap();
    let ens = EnsembleSpec::independent(CompressorSpec::new(CompressorKind::Comp { k: 1, kp: 3 }, 6).unwrap(), 8).unwrap();
    let rounds = 300;
    let runs: Vec<(f64, f64, f64, f64, f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = EfbvConfig::theory(&p, ens.clone(), Mode::Efbv, Regime::Nonconvex, LConvention::RootMean, rounds, seed).unwrap();
            let mut alg = Efbv::new(&p, cfg).unwrap();
            let (f0, g0, gamma, theta) = (alg.objective(), alg.control_error(), alg.config().gamma, alg.derived().theta_ncvx);
            let mut best_grad = f64::INFINITY;
            let mut lowest = f0;
            for _ in 0..rounds {
                best_grad = best_grad.min(alg.grad_norm_sq());
                alg.step().unwrap();
                lowest = lowest.min(alg.objective());
            }
            (best_grad, f0, g0, gamma, theta, lowest)
        })
        .collect();
    let f_inf = runs.iter().map(|r| r.5).fold(f64::INFINITY, f64::min);
    let (_, f0, g0, gamma, theta, _) = runs[0];
    let bound = 2.0 * (f0 - f_inf) / (gamma * rounds as f64) + g0 / (theta * rounds as f64);
    let mean = runs.iter().map(|r| r.0).sum::<f64>() / runs.len() as f64;
    assert!(mean <= bound, "{mean} > {bound}");
}

const HETEROGENEOUS: &str = r#"
algorithm = "sppm_as"
rounds = 800
seeds = [0, 1, 2]

[problem]
kind = "synthetic"
clients = 20
per_client = 200
dim = 10
groups = 10
feature_condition = 1000.0
sample_jitter = 0.05
data_seed = 1
mu = 0.001

[sppm]
gamma = 1000.0
sampling = { kind = "stratified", groups = true }
solver = { kind = "conjugate_gradient", K = 1, inner_tol = 0.0 }
cost = { c1 = 1.0, c2 = 0.0 }
"#;

#[test]
fn localgd_settles_in_a_wider_neighborhood_than_sppm_ss() {
    let cfg = ExperimentConfig::from_toml(HETEROGENEOUS).unwrap();
    let prep = Prepared::new(&cfg).unwrap();
    let scheme = prep.scheme(&cfg.sppm.as_ref().unwrap().sampling).unwrap();
    let rounds = 2000;
    let tail = |t: &commopt::trace::Trace| {
        let r = &t.records[t.records.len() - 100..];
        r.iter().map(|r| r.dist_sq.unwrap()).sum::<f64>() / r.len() as f64
    };
    let opts = RunOptions::new(rounds, 0);
    let sppm_cfg = SppmConfig {
        scheme: scheme.clone(),
        gamma: 1000.0,
        solver: ProxSolverSpec::iterative(sppm::ProxSolverKind::ConjugateGradient, 1, 0.0),
        options: opts.clone(),
        instrument: false,
    };
    let ss = tail(&sppm::run_sppm_as(&prep.problem, &sppm_cfg, &prep.x_star).unwrap());
    // every round of both methods costs 1 here, so equal rounds is equal cost;
    // a single local step is plain minibatch GD, which has no drift
    let local = [2usize, 4, 8]
        .into_par_iter()
        .flat_map(|steps| [0.25, 0.5, 1.0, 2.0].into_par_iter().map(move |lr| (steps, lr)))
        .filter_map(|(steps, lr)| {
            let c = LocalGdConfig {
                scheme: scheme.clone(),
                stepsize: lr,
                local_steps: steps,
                options: opts.clone(),
            };
            sppm::run_localgd(&prep.problem, &c, &prep.x_star).ok().map(|t| tail(&t))
        })
        .reduce(|| f64::INFINITY, f64::min);
    assert!(ss < local, "SPPM-SS {ss:e} vs best LocalGD {local:e}");
}

fn best_costs(cost: CostModel) -> (f64, f64) {
    let mut cfg = ExperimentConfig::from_toml(HETEROGENEOUS).unwrap();
    let x_star = Prepared::new(&cfg).unwrap().x_star;
    cfg.target = Some(1e-3 * norm_sq(&x_star));
    let sp = cfg.sppm.as_mut().unwrap();
    sp.cost = cost;
    let sppm_best = harness::sweep(&cfg, &"K=1,2,3,4,6,8".parse::<ParamGrid>().unwrap())
        .unwrap()
        .best_by_cost()
        .unwrap()
        .total_cost
        .mean;
    cfg.algorithm = Algorithm::Localgd;
    let mut local_best = f64::INFINITY;
    for steps in [1.0, 2.0] {
        let c = harness::with_param(&cfg, "local_steps", steps).unwrap();
        let table = harness::sweep(&c, &"stepsize=6,8,10,12".parse::<ParamGrid>().unwrap()).unwrap();
        if let Some(r) = table.best_by_cost() {
            local_best = local_best.min(r.total_cost.mean);
        }
    }
    (sppm_best, local_best)
}

#[test]
fn hierarchical_costs_widen_the_savings() {
    let (s_std, l_std) = best_costs(CostModel::standard());
    let (s_hier, l_hier) = best_costs(CostModel::hierarchical());
    let saving_std = 1.0 - s_std / l_std;
    let saving_hier = 1.0 - s_hier / l_hier;
    assert!(saving_std > 0.0, "no saving under the standard model");
    assert!(saving_hier > saving_std, "hierarchical {saving_hier} vs standard {saving_std}");
}

#[test]
fn loose_local_tolerance_is_cheaper() {
    let p = SynthClassification::new(3, 40, 6, 9).problem(ProblemKind::L2Logistic, 0.01).unwrap();
    let loose = problems::local_minimizer(&p, 0, 1e-1).unwrap().iterations;
    let tight = problems::local_minimizer(&p, 0, 1e-6).unwrap().iterations;
    assert!(loose < tight, "{loose} vs {tight}");
}
