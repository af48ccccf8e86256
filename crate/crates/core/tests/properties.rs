use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use commopt::compressors::{estimate_params, optimal_scaling, scale_spec, scaled_error, CompressorKind, CompressorSpec, EnsembleSpec};
use commopt::datasets::{self, parse_libsvm_str, partition, PartitionScheme, SynthClassification};
use commopt::efbv::{Efbv, EfbvConfig, LConvention, Mode, Regime};
use commopt::linalg::{dist_sq, dot, norm, sub};
use commopt::problems::{Problem, ProblemKind, QuadraticClient};
use commopt::rng;
use commopt::scafflix::{self, FlixInstance, GradMode, Scafflix, ScafflixConfig, ScafflixState};
use commopt::sppm::{self, ClusteringMode, CohortObjective, SamplingScheme};

fn gauss(r: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| r.sample(StandardNormal)).collect()
}

fn libsvm_line() -> impl Strategy<Value = String> {
    (
        prop::bool::ANY,
        prop::collection::btree_map(1usize..=12, -1e3f64..1e3, 0..6),
    )
        .prop_map(|(pos, feats)| {
            let mut s = String::from(if pos { "+1" } else { "-1" });
            for (i, v) in feats {
                s.push_str(&format!(" {i}:{v}"));
            }
            s
        })
}

fn problems() -> Vec<Problem> {
    let sc = SynthClassification::new(4, 12, 5, 3);
    let (ds, part) = sc.generate().unwrap();
    vec![
        Problem::l2_logistic(&ds, &part, 0.1).unwrap(),
        Problem::nonconvex_logistic(&ds, &part, 0.1).unwrap(),
        Problem::quadratic(vec![
            QuadraticClient { curvature: vec![1.0, 3.0, 0.5, 2.0, 1.0], center: vec![1.0, -1.0, 0.0, 2.0, 0.5] },
            QuadraticClient::isotropic(2.0, vec![0.0, 1.0, 1.0, -1.0, 0.0]),
        ])
        .unwrap(),
    ]
}

fn centered_grads(r: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut g: Vec<Vec<f64>> = (0..n).map(|_| gauss(r, d)).collect();
    let m = commopt::linalg::mean(&g);
    for v in &mut g {
        for (a, b) in v.iter_mut().zip(&m) {
            *a -= b;
        }
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn libsvm_round_trip(lines in prop::collection::vec(libsvm_line(), 1..20)) {
        let text = lines.join("\n");
        let ds = parse_libsvm_str(&text).unwrap();
        let again = parse_libsvm_str(&ds.to_libsvm()).unwrap();
        prop_assert_eq!(ds.count(), again.count());
        prop_assert_eq!(ds.dim(), again.dim());
        prop_assert_eq!(ds.examples(), again.examples());
    }

    #[test]
    fn partitions_cover_disjointly(seed in 0u64..1000, n in 1usize..8, which in 0usize..4) {
        let (ds, _) = SynthClassification::new(4, 10, 3, seed).generate().unwrap();
        let scheme = [
            PartitionScheme::Iid,
            PartitionScheme::Labelwise,
            PartitionScheme::FeatureKmeans,
            PartitionScheme::DirichletQuantity { alpha: 0.5 },
        ][which];
        // some schemes reject degenerate splits of a small dataset
        let Ok(part) = partition(&ds, scheme, n, seed) else {
            prop_assume!(false);
            unreachable!()
        };
        let mut seen = vec![0u32; ds.count()];
        for list in &part.assignments {
            prop_assert!(!list.is_empty());
            for &e in list {
                seen[e] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c <= 1));
        // labelwise fixes each client's positive fraction, so leftovers stay unassigned
        if scheme != PartitionScheme::Labelwise {
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn optimal_scaling_beats_grid(eta in 0.0f64..0.99, v in 0.0f64..100.0) {
        let best = scaled_error(eta, v, optimal_scaling(eta, v));
        let grid = (1..=10_000).map(|j| scaled_error(eta, v, j as f64 / 10_000.0)).fold(f64::INFINITY, f64::min);
        prop_assert!(grid >= best - 1e-10, "grid {} below {}", grid, best);
    }

    #[test]
    fn stratified_beats_nice_for_the_best_clustering(b in 2usize..=3, seed in 0u64..200) {
        let n = b * b;
        let g = centered_grads(&mut rng::stream(seed, 0, 0), n, 2);
        let best = sppm::optimal_stratified_clustering(&g, b, ClusteringMode::BruteForce, 0).unwrap();
        let nice = sppm::sigma_star_as(&SamplingScheme::nice(b, n).unwrap(), &g).unwrap();
        prop_assert!(best.sigma_sq <= nice + 1e-12, "{} > {}", best.sigma_sq, nice);
    }

    #[test]
    fn nice_mu_is_nondecreasing(seed in 0u64..500, n in 2usize..=8) {
        let mut r = rng::stream(seed, 0, 0);
        let mu: Vec<f64> = (0..n).map(|_| r.random_range(0.01..5.0)).collect();
        let vals: Vec<f64> = (1..=n).map(|t| sppm::mu_as(&SamplingScheme::nice(t, n).unwrap(), &mu).unwrap()).collect();
        prop_assert!(vals.windows(2).all(|w| w[0] <= w[1] + 1e-12), "{:?}", vals);
    }
}

#[test]
fn finite_differences_match_gradients() {
    let mut r = rng::stream(7, 0, 0);
    for p in problems() {
        for i in 0..p.n() {
            for _ in 0..5 {
                let x = gauss(&mut r, p.dim());
                let g = p.grad(i, &x);
                let h = 1e-5;
                for k in 0..p.dim() {
                    let mut a = x.clone();
                    let mut b = x.clone();
                    a[k] += h;
                    b[k] -= h;
                    let fd = (p.loss(i, &a) - p.loss(i, &b)) / (2.0 * h);
                    assert!((fd - g[k]).abs() <= 1e-4 * g[k].abs().max(1e-2), "{:?} client {i} coord {k}: {fd} vs {}", p.kind(), g[k]);
                }
            }
        }
    }
}

#[test]
fn convexity_and_smoothness_witnesses() {
    let mut r = rng::stream(8, 0, 0);
    for p in problems() {
        let c = p.constants().clone();
        for i in 0..p.n() {
            for _ in 0..50 {
                let x = gauss(&mut r, p.dim());
                let y = gauss(&mut r, p.dim());
                let gy = p.grad(i, &y);
                let gx = p.grad(i, &x);
                assert!(norm(&sub(&gx, &gy)) <= c.l_i[i] * norm(&sub(&x, &y)) * (1.0 + 1e-12), "{:?} smoothness", p.kind());
                if p.kind().is_convex() {
                    let lower = p.loss(i, &y) + dot(&gy, &sub(&x, &y)) + 0.5 * c.mu_i[i] * dist_sq(&x, &y);
                    assert!(p.loss(i, &x) >= lower - 1e-10, "{:?} strong convexity", p.kind());
                }
            }
        }
    }
}

#[test]
fn scaled_compressor_certificate_survives_monte_carlo() {
    for (kind, d) in [(CompressorKind::RandK { k: 2 }, 6), (CompressorKind::Comp { k: 1, kp: 3 }, 5), (CompressorKind::TopK { k: 2 }, 5)] {
        let spec = CompressorSpec::new(kind, d).unwrap();
        let lambda = optimal_scaling(spec.eta(), spec.omega());
        let scaled = scale_spec(&spec, lambda).unwrap();
        let est = estimate_params(&scaled, 4000, &mut rng::server_stream(3, 0)).unwrap();
        assert!(est.violations.is_empty(), "{}: {} violations", scaled.kind, est.violations.len());
        assert!(est.eta_hat <= scaled.eta() + est.slack && est.omega_hat <= scaled.omega() + est.slack);
    }
}

#[test]
fn prox_is_contractive_toward_the_optimum() {
    let mut r = rng::stream(9, 0, 0);
    for p in problems().into_iter().filter(|p| p.kind().is_convex()) {
        let x_star = commopt::problems::reference_solution(&p, &Default::default(), 1e-12).unwrap();
        let scheme = SamplingScheme::nice(1, p.n()).unwrap();
        for (_, cohort) in scheme.enumerate().unwrap() {
            let obj = CohortObjective::new(&p, &cohort).unwrap();
            for gamma in [0.1, 1.0, 10.0] {
                // prox_{gamma f_C}(x* + gamma grad f_C(x*)) = x*
                let shift: Vec<f64> = x_star.iter().zip(obj.gradient(&x_star)).map(|(a, g)| a + gamma * g).collect();
                let fixed = sppm::exact_prox(&obj, gamma, &shift).unwrap();
                assert!(dist_sq(&fixed, &x_star) < 1e-14);
                for _ in 0..5 {
                    let x = gauss(&mut r, p.dim());
                    let px = sppm::exact_prox(&obj, gamma, &x).unwrap();
                    let lhs = dist_sq(&px, &fixed).sqrt();
                    let rhs = dist_sq(&x, &shift).sqrt() / (1.0 + gamma * obj.mu());
                    assert!(lhs <= rhs * (1.0 + 1e-9) + 1e-10, "{lhs} > {rhs}");
                }
            }
        }
    }
}

#[test]
fn sampled_cohort_objectives_are_unbiased() {
    let mu = [1.0, 2.0, 0.5, 3.0, 1.5, 2.5, 1.0, 0.7];
    let centers: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, 1.0 - i as f64]).collect();
    let p = datasets::synth_quadratic(&mu, &centers).unwrap();
    let n = 8;
    let schemes = vec![
        SamplingScheme::full(n),
        SamplingScheme::nice(3, n).unwrap(),
        SamplingScheme::new(sppm::SamplingKind::Nonuniform { p: (1..=n).map(|i| i as f64 / 36.0).collect() }, n).unwrap(),
        SamplingScheme::block(vec![vec![0, 1, 2], vec![3, 4], vec![5, 6, 7]], n).unwrap(),
        SamplingScheme::stratified(vec![vec![0, 1, 2], vec![3, 4], vec![5, 6, 7]], n).unwrap(),
    ];
    let mut r = rng::stream(10, 0, 0);
    for s in schemes {
        for _ in 0..10 {
            let x = gauss(&mut r, 2);
            let avg: f64 = s
                .enumerate()
                .unwrap()
                .iter()
                .map(|(q, c)| q * CohortObjective::new(&p, c).unwrap().value(&x))
                .sum();
            let f = p.full_loss(&x);
            assert!((avg - f).abs() <= 1e-12 * f.abs().max(1.0), "{}: {avg} vs {f}", s.label());
        }
    }
}

#[test]
fn efbv_running_control_mean_matches_recomputation() {
    let p = SynthClassification::new(6, 10, 8, 4).problem(ProblemKind::L2Logistic, 0.1).unwrap();
    let ens = EnsembleSpec::independent(CompressorSpec::new(CompressorKind::Comp { k: 1, kp: 4 }, 8).unwrap(), 6).unwrap();
    let cfg = EfbvConfig::theory(&p, ens, Mode::Efbv, Regime::Pl, LConvention::RootMean, 300, 1).unwrap();
    let mut alg = Efbv::new(&p, cfg).unwrap();
    for _ in 0..300 {
        alg.step().unwrap();
        let s = alg.state();
        let fresh = commopt::linalg::mean(&s.h);
        assert!(dist_sq(&fresh, &s.h_bar).sqrt() <= 1e-10, "round {}", s.round);
    }
}

fn flix_fixture() -> (Problem, FlixInstance) {
    let p = SynthClassification::new(5, 20, 4, 11).problem(ProblemKind::L2Logistic, 0.1).unwrap();
    let inst = FlixInstance::build(&p, &[0.2, 0.5, 0.7, 0.9, 1.0], 1e-10).unwrap();
    (p, inst)
}

#[test]
fn scafflix_weighted_controls_stay_zero() {
    let (p, inst) = flix_fixture();
    let cfg = ScafflixConfig::individual(&p, 0.3, GradMode::SingleSample, 0, 2);
    let mut alg = Scafflix::new(&inst, cfg).unwrap();
    for _ in 0..500 {
        alg.step().unwrap();
        let s = scafflix::weighted_control_sum(&inst, alg.state());
        assert!(norm(&s) <= 1e-9, "round {}: {}", alg.state().round, norm(&s));
    }
    assert!(alg.state().comm_rounds > 0);
}

#[test]
fn scafflix_optimum_is_a_fixed_point() {
    let (p, inst) = flix_fixture();
    let r = inst.reference().unwrap();
    let cfg = ScafflixConfig::individual(&p, 0.5, GradMode::Exact, 0, 3);
    let state = ScafflixState {
        x: vec![r.x.clone(); p.n()],
        h: r.grads.clone(),
        round: 0,
        comm_rounds: 0,
    };
    let mut alg = Scafflix::with_state(&inst, cfg, state).unwrap();
    for _ in 0..100 {
        alg.step().unwrap();
    }
    for x in &alg.state().x {
        assert!(dist_sq(x, &r.x).sqrt() <= 1e-9);
    }
    for (h, g) in alg.state().h.iter().zip(&r.grads) {
        assert!(dist_sq(h, g).sqrt() <= 1e-9);
    }
}

#[test]
fn dirichlet_concentration_evens_out_client_sizes() {
    let (ds, _) = SynthClassification::new(10, 50, 3, 0).generate().unwrap();
    let spread = |alpha: f64| -> f64 {
        let vars: Vec<f64> = (0..100u64)
            .map(|seed| {
                let sizes = partition(&ds, PartitionScheme::DirichletQuantity { alpha }, 10, seed).unwrap().sizes();
                let m = sizes.iter().sum::<usize>() as f64 / 10.0;
                sizes.iter().map(|&s| (s as f64 - m).powi(2)).sum::<f64>() / 10.0
            })
            .collect();
        vars.iter().sum::<f64>() / vars.len() as f64
    };
    let v: Vec<f64> = [0.1, 1.0, 10.0].into_iter().map(spread).collect();
    assert!(v[0] > v[1] && v[1] > v[2], "{v:?}");
}
