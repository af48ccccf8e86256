//! Checks against the real mushrooms file. Set `COMMOPT_MUSHROOMS` to its path;
//! without it these tests return immediately.

use commopt::compressors::{CompressorKind, CompressorSpec, EnsembleSpec};
use commopt::datasets::{load_libsvm, partition, Dataset, PartitionScheme};
use commopt::efbv::{EfbvConfig, LConvention, Mode, Regime};
use commopt::problems::Problem;

fn dataset() -> Option<Dataset> {
    let path = std::env::var("COMMOPT_MUSHROOMS").ok()?;
    Some(load_libsvm(path).unwrap())
}

#[test]
fn shape() {
    let Some(ds) = dataset() else { return };
    assert_eq!((ds.count(), ds.dim()), (8124, 112));
}

#[test]
fn smoothness_constants_are_reproducible() {
    let Some(ds) = dataset() else { return };
    let l = |seed| {
        let part = partition(&ds, PartitionScheme::Iid, 1000, seed).unwrap();
        Problem::l2_logistic(&ds, &part, 0.1).unwrap().constants().l_i.clone()
    };
    let (a, b) = (l(5), l(5));
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn theory_stepsize_follows_the_formula() {
    let Some(ds) = dataset() else { return };
    let n = 1000;
    let part = partition(&ds, PartitionScheme::Iid, n, 0).unwrap();
    let p = Problem::l2_logistic(&ds, &part, 0.1).unwrap();
    let spec = CompressorSpec::new(CompressorKind::Comp { k: 1, kp: 56 }, 112).unwrap();
    let ens = EnsembleSpec::independent(spec, n).unwrap();
    let cfg = EfbvConfig::theory(&p, ens, Mode::Efbv, Regime::Pl, LConvention::RootMean, 0, 0).unwrap();

    let (eta, omega, omega_ran) = (((112.0f64 - 56.0) / 112.0).sqrt(), 55.0, 0.055);
    let lambda = ((1.0 - eta) / ((1.0 - eta).powi(2) + omega)).min(1.0);
    let nu = ((1.0 - eta) / ((1.0 - eta).powi(2) + omega_ran)).min(1.0);
    let r = (1.0 - lambda + lambda * eta).powi(2) + lambda * lambda * omega;
    let r_av = (1.0 - nu + nu * eta).powi(2) + nu * nu * omega_ran;
    let s = ((1.0 + r) / (2.0 * r)).sqrt() - 1.0;
    let c = p.constants();
    let l_tilde = (c.l_i.iter().map(|l| l * l).sum::<f64>() / n as f64).sqrt();
    let gamma = 1.0 / (c.l_global + l_tilde * (r_av / r).sqrt() / s);
    assert!((cfg.gamma - gamma).abs() <= 1e-9 * gamma, "{} vs {gamma}", cfg.gamma);
    // the reference split is unknown, so 1.38e-4 is only a sanity scale
    eprintln!("theory stepsize on this split: {:.3e}", cfg.gamma);
    assert!(cfg.gamma > 1.38e-5 && cfg.gamma < 1.38e-3);
}
