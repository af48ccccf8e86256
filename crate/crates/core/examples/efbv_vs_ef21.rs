//! Scalars each client must send before EF-BV and EF21 reach a 1e-6 gap
//! with comp-(1, d/2) compressors.
//!
//!     cargo run --release --example efbv_vs_ef21

use commopt::compressors::{CompressorKind, CompressorSpec, EnsembleSpec};
use commopt::datasets::SynthClassification;
use commopt::efbv::{self, Efbv, EfbvConfig, LConvention, Mode, Reference, Regime};
use commopt::problems::{ProblemKind, Regularizer};

fn main() -> commopt::Result<()> {
    let (n, d) = (100, 20);
    let p = SynthClassification::new(n, 20, d, 5).problem(ProblemKind::L2Logistic, 1.0)?;
    let reference = Reference::compute(&p, &Regularizer::Zero)?;
    let ens = EnsembleSpec::independent(CompressorSpec::new(CompressorKind::Comp { k: 1, kp: d / 2 }, d)?, n)?;
    for mode in [Mode::Efbv, Mode::Ef21] {
        let cfg = EfbvConfig::theory(&p, ens.clone(), mode, Regime::Pl, LConvention::RootMean, 3000, 0)?;
        let (lambda, nu, gamma) = (cfg.lambda, cfg.nu, cfg.gamma);
        let trace = Efbv::new(&p, cfg)?.run(Some(&reference))?;
        let sent = efbv::scalars_to_accuracy(&trace, 1e-6);
        println!(
            "{mode:?}: lambda {lambda:.4} nu {nu:.4} gamma {gamma:.4}  scalars to 1e-6: {}",
            sent.map_or("not reached".into(), |s| s.to_string())
        );
    }
    Ok(())
}
