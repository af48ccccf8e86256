//! Certified (eta, omega) for each sparsifier next to a Monte Carlo audit,
//! and the optimal scaling lambda* for each.
//!
//!     cargo run --release --example compressor_certificates

use commopt::compressors::{estimate_params, optimal_scaling, CompressorKind, CompressorSpec};
use commopt::rng;

fn main() -> commopt::Result<()> {
    let d = 20;
    let kinds = [
        "rand_k:k=4",
        "top_k:k=4",
        "mix:k=2,kp=4",
        "comp:k=1,kp=10",
        "comp:k=2,kp=10",
    ];
    println!("{:<16} {:>8} {:>8} {:>8} {:>8} {:>10}", "kind", "eta", "omega", "eta^", "omega^", "lambda*");
    for text in kinds {
        let kind: CompressorKind = text.parse()?;
        let spec = CompressorSpec::new(kind, d)?;
        let est = estimate_params(&spec, 2000, &mut rng::server_stream(0, 0))?;
        println!(
            "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>10.4}",
            text,
            spec.eta(),
            spec.omega(),
            est.eta_hat,
            est.omega_hat,
            optimal_scaling(spec.eta(), spec.omega())
        );
        assert!(est.violations.is_empty());
    }
    Ok(())
}
