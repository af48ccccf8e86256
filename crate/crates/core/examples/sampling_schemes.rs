//! mu_AS and sigma^2_{*,AS} of several cohort samplings on the unit-cross
//! fixture, and the best stratified clustering found by brute force.
//!
//!     cargo run --release --example sampling_schemes

use commopt::datasets;
use commopt::sppm::{self, ClusteringMode, SamplingScheme, SamplingStats};

fn main() -> commopt::Result<()> {
    let grads = datasets::unit_cross();
    let mu = vec![1.0; 4];
    let schemes = [
        SamplingScheme::full(4),
        SamplingScheme::nice(1, 4)?,
        SamplingScheme::nice(2, 4)?,
        SamplingScheme::block(vec![vec![0, 1], vec![2, 3]], 4)?,
        SamplingScheme::stratified(vec![vec![0, 2], vec![1, 3]], 4)?,
        SamplingScheme::stratified(vec![vec![0, 1], vec![2, 3]], 4)?,
    ];
    for s in &schemes {
        let st = SamplingStats::enumerated(s, &mu, &grads)?;
        println!("{:<28} mu_AS {:.4}  sigma^2 {:.4}", s.label(), st.mu_as, st.sigma_star_as_sq);
    }
    let best = sppm::optimal_stratified_clustering(&grads, 2, ClusteringMode::BruteForce, 0)?;
    println!("best clustering {:?}: sigma^2 {}", best.blocks, best.sigma_sq);
    Ok(())
}
