//! Total communication cost of SPPM with stratified sampling as a function of
//! the number of local rounds K, against tuned LocalGD.
//!
//!     cargo run --release --example sppm_cost_curve

use commopt::harness::{self, Algorithm, ExperimentConfig};

fn main() -> commopt::Result<()> {
    let cfg = ExperimentConfig::from_toml(include_str!("../../../configs/sppm_cost_curve.toml"))?;
    let curve = harness::sweep(&cfg, &"K=1..8".parse()?)?;
    print!("{}", curve.to_csv());
    if let Some(best) = curve.best_by_cost() {
        println!("SPPM-SS: cheapest K = {} at cost {:.1}", best.value, best.total_cost.mean);
    }
    let mut local = harness::with_param(&cfg, "local_steps", 1.0)?;
    local.algorithm = Algorithm::Localgd;
    let table = harness::sweep(&local, &"stepsize=2,4,6,8,10,12".parse()?)?;
    match table.best_by_cost() {
        Some(r) => println!("LocalGD: best stepsize {} at cost {:.1}", r.value, r.total_cost.mean),
        None => println!("LocalGD never reached the target"),
    }
    Ok(())
}
