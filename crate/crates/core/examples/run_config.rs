//! Runs an experiment config, writes one trace per seed and reads them back.
//!
//!     cargo run --release --example run_config -- configs/scafflix.toml

use commopt::harness::{self, ExperimentConfig};
use commopt::Trace;

fn main() -> commopt::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "configs/scafflix.toml".into());
    let mut cfg = ExperimentConfig::load(&path)?;
    let dir = std::env::temp_dir().join("commopt-example");
    cfg.output = dir.clone();
    println!("config hash {}", cfg.hash()?);
    for file in harness::run_experiment(&cfg)? {
        let t = Trace::read(&file)?;
        let last = t.last().expect("trace has the initial record");
        println!(
            "{}: seed {} rounds {} f_gap {:?} dist_sq {:?}",
            file.display(),
            t.meta.seed,
            last.round,
            last.f_gap,
            last.dist_sq
        );
    }
    Ok(())
}
