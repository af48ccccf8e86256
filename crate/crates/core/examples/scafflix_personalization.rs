//! Communication rounds Scafflix needs as the personalization factor alpha
//! grows, compared with plain gradient descent on the same FLIX objective.
//!
//!     cargo run --release --example scafflix_personalization

use commopt::datasets::SynthClassification;
use commopt::problems::{ProblemKind, SmoothObjective};
use commopt::scafflix::{self, FlixInstance, GradMode, ScafflixConfig};

fn main() -> commopt::Result<()> {
    let p = SynthClassification::new(10, 30, 5, 6).problem(ProblemKind::L2Logistic, 0.1)?;
    for alpha in [0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
        let inst = FlixInstance::build(&p, &vec![alpha; p.n()], 1e-10)?;
        let cfg = ScafflixConfig::individual(&p, 0.2, GradMode::Exact, 5000, 0);
        let fast = scafflix::comm_rounds_to(&scafflix::run_scafflix(&inst, cfg)?, 1e-6);
        let gd = scafflix::run_flix_gd(&inst, 1.0 / inst.lipschitz_bound(), 5000)?;
        println!(
            "alpha {alpha:.1}: Scafflix {:>5?} comm rounds, FLIX-GD {:>5?}",
            fast,
            scafflix::comm_rounds_to(&gd, 1e-6)
        );
    }
    Ok(())
}
