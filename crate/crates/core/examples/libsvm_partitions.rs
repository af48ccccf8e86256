//! Parses a LibSVM file (or a built-in snippet) and splits it across clients
//! with every partition scheme.
//!
//!     cargo run --release --example libsvm_partitions -- [path] [clients]

use commopt::datasets::{self, PartitionScheme, SynthClassification};

fn main() -> commopt::Result<()> {
    let mut args = std::env::args().skip(1);
    let ds = match args.next() {
        Some(path) => datasets::load_libsvm(path)?,
        None => SynthClassification::new(8, 25, 6, 0).generate()?.0,
    };
    let n: usize = args.next().map_or(Ok(4), |s| s.parse()).map_err(|e| commopt::Error::invalid(format!("{e}")))?;
    println!("{} examples, dim {}, {} positive", ds.count(), ds.dim(), ds.positives());
    for scheme in [
        PartitionScheme::Iid,
        PartitionScheme::Labelwise,
        PartitionScheme::FeatureKmeans,
        PartitionScheme::DirichletQuantity { alpha: 0.5 },
    ] {
        match datasets::partition(&ds, scheme, n, 0) {
            Ok(p) => println!("{:<20} sizes {:?}", scheme.tag(), p.sizes()),
            Err(e) => println!("{:<20} {e}", scheme.tag()),
        }
    }
    Ok(())
}
