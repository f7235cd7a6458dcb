//! Accuracy against feature usage as the sparsity weight λ varies; writes
//! the table to `tradeoff.csv` in the given directory.
//!
//! cargo run --release --example lambda_sweep -- [out_dir] [jobs]

use std::path::PathBuf;

use vfds::data::{generate_synthetic, SyntheticSpec};
use vfds::report::write_tradeoff;
use vfds::train::{prepare, sweep_lambda, Pick, TrainConfig, DEFAULT_LAMBDAS};

fn main() -> vfds::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "sweep_out".into()));
    let jobs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let ds = generate_synthetic(&SyntheticSpec::default(), 0)?;
    let cfg = TrainConfig::synthetic_benchmark();
    let data = prepare(&cfg, &ds)?;
    std::fs::create_dir_all(&out).map_err(|e| vfds::Error::InvalidArgument(e.to_string()))?;
    let rows = sweep_lambda(&cfg, &DEFAULT_LAMBDAS, &data, Pick::Latest, jobs, Some(&out))?;
    println!("{:>8} {:>8} {:>10} {:>8}", "lambda", "acc %", "features %", "union %");
    for r in &rows {
        println!("{:>8} {:>8.2} {:>10.2} {:>8.2}", r.lambda, r.accuracy, r.avg_feature_pct, r.union_feature_pct);
    }
    write_tradeoff(&out.join("tradeoff.csv"), &rows)?;
    println!("wrote {}", out.join("tradeoff.csv").display());
    Ok(())
}
