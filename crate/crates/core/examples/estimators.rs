//! Compare the gradient estimators for the Bernoulli gates on the
//! synthetic benchmark: Gumbel-Softmax, straight-through, ARM, ST-ARM and
//! the ℓ1-relaxed baseline.
//!
//! cargo run --release --example estimators -- [epochs]

use std::time::Instant;

use vfds::data::{generate_synthetic, HmmOracle, SyntheticSpec};
use vfds::estimators::EstimatorKind;
use vfds::train::{evaluate, prepare, train, Pick, TrainConfig};

fn main() -> vfds::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let ds = generate_synthetic(&SyntheticSpec::default(), 0)?;
    let base = TrainConfig { epochs, ..TrainConfig::synthetic_benchmark() };
    let data = prepare(&base, &ds)?;
    let ceiling = HmmOracle::fit(&data.train)?.accuracy(&data.test)?;
    println!("oracle ceiling {ceiling:.2}%, {epochs} epochs\n");
    println!("{:<8} {:>8} {:>10} {:>8} {:>8}", "method", "acc %", "features %", "recall", "secs");
    for estimator in [
        EstimatorKind::GumbelSoftmax,
        EstimatorKind::StraightThrough,
        EstimatorKind::Arm,
        EstimatorKind::StArm,
        EstimatorKind::L1Relaxed,
    ] {
        let cfg = TrainConfig { estimator, ..base.clone() };
        let start = Instant::now();
        let out = train(&cfg, &data.train, &data.val, None)?;
        let r = evaluate(out.model(Pick::Latest), &data.test, cfg.batch_size, cfg.seed)?.report;
        println!(
            "{:<8} {:>8.2} {:>10.2} {:>8.3} {:>8.1}",
            estimator.as_str(),
            r.accuracy,
            r.avg_feature_pct,
            r.selection_recall.unwrap_or(0.0),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
