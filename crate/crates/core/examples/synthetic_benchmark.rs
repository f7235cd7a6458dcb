//! Train VFDS on the synthetic hidden-context benchmark and compare against
//! the HMM oracle ceiling.
//!
//! cargo run --release --example synthetic_benchmark -- [seed]

use std::time::Instant;

use vfds::data::{generate_synthetic, HmmOracle, SyntheticSpec};
use vfds::train::{evaluate, prepare, train, Pick, TrainConfig};

fn main() -> vfds::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = SyntheticSpec::default();
    let ds = generate_synthetic(&spec, seed)?;
    let cfg = TrainConfig { seed, ..TrainConfig::synthetic_benchmark() };
    let data = prepare(&cfg, &ds)?;

    let oracle = HmmOracle::fit(&data.train)?;
    let ceiling = oracle.accuracy(&data.test)?;
    println!("oracle ceiling: {ceiling:.2}%");

    let start = Instant::now();
    let outcome = train(&cfg, &data.train, &data.val, None)?;
    println!("trained {} epochs in {:.1}s (best epoch {})", outcome.log.len(), start.elapsed().as_secs_f64(), outcome.best_epoch);
    for pick in [Pick::Latest, Pick::Best] {
        let eval = evaluate(outcome.model(pick), &data.test, cfg.batch_size, seed)?;
        let r = &eval.report;
        println!(
            "{:>6}: accuracy {:.2}% ({:.1}% of ceiling), avg features {:.2}%, union {:.2}%, precision {:.3}, recall {:.3}",
            pick.as_str(),
            r.accuracy,
            100.0 * r.accuracy / ceiling,
            r.avg_feature_pct,
            r.union_feature_pct,
            r.selection_precision.unwrap_or(0.0),
            r.selection_recall.unwrap_or(0.0)
        );
    }
    println!("relevant features per context: {:?}", spec.relevant);
    Ok(())
}
