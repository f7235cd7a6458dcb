//! Learned dynamic selection against the baselines: no selection, a
//! static learned subset, random gates at the same budget, and
//! thresholded attention.
//!
//! cargo run --release --example baselines -- [seed]

use vfds::data::{generate_synthetic, SyntheticSpec};
use vfds::model::PolicyKind;
use vfds::train::{evaluate, prepare, train, Pick, TrainConfig};

fn main() -> vfds::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let ds = generate_synthetic(&SyntheticSpec::default(), seed)?;
    let base = TrainConfig { seed, ..TrainConfig::synthetic_benchmark() };
    let data = prepare(&base, &ds)?;

    let run = |cfg: TrainConfig| -> vfds::Result<vfds::report::RunReport> {
        let out = train(&cfg, &data.train, &data.val, None)?;
        Ok(evaluate(out.model(Pick::Latest), &data.test, cfg.batch_size, cfg.seed)?.report)
    };
    let show = |name: &str, r: &vfds::report::RunReport| {
        println!("{name:<22} acc {:>6.2}%  avg features {:>6.2}%  union {:>6.2}%", r.accuracy, r.avg_feature_pct, r.union_feature_pct);
    };

    let vfds = run(base.clone())?;
    show("vfds", &vfds);
    show("no selection", &run(TrainConfig { policy: PolicyKind::None, ..base.clone() })?);
    show("static", &run(TrainConfig { policy: PolicyKind::Static, ..base.clone() })?);
    let p = vfds.avg_feature_pct / 100.0;
    show(&format!("random (p = {p:.3})"), &run(TrainConfig { policy: PolicyKind::Random, random_p: p, ..base.clone() })?);
    for alpha in [0.0, 0.9, 0.95] {
        show(&format!("attention (α = {alpha})"), &run(TrainConfig { policy: PolicyKind::Attention, alpha, ..base.clone() })?);
    }
    Ok(())
}
