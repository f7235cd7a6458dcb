use std::path::Path;

use rayon::prelude::*;

use super::{evaluate, train, Pick, PreparedData, RunOutput, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{PolicyKind, PolicyParams};
use crate::report::TradeoffRow;

pub const DEFAULT_LAMBDAS: [f64; 5] = [1.0, 0.1, 0.01, 0.005, 0.001];
pub const DEFAULT_ALPHAS: [f64; 6] = [0.5, 0.9, 0.95, 0.99, 0.995, 0.999];

/// Seed for the run keyed by `key`, derived from `base` (splitmix64).
pub fn derived_seed(base: u64, key: f64) -> u64 {
    let mut z = base ^ key.to_bits().wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))
}

/// One independent training per λ, scored on the test split with the
/// chosen model. Rows come back sorted by λ; each run writes to
/// `out/lambda_<λ>`.
pub fn sweep_lambda(
    cfg: &TrainConfig,
    lambdas: &[f64],
    data: &PreparedData,
    pick: Pick,
    jobs: usize,
    out: Option<&Path>,
) -> Result<Vec<TradeoffRow>> {
    if lambdas.is_empty() {
        return Err(Error::invalid("lambda list is empty"));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let run = |&lambda: &f64| -> Result<TradeoffRow> {
        let seed = derived_seed(cfg.seed, lambda);
        let run_cfg = TrainConfig { lambda, seed, ..cfg.clone() };
        let dir = out.map(|o| o.join(format!("lambda_{lambda}")));
        let output = dir.as_deref().map(|d| RunOutput { dir: d, norm: Some(&data.norm) });
        let outcome = train(&run_cfg, &data.train, &data.val, output)?;
        let eval = evaluate(outcome.model(pick), &data.test, run_cfg.batch_size, seed)?;
        Ok(TradeoffRow {
            lambda,
            alpha: None,
            seed,
            accuracy: eval.report.accuracy,
            macro_f1: eval.report.macro_f1,
            avg_feature_pct: eval.report.avg_feature_pct,
            union_feature_pct: eval.report.union_feature_pct,
        })
    };
    pool(jobs)?.install(|| sorted.par_iter().map(run).collect())
}

/// Trains one attention model and scores it on the test split at each
/// threshold `α`; training itself does not depend on `α`.
pub fn sweep_alpha(cfg: &TrainConfig, alphas: &[f64], data: &PreparedData, pick: Pick, out: Option<&Path>) -> Result<Vec<TradeoffRow>> {
    if alphas.is_empty() {
        return Err(Error::invalid("alpha list is empty"));
    }
    let run_cfg = TrainConfig { policy: PolicyKind::Attention, ..cfg.clone() };
    let output = out.map(|d| RunOutput { dir: d, norm: Some(&data.norm) });
    let outcome = train(&run_cfg, &data.train, &data.val, output)?;
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .into_iter()
        .map(|alpha| {
            let mut model = outcome.model(pick).clone();
            model.spec.alpha = alpha;
            if let PolicyParams::Attention(a) = &mut model.policy {
                a.alpha = alpha;
            }
            let eval = evaluate(&model, &data.test, run_cfg.batch_size, run_cfg.seed)?;
            Ok(TradeoffRow {
                lambda: run_cfg.lambda,
                alpha: Some(alpha),
                seed: run_cfg.seed,
                accuracy: eval.report.accuracy,
                macro_f1: eval.report.macro_f1,
                avg_feature_pct: eval.report.avg_feature_pct,
                union_feature_pct: eval.report.union_feature_pct,
            })
        })
        .collect()
}
