//! The exact Bernoulli KL to the cost-aware prior, divided by the dataset
//! size N with η = Nλ, approaches the linear penalty λ c σ as N grows.
//!
//! cargo run --release --example kl_convergence

use vfds::gating::GatePrior;

fn main() -> vfds::Result<()> {
    let lambda = 0.01;
    println!("{:>10} {}", "N", (1..=9).map(|i| format!("σ={:.1}     ", i as f64 / 10.0)).collect::<String>());
    for n in [1e2, 1e3, 1e4, 1e5, 1e6] {
        let prior = GatePrior::uniform(1, lambda, n)?;
        let gaps: Vec<String> = (1..=9)
            .map(|i| {
                let sigma = i as f64 / 10.0;
                let scaled = prior.kl_exact(&[sigma]).map(|kl| kl / n)?;
                Ok(format!("{:+.2e} ", (scaled - lambda * sigma) / (lambda * sigma)))
            })
            .collect::<vfds::Result<_>>()?;
        println!("{n:>10} {}", gaps.join(""));
    }
    println!("\nentries are the relative gap (KL/N - λσ) / λσ");
    Ok(())
}
