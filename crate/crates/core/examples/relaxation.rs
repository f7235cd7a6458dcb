//! How the temperature shapes the relaxed gates, and how sampled hard
//! gates average to the gate probability.
//!
//! cargo run --release --example relaxation

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vfds::gating::{hard_gates_sampled, relaxed_gate, sample_logistic};

fn main() -> vfds::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise: Vec<f64> = sample_logistic(8, &mut rng);
    println!("σ = 0.7, eight logistic draws");
    for tau in [0.01, 0.05, 0.5, 5.0, 100.0] {
        let z: Vec<String> = noise.iter().map(|&e| relaxed_gate(0.7, e, tau).map(|z| format!("{z:.3}"))).collect::<vfds::Result<_>>()?;
        println!("τ = {tau:<6} {}", z.join(" "));
    }
    let hard: Vec<String> = hard_gates_sampled(&[0.7; 8], &noise).iter().map(|z| format!("{z:.0}    ")).collect();
    println!("hard       {}", hard.join(" "));

    println!("\nmean of 1e6 hard gates");
    for sigma in [0.1, 0.37, 0.5, 0.9] {
        let m = 1_000_000;
        let eps: Vec<f64> = sample_logistic(m, &mut rng);
        let mean = hard_gates_sampled(&vec![sigma; m], &eps).iter().sum::<f64>() / m as f64;
        println!("σ = {sigma:<5} mean {mean:.4}");
    }
    Ok(())
}
