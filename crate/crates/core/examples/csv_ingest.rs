//! Bring your own data: a long-format CSV with named activities and gaps
//! in the labels is segmented, normalised, trained on and reported.
//!
//! cargo run --release --example csv_ingest

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vfds::data::{load_csv, CsvSchema, PadPolicy};
use vfds::report::{per_activity_heatmap, summarize, write_heatmap, write_report};
use vfds::train::{evaluate, prepare, train, Pick, TrainConfig};

const ACTIVITIES: [&str; 3] = ["walk", "sit", "run"];

/// Three sensors; each activity drives one of them.
fn write_demo_csv(path: &std::path::Path) -> std::io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut body = String::from("subject,seq,t,label,acc_x,gyro_y,heart\n");
    for subject in 0..12 {
        let mut activity = rng.random_range(0..3);
        for t in 0..120 {
            if rng.random::<f64>() < 0.03 {
                activity = rng.random_range(0..3);
            }
            let signal: Vec<f64> = (0..3).map(|k| if k == activity { 1.5 } else { 0.0 } + rng.random_range(-1.0..1.0)).collect();
            let label = if rng.random::<f64>() < 0.1 { "" } else { ACTIVITIES[activity] };
            body.push_str(&format!("p{subject},1,{t},{label},{:.4},{:.4},{:.4}\n", signal[0], signal[1], signal[2]));
        }
    }
    std::fs::write(path, body)
}

fn main() -> vfds::Result<()> {
    let dir = std::env::temp_dir().join("vfds_csv_ingest");
    std::fs::create_dir_all(&dir).map_err(|e| vfds::Error::InvalidArgument(e.to_string()))?;
    let csv = dir.join("activities.csv");
    write_demo_csv(&csv).map_err(|e| vfds::Error::InvalidArgument(e.to_string()))?;

    let classes: Vec<String> = ACTIVITIES.iter().map(|s| s.to_string()).collect();
    let ds = load_csv(&csv, &CsvSchema { classes: Some(classes.clone()), n_classes: None })?;
    println!("loaded {} sequences, {} features, {} classes", ds.len(), ds.n_features(), ds.n_outputs);

    let cfg = TrainConfig {
        segment_len: Some(40),
        pad: PadPolicy::RepeatLast,
        epochs: 80,
        learning_rate: 3e-3,
        hidden_size: 16,
        gate_hidden: 8,
        lambda: 0.1,
        split_ratios: [0.6, 0.2, 0.2],
        ..TrainConfig::default()
    };
    let data = prepare(&cfg, &ds)?;
    let out = train(&cfg, &data.train, &data.val, None)?;
    let eval = evaluate(out.model(Pick::Best), &data.test, cfg.batch_size, cfg.seed)?;
    print!("{}", summarize(&eval.report));

    let labels: Vec<_> = data.test.sequences.iter().map(|s| s.labels.clone()).collect();
    let heat = per_activity_heatmap(&eval.trace, &labels, Some(&classes))?;
    println!("\nselection rate per activity ({})", ds.feature_names.join(", "));
    for (name, n, rates) in &heat.rows {
        println!("{name:>6} ({n:>4} steps): {}", rates.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join("  "));
    }
    write_report(&dir.join("report.csv"), &eval.report)?;
    write_heatmap(&dir.join("heatmap.csv"), &heat, &ds.feature_names)?;
    println!("\nreports in {}", dir.display());
    Ok(())
}
