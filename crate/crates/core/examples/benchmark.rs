//! Runs the default synthetic benchmark end to end and prints the
//! static vs temporal comparison.

use std::time::Instant;

use proctor_core::face::FaceConfig;
use proctor_core::metrics::format_comparison;
use proctor_core::pipeline::{extract_sessions, run_experiment, ExperimentConfig};
use proctor_core::synth::default_benchmark;

fn main() {
    let start = Instant::now();
    let bench = default_benchmark();
    let face = FaceConfig::default();
    let train = extract_sessions(&bench.train, &face);
    let val = extract_sessions(&bench.validation, &face);
    let test = extract_sessions(&bench.test, &face);
    println!("generated + extracted in {:.1}s", start.elapsed().as_secs_f64());
    let out = run_experiment(&train, &val, &test, &ExperimentConfig::default()).expect("experiment");
    for e in &out.temporal.history {
        println!("epoch {:>2} loss {:.4} val_auc {:?}", e.epoch, e.train_loss, e.val_auc);
    }
    println!(
        "static {:.1}s, temporal {:.1}s (best epoch {})",
        out.static_train_secs, out.temporal_train_secs, out.temporal.best_epoch
    );
    print!("{}", format_comparison(&[out.static_report, out.temporal_report]));
    println!("total {:.1}s", start.elapsed().as_secs_f64());
}
