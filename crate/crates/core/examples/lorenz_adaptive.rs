//! Adaptive-step inference on the Lorenz system from noisy observations of X.
//! Prints accepted and rejected step counts and the tracking error.
//!
//! cargo run --release --example lorenz_adaptive -- [particles] [tolerance]

use odedbn::oracle::{compute_metrics, predicted_series, BenchmarkCase};
use odedbn::{run_adaptive, InferenceMode};

fn main() {
    let mut args = std::env::args().skip(1);
    let particles: usize = args.next().map_or(20_000, |a| a.parse().expect("particle count"));
    let case = BenchmarkCase::named("lorenz").unwrap();
    let mut cfg = case.config(particles, 0);
    if let Some(tol) = args.next() {
        if let InferenceMode::Adaptive { tolerance, .. } = &mut cfg.mode {
            *tolerance = tol.parse().expect("tolerance");
        }
    }
    let data = case.generate().expect("reference");
    let m = case.model();
    let report = run_adaptive(&m, &cfg, &case.evidence(&data)).expect("inference");
    let smallest = report.steps.iter().map(|s| s.h).fold(f64::INFINITY, f64::min);
    let largest = report.steps.iter().map(|s| s.h).fold(0.0, f64::max);
    println!(
        "{} accepted, {} rejected, step sizes {smallest:.2e} to {largest:.2e}",
        report.accepted, report.rejected
    );
    let predicted = predicted_series(&m, &report.summaries, case.target).unwrap();
    let metrics = compute_metrics(&predicted, &data.reference, case.target, case.run_in_end).unwrap();
    println!("X: rmse {:.4}, mae {:.4} over {} points", metrics.rmse, metrics.mae, metrics.count);
    for s in report.summaries.iter().step_by(10) {
        println!("t {:>5.2}  X {:>8.3} ± {:.3}", s.time, s.state_mean[0], s.state_std[0]);
    }
}
