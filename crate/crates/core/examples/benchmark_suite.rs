//! Runs every benchmark case at a reduced particle count over several seeds
//! and prints the median error next to the published single-run figures.
//!
//! cargo run --release --example benchmark_suite -- [particles] [seeds]

use std::time::Instant;

use odedbn::oracle::BenchmarkCase;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn main() {
    let mut args = std::env::args().skip(1);
    let particles: usize = args.next().map_or(20_000, |a| a.parse().expect("particle count"));
    let seeds: u64 = args.next().map_or(5, |a| a.parse().expect("seed count"));

    println!("{:<8} {:>10} {:>10} {:>10} {:>10} {:>8}", "case", "rmse", "mae", "published", "published", "secs");
    for case in BenchmarkCase::all() {
        let started = Instant::now();
        let mut rmse = Vec::new();
        let mut mae = Vec::new();
        for seed in 0..seeds {
            match case.run(&case.config(particles, seed)) {
                Ok(run) => {
                    rmse.push(run.metrics.rmse);
                    mae.push(run.metrics.mae);
                }
                Err(e) => println!("{} seed {seed}: {e}", case.name),
            }
        }
        if rmse.is_empty() {
            continue;
        }
        println!(
            "{:<8} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>8.1}",
            case.name,
            median(rmse),
            median(mae),
            case.reported.0,
            case.reported.1,
            started.elapsed().as_secs_f64()
        );
    }
}
