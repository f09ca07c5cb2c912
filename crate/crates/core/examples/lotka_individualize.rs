//! Fits the Lotka-Volterra parameters to four observations of the prey
//! population and prints how each posterior moves away from its prior.

use odedbn::oracle::BenchmarkCase;
use odedbn::run_fixed;

fn main() {
    let particles: usize = std::env::args().nth(1).map_or(100_000, |a| a.parse().expect("particle count"));
    let case = BenchmarkCase::named("lotka").unwrap();
    let data = case.generate().expect("reference");
    let m = case.model();
    let summaries = run_fixed(&m, &case.config(particles, 0), &case.evidence(&data)).expect("inference");
    let first = &summaries[0];
    let last = summaries.last().unwrap();
    println!("{:<6} {:>8} {:>8} {:>10} {:>8}", "param", "prior", "sd", "posterior", "sd");
    for (k, p) in m.params.iter().enumerate() {
        println!(
            "{:<6} {:>8.3} {:>8.3} {:>10.3} {:>8.3}",
            p.name, first.param_mean[k], first.param_std[k], last.param_mean[k], last.param_std[k]
        );
    }
    println!("true values: {:?}", case.benchmark_params);
}
