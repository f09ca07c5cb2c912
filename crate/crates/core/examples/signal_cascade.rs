//! Infers the five-state signal cascade from observations of Rpp alone and
//! prints every state at the observation times.

use odedbn::oracle::BenchmarkCase;
use odedbn::run_fixed;

fn main() {
    let case = BenchmarkCase::named("stc").unwrap();
    let data = case.generate().expect("reference");
    let m = case.model();
    let summaries = run_fixed(&m, &case.config(20_000, 0), &case.evidence(&data)).expect("inference");
    let names: Vec<&str> = m.states.iter().map(|s| s.name.as_str()).collect();
    println!("{:>4} {}", "t", names.iter().map(|n| format!("{n:>8}")).collect::<String>());
    for s in summaries.iter().filter(|s| case.evidence_times.contains(&s.time)) {
        let row: String = s.state_mean.iter().map(|v| format!("{v:>8.4}")).collect();
        println!("{:>4} {row}", s.time);
    }
}
