//! Drives the PIF4/5 model with the TOC1 input curve and prints the filtered
//! PIF trajectory next to the reference.

use odedbn::oracle::BenchmarkCase;
use odedbn::run_fixed;

fn main() {
    let case = BenchmarkCase::named("pif45").unwrap();
    let data = case.generate().expect("reference");
    let inputs = case.inputs();
    let toc1 = inputs.get("TOC1").expect("TOC1 curve");
    let m = case.model();
    let summaries = run_fixed(&m, &case.config(20_000, 0), &case.evidence(&data)).expect("inference");
    println!("{:>4} {:>7} {:>9} {:>9} {:>9}", "t", "TOC1", "PIF", "sd", "reference");
    for s in &summaries {
        let reference = data.reference.at(s.time).map_or(f64::NAN, |row| row[0]);
        println!(
            "{:>4} {:>7.4} {:>9.4} {:>9.4} {:>9.4}",
            s.time,
            toc1.value_at(s.time).unwrap_or(f64::NAN),
            s.state_mean[0],
            s.state_std[0],
            reference
        );
    }
}
