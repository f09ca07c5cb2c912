//! Regenerates the evidence files shipped next to the benchmark models.
//!
//! Usage: cargo run --example regenerate_evidence [out_dir]

use std::path::PathBuf;

use odedbn::oracle::BenchmarkCase;

fn main() {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models"));
    for case in BenchmarkCase::all() {
        let data = case.generate().expect("reference generation");
        let path = out.join(format!("{}_{}.csv", case.name, case.target));
        std::fs::write(&path, data.observations.to_csv()).expect("write evidence");
        println!("{} ({} points)", path.display(), data.observations.points().len());
    }
}
