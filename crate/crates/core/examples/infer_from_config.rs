//! Runs inference from a run configuration file, the same path the `infer`
//! subcommand takes, and lists what it wrote.
//!
//! cargo run --release --example infer_from_config -- [config] [KEY=VALUE..]

use std::path::PathBuf;

use odedbn::cli::{cmd_infer, RunConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/run/lotka.cfg"));
    let overrides: Vec<(String, String)> = args
        .map(|a| {
            let (k, v) = a.split_once('=').expect("override as KEY=VALUE");
            (k.to_string(), v.to_string())
        })
        .collect();
    let cfg = RunConfig::load(&path, &overrides).expect("run configuration");
    let report = cmd_infer(&cfg).expect("inference");
    println!("{} summary rows", report.rows);
    let mut files: Vec<_> = std::fs::read_dir(&cfg.output).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    for f in files {
        println!("  {}", cfg.output.join(f).display());
    }
}
