//! Compiles each shipped model to its two-slice network and prints the node
//! and arc counts followed by the DOT text of the smallest one.

use std::path::Path;

use odedbn::{compile, export_dot, ModelFile};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("models");
    let mut smallest = None;
    for name in ["pif45", "lotka", "stc", "lorenz"] {
        let file = ModelFile::load(dir.join(format!("{name}.model"))).expect("shipped model");
        let graph = compile(&file.model).expect("shipped model compiles");
        println!("{name:<7} {}; {}", graph.node_report(), graph.arc_report());
        if smallest.as_ref().is_none_or(|(n, _)| graph.nodes.len() < *n) {
            smallest = Some((graph.nodes.len(), graph));
        }
    }
    let (_, graph) = smallest.unwrap();
    println!();
    print!("{}", export_dot(&graph));
}
