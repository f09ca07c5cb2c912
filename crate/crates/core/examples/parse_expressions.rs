//! Parses a few right-hand sides, prints their canonical form and free
//! symbols, and evaluates them under fixed bindings.

use odedbn::{eval_expr, parse_expr, Bindings};

fn main() {
    let env = Bindings::new()
        .with("x", 2.0)
        .with("y", -1.5)
        .with("k_m", 0.3)
        .with("V", 4.0);
    for text in [
        "-8/3 * x + y * 2",
        "x ^ 2 ^ 0.5",
        "V * max(y, 0) / (k_m + max(y, 0))",
        "exp(-x) + sin(y) * cos(y)",
        "log(y)",
    ] {
        match parse_expr(text) {
            Ok(node) => {
                let symbols: Vec<String> = node.free_symbols().into_iter().collect();
                match eval_expr(&node, &env) {
                    Ok(v) => println!("{text:<36} => {node}  [{}] = {v}", symbols.join(", ")),
                    Err(e) => println!("{text:<36} => {node}  [{}] fails: {e}", symbols.join(", ")),
                }
            }
            Err(e) => println!("{text:<36} parse error: {e}"),
        }
    }
    if let Err(e) = parse_expr("x * (y + ") {
        println!("x * (y +                             parse error: {e}");
    }
}
