//! Evaluation harness for the built-in synthetic tasks.

use std::io;

use phylo_core::executor::MODE_ENV;
use phylo_core::testbed::harness_main;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = std::env::var(MODE_ENV).unwrap_or_else(|_| "full".to_string());
    let status = harness_main(&args, &mode, &mut io::stdout().lock(), &mut io::stderr().lock());
    std::process::exit(status);
}
