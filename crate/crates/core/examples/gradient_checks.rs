//! Runs the built-in correctness suite: finite-difference gradient checks
//! for every primitive, layer and the full model, statistics and AUC
//! against brute-force oracles, and probability invariants.
//!
//! ```text
//! cargo run --release --example gradient_checks -- [seed]
//! ```

use dualdesc::verify::run_suite;

fn main() {
    let seed: u64 = std::env::args().nth(1).map_or(42, |s| s.parse().expect("seed"));
    let outcomes = run_suite(seed);
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} checks, {failed} failed", outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
