//! Compares analytic gradients against central differences, for every op and
//! for a full (tiny) model with the complete training loss.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use std::time::Instant;

use fhdr::gradcheck::{self, CheckOptions, Scope};

fn main() -> fhdr::Result<()> {
    let opts = CheckOptions::default();
    for scope in [Scope::Ops, Scope::Model] {
        let start = Instant::now();
        let results = gradcheck::run(scope, &opts)?;
        for r in &results {
            println!(
                "{:<28} max rel err {:.2e} over {:>5} entries ({} kinks skipped)  {}",
                r.name,
                r.max_rel_err,
                r.compared,
                r.kinks_skipped,
                if r.passed { "ok" } else { "FAIL" }
            );
        }
        println!("{scope:?} suite took {:.1?}\n", start.elapsed());
    }

    // A deliberately broken conv2d gradient has to be caught.
    let faulty = CheckOptions {
        conv_grad_fault: Some(1.01),
        ..opts
    };
    let caught = gradcheck::run(Scope::Ops, &faulty)?.iter().any(|r| !r.passed);
    println!("injected 1% conv2d gradient fault detected: {caught}");
    Ok(())
}
