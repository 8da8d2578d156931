//! Finite-difference checks of every differentiable op and the composed
//! layers. Pass a substring to run a subset: `-- softmax`.

use streamtrack::harness::gradsuite::{check_names, run_suite};

fn main() -> streamtrack::Result<()> {
    let filter = std::env::args().nth(1);
    println!("{} checks available", check_names().len());
    for r in run_suite(20, 7, filter.as_deref())? {
        println!(
            "{:<16} {:>5} probes  max rel err {:.2e}  {}",
            r.name,
            r.probes,
            r.max_rel_err,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
