//! `gradcheck`: run the finite-difference gradient suites over every loss
//! component and report pass/fail per suite.

use anyhow::Result;
use radekit_core::losses::gradcheck::run_all;

/// Returns true when every suite passes.
pub fn run(seed: u64, trials: usize) -> Result<bool> {
    let reports = run_all(seed, trials)?;
    let mut all_pass = true;
    for r in &reports {
        println!("{r}");
        all_pass &= r.pass;
    }
    if all_pass {
        println!("gradcheck: all {} suites passed", reports.len());
    } else {
        println!("gradcheck: FAILED");
    }
    Ok(all_pass)
}
