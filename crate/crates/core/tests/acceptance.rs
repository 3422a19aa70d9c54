//! Acceptance suite on the standard scenario: one PASS/FAIL line per
//! criterion. Numeric arguments restrict the run to those criteria.

use std::process::ExitCode;

use wdiff::config::ExperimentConfig;
use wdiff::validation::{Validator, CRITERIA};

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let v = Validator::new(ExperimentConfig::standard()).expect("standard config is valid");
    let mut failed = Vec::new();
    for &(id, name) in CRITERIA.iter() {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let line = match v.check(id) {
            Ok(r) => {
                if !r.passed {
                    failed.push(id);
                }
                format!("{} [{:.1}s]", r.line(), r.seconds)
            }
            Err(e) => {
                failed.push(id);
                format!("FAIL criterion {id:>2} ({name}): error: {e}")
            }
        };
        println!("{line}");
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
