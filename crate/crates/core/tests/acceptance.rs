//! Prints one pass/fail line per acceptance criterion and fails if any criterion fails.

use cgo_biharmonic::verification::{run_all, CRITERIA};

#[test]
fn acceptance() {
    let mut failed = Vec::new();
    for (id, outcome) in run_all(20240917) {
        match outcome {
            Ok(o) => {
                println!("{}", o.line());
                if !o.passed {
                    failed.push(id);
                }
            }
            Err(e) => {
                let name = CRITERIA.iter().find(|c| c.0 == id).unwrap().1;
                println!("FAIL {id:>2} {name:<26} error: {e}");
                failed.push(id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
