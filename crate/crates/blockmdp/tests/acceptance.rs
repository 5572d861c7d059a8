//! Acceptance criteria 1 to 11. Prints one pass/fail line per criterion.

use std::io::Write;

use blockmdp::suites::Suite;

#[test]
fn acceptance_criteria() {
    let mut failed = Vec::new();
    for suite in Suite::ALL {
        let start = std::time::Instant::now();
        let (pass, summary) = match suite.run() {
            Ok(r) => (r.pass, r.summary),
            Err(e) => (false, format!("error: {e}")),
        };
        // Written to the process stdout so the lines show up without `--nocapture`.
        writeln!(
            std::io::stdout(),
            "criterion {:>2} [{}] {}: {} ({:.1}s)",
            suite.criterion(),
            suite.name(),
            if pass { "PASS" } else { "FAIL" },
            summary,
            start.elapsed().as_secs_f64()
        )
        .expect("stdout is writable");
        if !pass {
            failed.push(suite.criterion());
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
