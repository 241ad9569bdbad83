//! Bookkeeping for the acceptance run: one PASS/FAIL line per criterion,
//! informational measurements, and a non-zero exit when anything failed.

use std::time::Instant;

pub struct Report {
    started: Instant,
    failed: Vec<String>,
    passed: usize,
}

impl Default for Report {
    fn default() -> Self {
        Self::new()
    }
}

impl Report {
    pub fn new() -> Self {
        Self {
            started: Instant::now(),
            failed: Vec::new(),
            passed: 0,
        }
    }

    /// Records one criterion and prints its verdict with the measured detail.
    pub fn check(&mut self, name: &str, ok: bool, detail: impl AsRef<str>) -> bool {
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("{verdict}  {name}: {}", detail.as_ref());
        if ok {
            self.passed += 1;
        } else {
            self.failed.push(name.to_string());
        }
        ok
    }

    /// A measurement that is reported but does not gate the run.
    pub fn info(&self, name: &str, detail: impl AsRef<str>) {
        println!("INFO  {name}: {}", detail.as_ref());
    }

    pub fn section(&self, title: &str) {
        println!("\n== {title} ({:.0}s elapsed)", self.started.elapsed().as_secs_f64());
    }

    pub fn failures(&self) -> &[String] {
        &self.failed
    }

    /// Prints the tally and exits non-zero when any criterion failed.
    pub fn finish(self) {
        let total = self.passed + self.failed.len();
        println!(
            "\nacceptance: {}/{total} criteria passed in {:.0}s",
            self.passed,
            self.started.elapsed().as_secs_f64()
        );
        if !self.failed.is_empty() {
            println!("failed: {}", self.failed.join(", "));
            std::process::exit(1);
        }
    }
}
