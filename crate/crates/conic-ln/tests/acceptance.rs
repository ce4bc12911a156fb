//! Runs the acceptance suite on the shipped hemisphere configuration, prints
//! one line per criterion and checks that a second run produces the same
//! artifacts byte for byte.

use conic_ln::harness::{parse_config, run_command, Command};
use std::process::ExitCode;

fn main() -> ExitCode {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/hemisphere_n3.json");
    let cfg = parse_config(&std::fs::read_to_string(path).expect("shipped config")).expect("valid config");
    let first = run_command(Command::Suite, &cfg, None);
    for line in &first.summary {
        println!("{line}");
    }
    let second = run_command(Command::Suite, &cfg, None);
    let repeatable = first.artifacts == second.artifacts;
    println!("{} repeated suite artifacts identical", if repeatable { "PASS" } else { "FAIL" });
    let rows = first.summary.iter().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).count();
    let ok = first.error.is_none() && second.error.is_none() && repeatable && rows == 12;
    println!("acceptance: {}", if ok { "ok" } else { "FAILED" });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
