//! Shared fixtures for the benchmarks.

use std::path::{Path, PathBuf};

use gridvolt::{parse_case, CaseFormat, GridCase};

pub fn case_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases").join(name)
}

pub fn load(name: &str) -> GridCase {
    parse_case(case_path(name), CaseFormat::from_path(Path::new(name))).expect("bundled case parses")
}

/// ieee14 with bus 6 driven to 1.30 pu, which pushes several buses over 1.15.
pub fn stressed14() -> GridCase {
    load("ieee14.m").with_setpoints(&[(6, 1.30)]).expect("bus 6 regulates")
}
