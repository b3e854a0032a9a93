//! Oracles shared by the integration suites and the acceptance run.
#![allow(dead_code, clippy::needless_range_loop)]

pub mod circuit;
pub mod grad;
