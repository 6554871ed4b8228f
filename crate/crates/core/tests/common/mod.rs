//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

pub mod gradients;
pub mod isotropy;
pub mod losses;
