//! Oracles shared by the crate tests and the acceptance run.
#![allow(dead_code)]

pub mod admm;
pub mod kron;
pub mod riccati;
