//! Numerical laboratory for weighted inequalities of Hardy–Littlewood type.

pub mod grid;
pub mod lorentz;
pub mod numeric;
pub mod operators;
pub mod weights;
pub mod sparse;
pub mod constants;
pub mod verify;
pub mod search;
pub mod cli;
