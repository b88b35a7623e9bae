pub mod cell;
pub mod effective;
pub mod error;
pub mod grid;
pub mod ops;
pub mod saddle;
pub mod sparse;
pub mod tensor;
pub mod stokes;
pub mod estimates;
pub mod sweep;
pub mod config;
pub mod runner;
