pub mod cli;
pub mod data;
pub mod eval;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod seed;
