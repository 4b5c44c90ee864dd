pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod model;
pub mod numerics;
pub mod seeding;
pub mod synth;
pub mod taskgen;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
