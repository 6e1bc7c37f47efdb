pub mod artifacts;
pub mod datagen;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod esper;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod returns;
pub mod rng;
pub mod trajectory;
