pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod follower;
pub mod generator;
pub mod gradcheck;
pub mod graph;
pub mod landmarks;
pub mod lm;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod prompts;
pub mod stmt;
pub mod tensor;
pub mod trainer;
pub mod vocab;
pub mod world;

pub use error::{Error, Result};
