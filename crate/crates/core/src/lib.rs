pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod data_io;
pub mod discriminator;
pub mod embedder;
pub mod error;
pub mod generator;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod plot;
pub mod rng;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
