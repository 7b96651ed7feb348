pub mod cli;
pub mod dataio;
pub mod forest;
pub mod ica;
pub mod models;
pub mod nn;
pub mod partial;
pub mod pipeline;
pub mod seed;
pub mod types;
