pub mod attention;
pub mod cli;
pub mod config;
pub mod data;
pub mod metrics;
pub mod model;
pub mod sampling;
pub mod tensor;
pub mod training;
