pub mod tensor;
pub mod text;
pub mod metrics;
pub mod model;
pub mod train;
pub mod harness;
pub mod viz;
pub mod synth;
pub mod demo;
pub mod config;
