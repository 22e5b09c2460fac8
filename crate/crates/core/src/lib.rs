pub mod atlas;
pub mod attention;
pub mod autodiff;
pub mod cohort;
pub mod error;
pub mod feature_net;
pub mod generator;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod sparse;
pub mod synth;
pub mod topology;

pub use error::{Error, Result};
