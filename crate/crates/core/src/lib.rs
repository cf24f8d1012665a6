pub mod analysis;
pub mod bias_probe;
pub mod checkpoint;
pub mod config;
pub mod discriminator;
pub mod ensemble;
pub mod envs;
pub mod error;
pub mod metrics;
pub mod ndmath;
pub mod replay;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
