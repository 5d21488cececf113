pub mod config;
pub mod cost;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod kv;
pub mod model;
pub mod objective;
pub mod plan;
pub mod train;

pub use config::{ModelConfig, StageSpec};
pub use error::{Error, Result};
pub use plan::ShapePlan;
