//! The embedding network: parameters, layers and checkpoints.

pub mod checkpoint;
mod network;
mod params;

pub use network::{
    aggregate_stages, asp_pool, block1d, block2d, downsample, embed, forward, init_params, Forward,
    StageOutput, ASP_EPS, LN_EPS,
};
pub use params::{is_buffer_name, Param, ParamStore, Session};
