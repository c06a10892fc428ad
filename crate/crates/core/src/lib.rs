//! Streamable 2D Gaussian video: bake dynamic splat sequences into
//! codec-friendly attribute planes, serve them, and play them back.

pub mod bake;
pub mod codec;
pub mod error;
pub mod io;
pub mod morton;
pub mod motion;
pub mod pack;
pub mod player;
pub mod quant;
pub mod rd;
pub mod server;
pub mod regularizers;
pub mod render;
pub mod splat;
pub mod synth;

pub use error::{Error, Result};
